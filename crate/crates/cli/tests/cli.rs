use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uvap_core::runhub::{Run, RunConfig, Stage};

fn uvap(home: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uvap"))
        .args(args)
        .env("UVAP_HOME", home)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn smoke_config(dir: &Path) -> PathBuf {
    let path = dir.join("smoke.json");
    std::fs::write(&path, RunConfig::smoke().to_json().unwrap()).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn usage_errors_exit_with_two() {
    let home = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["synth"], &["synth", "--run", "a", "--bogus"], &[]] {
        let o = uvap(home.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn stage_gate_exits_with_three() {
    let home = tempfile::tempdir().unwrap();
    let o = uvap(home.path(), &["dual-train", "--run", "fresh"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr(&o).trim(), "error: requires stage: curated");
    let o = uvap(home.path(), &["eval", "--run", "fresh"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("requires stage: dual_trained"));
}

#[test]
fn bad_config_is_a_one_line_failure() {
    let home = tempfile::tempdir().unwrap();
    let cfg = home.path().join("bad.json");
    std::fs::write(&cfg, r#"{"augment": {"fraction": 0.0}}"#).unwrap();
    let o = uvap(home.path(), &["synth", "--run", "r", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).lines().count(), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("fraction"));
}

#[test]
fn seed_override_is_recorded() {
    let home = tempfile::tempdir().unwrap();
    let cfg = smoke_config(home.path());
    let o = uvap(home.path(), &["synth", "--run", "r", "--config", cfg.to_str().unwrap(), "--seed-override", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = Run::open(&home.path().join("r")).unwrap();
    assert_eq!(run.config.seed, 7);
    assert_eq!(run.config.base.steps, RunConfig::smoke().base.steps);
}

#[test]
fn pipeline_sample_sweep_and_invalidation() {
    let home = tempfile::tempdir().unwrap();
    let cfg = smoke_config(home.path());
    let cfg = cfg.to_str().unwrap();
    let o = uvap(home.path(), &["pipeline", "--run", "r1", "--config", cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run_dir = home.path().join("r1");
    let run = Run::open(&run_dir).unwrap();
    assert_eq!(run.state.stage, Stage::Evaluated);
    for rel in ["config.json", "checkpoints/base.uvap", "checkpoints/dual.uvap", "reports/latest.json", "reports/summary.md"] {
        assert!(run_dir.join(rel).is_file(), "{rel}");
    }

    let o = uvap(
        home.path(),
        &["sample", "--run", "r1", "--prompt", "a photo of a sks color circle", "--lambda", "0.3", "--count", "3"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let pngs = std::fs::read_dir(run_dir.join("samples/cli"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 3);

    let o = uvap(home.path(), &["sweep", "--run", "r1", "--lambdas", "0,0.3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);

    let mut changed = RunConfig::smoke();
    changed.dual.train.steps += 1;
    let changed_path = home.path().join("changed.json");
    std::fs::write(&changed_path, changed.to_json().unwrap()).unwrap();
    let o = uvap(home.path(), &["eval", "--run", "r1", "--config", changed_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(Run::open(&run_dir).unwrap().state.stage, Stage::Curated);
}

#[test]
fn pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for home in [a.path(), b.path()] {
        let cfg = smoke_config(home);
        let o = uvap(home, &["pipeline", "--run", "r", "--config", cfg.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let fa = files(&a.path().join("r"));
    let fb = files(&b.path().join("r"));
    assert_eq!(fa.iter().map(|f| &f.0).collect::<Vec<_>>(), fb.iter().map(|f| &f.0).collect::<Vec<_>>());
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        assert!(x == y, "{} differs", name.display());
    }
}

#[test]
fn serve_holds_the_lock_until_interrupted() {
    let home = tempfile::tempdir().unwrap();
    let cfg = smoke_config(home.path());
    let cfg = cfg.to_str().unwrap();
    for stage in ["train-base", "prelearn", "augment"] {
        let o = uvap(home.path(), &[stage, "--run", "r1", "--config", cfg]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let bind = format!("127.0.0.1:{port}");
    let mut server = Command::new(env!("CARGO_BIN_EXE_uvap"))
        .args(["serve", "--run", "r1", "--bind", &bind])
        .env("UVAP_HOME", home.path())
        .spawn()
        .unwrap();
    let url = format!("http://{bind}/api/v1/runs");
    let mut body = None;
    for _ in 0..100 {
        if let Ok(mut resp) = ureq::get(&url).call() {
            body = Some(resp.body_mut().read_json::<serde_json::Value>().unwrap());
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    let body = body.expect("service did not come up");
    assert_eq!(body, serde_json::json!([{ "id": "r1", "stage": "candidates_ready" }]));

    let o = uvap(home.path(), &["curate-auto", "--run", "r1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("locked"), "{}", stderr(&o));

    Command::new("kill").args(["-INT", &server.id().to_string()]).status().unwrap();
    assert!(server.wait().unwrap().success());
    assert!(!home.path().join("r1/service.lock").exists());
    let o = uvap(home.path(), &["curate-auto", "--run", "r1"]);
    assert!(o.status.success(), "{}", stderr(&o));
}
