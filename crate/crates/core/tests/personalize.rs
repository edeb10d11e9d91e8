mod common;

use uvap_core::par::Exec;
use uvap_core::personalize::{
    dual_train, dual_train_multi, make_prior_set, prelearn, DualSets, DualTrainConfig, PrelearnConfig, TrainMode,
    TrainingPair,
};
use uvap_core::synthdata::{ColorScheme, Image, Pattern, Shape};
use uvap_core::toydiff::train::NoLog;
use uvap_core::toydiff::{Checkpoint, LogRecord, Overrides, SamplerConfig};
use uvap_core::Error;

use common::{reference_images, render, tiny_checkpoint};

fn sampler() -> SamplerConfig {
    SamplerConfig {
        steps: 5,
        guidance: 2.0,
        clip_denoised: true,
    }
}

fn prelearn_cfg(steps: usize, alpha: f64) -> PrelearnConfig {
    PrelearnConfig {
        steps,
        alpha,
        batch_size: 2,
        n_prior: 3,
        lr_multiplier: 200.0,
        ..PrelearnConfig::default()
    }
}

fn dual_cfg(steps: usize, mode: TrainMode) -> DualTrainConfig {
    DualTrainConfig {
        steps,
        mode,
        batch_size: 2,
        lr_multiplier: 200.0,
        ..DualTrainConfig::default()
    }
}

fn pairs(token: &str, images: &[(Shape, ColorScheme, Pattern)]) -> Vec<TrainingPair> {
    images
        .iter()
        .enumerate()
        .map(|(i, &(s, c, p))| TrainingPair {
            caption: format!("a photo of a {token} color {}", s.word()),
            image: render(s, c, p, i as u64),
        })
        .collect()
}

fn plus() -> Vec<TrainingPair> {
    pairs(
        "tgt",
        &[
            (Shape::Circle, ColorScheme::RedBlue, Pattern::Solid),
            (Shape::Square, ColorScheme::RedBlue, Pattern::Dots),
        ],
    )
}

fn minus() -> Vec<TrainingPair> {
    vec![
        TrainingPair {
            caption: "a photo of a green ngt star".into(),
            image: render(Shape::Star, ColorScheme::Green, Pattern::HStripes, 0),
        },
        TrainingPair {
            caption: "a photo of a blue ngt star".into(),
            image: render(Shape::Star, ColorScheme::Blue, Pattern::HStripes, 1),
        },
    ]
}

fn bytes(c: &Checkpoint) -> Vec<u8> {
    c.to_bytes().unwrap()
}

#[test]
fn prior_set_is_deterministic_and_may_be_empty() {
    let base = tiny_checkpoint(1);
    let a = make_prior_set(&base, "star", 4, 7, &sampler(), Exec::Parallel).unwrap();
    assert_eq!(a.len(), 4);
    assert_eq!(a, make_prior_set(&base, "star", 4, 7, &sampler(), Exec::Sequential).unwrap());
    assert!(make_prior_set(&base, "star", 0, 7, &sampler(), Exec::Parallel).unwrap().is_empty());
    assert!(matches!(
        make_prior_set(&base, "blob", 1, 7, &sampler(), Exec::Parallel),
        Err(Error::Tokenization { .. })
    ));
}

#[test]
fn zero_alpha_matches_training_on_references_alone() {
    let base = tiny_checkpoint(2);
    let refs = reference_images(3);
    let priors = make_prior_set(&base, "star", 3, 1, &sampler(), Exec::Parallel).unwrap();
    let with = prelearn(&base, &refs, &priors, &prelearn_cfg(6, 0.0), 5, &mut NoLog, Exec::Parallel).unwrap();
    let without = prelearn(&base, &refs, &[], &prelearn_cfg(6, 0.0), 5, &mut NoLog, Exec::Parallel).unwrap();
    assert_eq!(with.model.params, without.model.params);
}

#[test]
fn zero_steps_leave_the_model_unchanged() {
    let base = tiny_checkpoint(3);
    let refs = reference_images(2);
    let g0 = prelearn(&base, &refs, &[], &prelearn_cfg(0, 1.0), 1, &mut NoLog, Exec::Parallel).unwrap();
    assert_eq!(g0.model.params, base.model.params);
    let dual = dual_train(&base, &plus(), &minus(), &dual_cfg(0, TrainMode::Full), 1, &mut NoLog, Exec::Parallel)
        .unwrap();
    assert_eq!(dual.model.params, base.model.params);
}

#[test]
fn logged_total_is_recon_plus_weighted_prior() {
    let base = tiny_checkpoint(4);
    let refs = reference_images(2);
    let priors = make_prior_set(&base, "star", 2, 3, &sampler(), Exec::Parallel).unwrap();
    let mut log: Vec<LogRecord> = Vec::new();
    let alpha = 0.7;
    prelearn(&base, &refs, &priors, &prelearn_cfg(5, alpha), 9, &mut log, Exec::Parallel).unwrap();
    assert_eq!(log.len(), 5);
    for r in &log {
        let want = r.loss_recon.unwrap() + alpha * r.loss_prior_or_minus.unwrap();
        assert!((r.loss_total - want).abs() < 1e-6, "step {}", r.step);
        assert_eq!(r.seed, 9);
    }
}

#[test]
fn prelearn_checks_inputs() {
    let base = tiny_checkpoint(5);
    let cfg = prelearn_cfg(1, 1.0);
    assert!(matches!(
        prelearn(&base, &[], &[], &cfg, 0, &mut NoLog, Exec::Parallel),
        Err(Error::EmptySet(_))
    ));
    let big = Image::filled(32, [0.5, 0.5, 0.5]);
    assert!(matches!(
        prelearn(&base, &[big], &[], &cfg, 0, &mut NoLog, Exec::Parallel),
        Err(Error::Shape(_))
    ));
    let not_placeholder = PrelearnConfig {
        identifier: "red".into(),
        ..cfg
    };
    assert!(matches!(
        prelearn(&base, &reference_images(1), &[], &not_placeholder, 0, &mut NoLog, Exec::Parallel),
        Err(Error::Config(_))
    ));
}

#[test]
fn prelearn_and_dual_training_are_byte_reproducible() {
    let base = tiny_checkpoint(6);
    let refs = reference_images(2);
    let priors = make_prior_set(&base, "star", 2, 3, &sampler(), Exec::Parallel).unwrap();
    let g0 = |exec| prelearn(&base, &refs, &priors, &prelearn_cfg(4, 1.0), 2, &mut NoLog, exec).unwrap();
    let a = g0(Exec::Parallel);
    assert_eq!(bytes(&a), bytes(&g0(Exec::Sequential)));
    let dual = |exec| dual_train(&a, &plus(), &minus(), &dual_cfg(4, TrainMode::Full), 8, &mut NoLog, exec).unwrap();
    assert_eq!(bytes(&dual(Exec::Parallel)), bytes(&dual(Exec::Sequential)));
}

#[test]
fn embedding_only_touches_just_the_two_rows() {
    let g0 = tiny_checkpoint(7);
    let out = dual_train(
        &g0,
        &plus(),
        &minus(),
        &dual_cfg(6, TrainMode::EmbeddingOnly),
        3,
        &mut NoLog,
        Exec::Parallel,
    )
    .unwrap();
    let model = &g0.model;
    let table = model.table_index();
    let d = model.config.d_tok;
    let trained: Vec<usize> = ["tgt", "ngt"].iter().map(|t| model.vocab.id(t).unwrap()).collect();
    for (i, (a, b)) in g0.model.params.tensors.iter().zip(&out.model.params.tensors).enumerate() {
        if i != table {
            assert_eq!(a.data, b.data, "tensor {}", g0.model.params.names[i]);
            continue;
        }
        for row in 0..model.vocab.len() {
            let (ra, rb) = (&a.data[row * d..(row + 1) * d], &b.data[row * d..(row + 1) * d]);
            if trained.contains(&row) {
                assert_ne!(ra, rb, "row {} did not train", model.vocab.tokens[row]);
            } else {
                let same = ra.iter().zip(rb).all(|(x, y)| x.to_bits() == y.to_bits());
                assert!(same, "row {} moved", model.vocab.tokens[row]);
            }
        }
    }
}

#[test]
fn embedding_only_leaves_other_prompts_encoded_identically() {
    let g0 = tiny_checkpoint(8);
    let out = dual_train(
        &g0,
        &plus(),
        &minus(),
        &dual_cfg(6, TrainMode::EmbeddingOnly),
        3,
        &mut NoLog,
        Exec::Parallel,
    )
    .unwrap();
    let none = Overrides::new();
    for prompt in [
        "a photo of a red star",
        "a photo of a sks color circle",
        "a photo of a tgt1 ngt2 ring",
        "<null>",
    ] {
        assert_eq!(
            g0.model.encode_text(prompt, &none).unwrap(),
            out.model.encode_text(prompt, &none).unwrap(),
            "{prompt}"
        );
    }
    assert_ne!(
        g0.model.encode_text("a photo of a tgt color circle", &none).unwrap(),
        out.model.encode_text("a photo of a tgt color circle", &none).unwrap()
    );
}

#[test]
fn full_mode_changes_the_denoiser() {
    let g0 = tiny_checkpoint(9);
    let out = dual_train(&g0, &plus(), &minus(), &dual_cfg(2, TrainMode::Full), 3, &mut NoLog, Exec::Parallel).unwrap();
    let changed = g0
        .model
        .params
        .tensors
        .iter()
        .zip(&out.model.params.tensors)
        .filter(|(a, b)| a.data != b.data)
        .count();
    assert!(changed > g0.model.params.tensors.len() / 2, "{changed} tensors changed");
}

#[test]
fn caption_without_identifier_is_named() {
    let g0 = tiny_checkpoint(10);
    let mut bad = minus();
    bad[1].caption = "a photo of a blue star".into();
    match dual_train(&g0, &plus(), &bad, &dual_cfg(1, TrainMode::Full), 0, &mut NoLog, Exec::Parallel) {
        Err(Error::Validation(msg)) => assert!(msg.contains("minus sample 1") && msg.contains("ngt"), "{msg}"),
        other => panic!("expected validation error, got {other:?}"),
    }
    assert!(matches!(
        dual_train(&g0, &[], &minus(), &dual_cfg(1, TrainMode::Full), 0, &mut NoLog, Exec::Parallel),
        Err(Error::EmptySet(_))
    ));
}

#[test]
fn interleave_alternates_sets() {
    let g0 = tiny_checkpoint(11);
    let mut log: Vec<LogRecord> = Vec::new();
    let cfg = DualTrainConfig {
        ratio: [2, 1],
        ..dual_cfg(6, TrainMode::EmbeddingOnly)
    };
    dual_train(&g0, &plus(), &minus(), &cfg, 0, &mut log, Exec::Parallel).unwrap();
    let sides: Vec<bool> = log.iter().map(|r| r.loss_recon.is_some()).collect();
    assert_eq!(sides, [true, true, false, true, true, false]);
}

#[test]
fn two_pairs_train_their_own_rows() {
    let g0 = tiny_checkpoint(12);
    let retag = |ps: Vec<TrainingPair>, from: &str, to: &str| -> Vec<TrainingPair> {
        ps.into_iter()
            .map(|p| TrainingPair {
                caption: p.caption.replace(from, to),
                image: p.image,
            })
            .collect()
    };
    let (p1, m1) = (retag(plus(), "tgt", "tgt1"), retag(minus(), "ngt", "ngt1"));
    let (p2, m2) = (retag(plus(), "tgt", "tgt2"), retag(minus(), "ngt", "ngt2"));
    let tasks = [
        DualSets {
            tgt: "tgt1",
            ngt: "ngt1",
            plus: &p1,
            minus: &m1,
        },
        DualSets {
            tgt: "tgt2",
            ngt: "ngt2",
            plus: &p2,
            minus: &m2,
        },
    ];
    let out = dual_train_multi(&g0, &tasks, &dual_cfg(8, TrainMode::EmbeddingOnly), 1, &mut NoLog, Exec::Parallel)
        .unwrap();
    for tok in ["tgt1", "ngt1", "tgt2", "ngt2"] {
        assert_ne!(g0.model.token_vector(tok).unwrap(), out.model.token_vector(tok).unwrap(), "{tok}");
    }
    for tok in ["tgt", "ngt", "sks"] {
        assert_eq!(g0.model.token_vector(tok).unwrap(), out.model.token_vector(tok).unwrap(), "{tok}");
    }
    let overlapping = [tasks[0], DualSets { ngt: "ngt1", ..tasks[1] }];
    assert!(matches!(
        dual_train_multi(&g0, &overlapping, &dual_cfg(1, TrainMode::Full), 1, &mut NoLog, Exec::Parallel),
        Err(Error::Validation(_))
    ));
}
