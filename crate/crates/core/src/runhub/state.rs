use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Created,
    BaseTrained,
    Prelearned,
    CandidatesReady,
    Curated,
    DualTrained,
    Evaluated,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Created,
        Stage::BaseTrained,
        Stage::Prelearned,
        Stage::CandidatesReady,
        Stage::Curated,
        Stage::DualTrained,
        Stage::Evaluated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Created => "created",
            Stage::BaseTrained => "base_trained",
            Stage::Prelearned => "prelearned",
            Stage::CandidatesReady => "candidates_ready",
            Stage::Curated => "curated",
            Stage::DualTrained => "dual_trained",
            Stage::Evaluated => "evaluated",
        }
    }

    pub fn previous(self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|&s| s == self)?;
        i.checked_sub(1).map(|j| Stage::ALL[j])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub stage: Stage,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub stage: Stage,
    pub config_hash: String,
    /// Artifact name to path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
    pub history: Vec<Transition>,
}

impl RunState {
    pub fn new(run_id: &str, config_hash: &str) -> Self {
        Self {
            run_id: run_id.into(),
            stage: Stage::Created,
            config_hash: config_hash.into(),
            artifacts: BTreeMap::new(),
            history: vec![Transition {
                stage: Stage::Created,
                config_hash: config_hash.into(),
            }],
        }
    }

    pub fn require(&self, stage: Stage) -> Result<()> {
        if self.stage >= stage {
            Ok(())
        } else {
            Err(Error::Stage(stage.name().into()))
        }
    }

    /// Records reaching `stage`. Re-running a stage drops every later stage.
    pub fn advance(&mut self, stage: Stage, config_hash: &str) {
        self.stage = stage;
        self.config_hash = config_hash.into();
        self.history.push(Transition {
            stage,
            config_hash: config_hash.into(),
        });
    }

    /// Falls back to the stage before `stage`.
    pub fn invalidate_from(&mut self, stage: Stage, config_hash: &str) {
        if self.stage >= stage {
            let back = stage.previous().unwrap_or(Stage::Created);
            self.advance(back, config_hash);
        }
    }
}

pub const CONFIG_FILE: &str = "config.json";
pub const STATE_FILE: &str = "state.json";
pub const LOCK_FILE: &str = "service.lock";
pub const DECISIONS_FILE: &str = "decisions.jsonl";

/// Paths inside one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn id(&self) -> String {
        self.root
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }
    pub fn state(&self) -> PathBuf {
        self.root.join(STATE_FILE)
    }
    pub fn lock(&self) -> PathBuf {
        self.root.join(LOCK_FILE)
    }
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn refs(&self) -> PathBuf {
        self.root.join("refs")
    }
    pub fn priors(&self) -> PathBuf {
        self.root.join("priors")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.checkpoints().join(format!("{name}.uvap"))
    }
    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }
    pub fn candidates(&self) -> PathBuf {
        self.root.join("candidates")
    }
    pub fn decisions(&self) -> PathBuf {
        self.root.join(DECISIONS_FILE)
    }
    pub fn curated(&self) -> PathBuf {
        self.root.join("curated")
    }
    pub fn samples(&self) -> PathBuf {
        self.root.join("samples")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn exists(&self) -> bool {
        self.state().is_file()
    }

    pub fn load_state(&self) -> Result<RunState> {
        let path = self.state();
        let bytes = fs::read(&path).at(&path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save_state(&self, state: &RunState) -> Result<()> {
        write_json(&self.state(), state)
    }

    /// True while a live process holds the lock file. Where `/proc` is
    /// available, a lock left by a dead process is removed instead.
    pub fn is_locked(&self) -> bool {
        let path = self.lock();
        let Ok(text) = fs::read_to_string(&path) else {
            return path.exists();
        };
        let proc_root = Path::new("/proc");
        match text.trim().parse::<u32>() {
            Ok(pid) if proc_root.is_dir() && !proc_root.join(pid.to_string()).exists() => {
                log::warn!("removing stale lock left by process {pid}");
                fs::remove_file(&path).is_err()
            }
            _ => true,
        }
    }

    /// Fails when a service holds the run.
    pub fn ensure_unlocked(&self) -> Result<()> {
        if self.is_locked() {
            Err(Error::Locked(self.root.clone()))
        } else {
            Ok(())
        }
    }

    pub fn acquire_lock(&self) -> Result<RunLock> {
        let path = self.lock();
        self.is_locked();
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(self.root.clone())),
            Err(e) => Err(e).at(&path),
        }
    }
}

/// Removes the lock file when dropped.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).at(path)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).at(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}
