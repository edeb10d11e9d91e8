//! Run configuration, run-directory persistence and stage orchestration.

pub mod config;
pub mod stages;
pub mod state;

pub use config::{AugmentConfig, DualStageConfig, EvalConfig, InferenceConfig, RunConfig};
pub use stages::{now_seconds, EvalSummary, NamedReport, Run};
pub use state::{RunDir, RunLock, RunState, Stage};

use std::path::{Path, PathBuf};

use crate::error::{IoContext, Result};

/// Environment variable naming the directory that holds all runs.
pub const HOME_ENV: &str = "UVAP_HOME";

pub fn runs_root() -> PathBuf {
    std::env::var_os(HOME_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Lists `(id, stage)` for every run directory under `root`, sorted by id.
pub fn list_runs(root: &Path) -> Result<Vec<(String, Stage)>> {
    let mut out = Vec::new();
    if !root.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(root).at(root)? {
        let entry = entry.at(root)?;
        let dir = RunDir::new(entry.path());
        if dir.exists() {
            out.push((dir.id(), dir.load_state()?.stage));
        }
    }
    out.sort();
    Ok(out)
}
