//! Experiment plans, a worker pool that runs their cells, an append-only
//! store of run records, and seed-aggregated roll-ups.

use std::path::{Path, PathBuf};

pub mod analyze;
pub mod checks;
pub mod data;
pub mod execute;
pub mod plan;
pub mod record;

pub use analyze::{analyze_store, summarize, Summary};
pub use execute::{run_cell, run_plan, Progress, RunOptions, RunReport};
pub use plan::{CellConfig, DatasetKind, ExperimentPlan, Suite};
pub use record::{RunRecord, Store};

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("dataset under {root}: {source}")]
    Data { root: PathBuf, source: overparam_core::data::DataError },
    #[error("malformed record {path}: {message}")]
    Record { path: PathBuf, message: String },
    #[error("{label} seed {seed}: {message}")]
    Cell { label: String, seed: u64, message: String },
}

impl RunnerError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        RunnerError::Io { path: path.to_path_buf(), source }
    }
}

/// Read and validate a plan file.
pub fn load_plan(path: &Path) -> Result<ExperimentPlan, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
    ExperimentPlan::from_toml(&text)
}
