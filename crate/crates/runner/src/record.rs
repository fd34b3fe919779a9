//! Run records and the append-only directory store that holds them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use overparam_core::landscape::ProbeReport;
use overparam_core::nn::Evaluation;
use overparam_core::pruning::LotteryRecord;
use overparam_core::train::{Divergence, EpochMetrics};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::plan::CellConfig;
use crate::RunnerError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Movement {
    pub theta0_norm: f64,
    #[serde(with = "overparam_core::numerics::float_serde")]
    pub delta_rel: f64,
    pub kernel_drift: Option<f64>,
    pub kernel_probes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub schema: u32,
    pub cell_id: String,
    /// Hash of the code version and the resolved config.
    pub fingerprint: String,
    pub config: CellConfig,
    pub params: usize,
    pub train_size: usize,
    pub history: Vec<EpochMetrics>,
    pub final_train: Evaluation,
    pub final_test: Option<Evaluation>,
    pub divergence: Option<Divergence>,
    pub landscape: Option<ProbeReport>,
    pub movement: Option<Movement>,
    pub lottery: Option<LotteryRecord>,
    /// Not part of the reproducible content.
    pub wall_seconds: f64,
}

pub fn fingerprint(config: &CellConfig) -> String {
    let mut h = Sha256::new();
    h.update(concat!(env!("CARGO_PKG_NAME"), "/", env!("CARGO_PKG_VERSION")).as_bytes());
    h.update(serde_json::to_vec(config).expect("cell config serializes"));
    hex::encode(&h.finalize()[..16])
}

impl RunRecord {
    /// The record as JSON text with timing fields zeroed, for comparisons.
    pub fn reproducible_json(&self) -> String {
        let mut r = self.clone();
        r.wall_seconds = 0.0;
        serde_json::to_string_pretty(&r).expect("record serializes")
    }

    /// The stored id must match the embedded config.
    pub fn check(&self) -> Result<(), String> {
        if self.schema != SCHEMA_VERSION {
            return Err(format!("schema {} (expected {SCHEMA_VERSION})", self.schema));
        }
        if self.config.id() != self.cell_id {
            return Err(format!("cell id {} does not match its config ({})", self.cell_id, self.config.id()));
        }
        Ok(())
    }
}

/// `<root>/records/<cell-id>.json`, written once per cell.
#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records_dir(&self) -> PathBuf {
        self.root.join("records")
    }

    pub fn path_for(&self, cell_id: &str) -> PathBuf {
        self.records_dir().join(format!("{cell_id}.json"))
    }

    pub fn contains(&self, cell_id: &str) -> bool {
        self.path_for(cell_id).is_file()
    }

    /// Write to a temporary sibling and rename, so a record is either
    /// complete or absent.
    pub fn put(&self, record: &RunRecord) -> Result<PathBuf, RunnerError> {
        let dir = self.records_dir();
        fs::create_dir_all(&dir).map_err(|e| RunnerError::io(&dir, e))?;
        let path = self.path_for(&record.cell_id);
        let tmp = dir.join(format!(".{}.tmp", record.cell_id));
        let text = serde_json::to_string_pretty(record).expect("record serializes");
        let mut f = fs::File::create(&tmp).map_err(|e| RunnerError::io(&tmp, e))?;
        f.write_all(text.as_bytes()).and_then(|_| f.write_all(b"\n")).and_then(|_| f.sync_all())
            .map_err(|e| RunnerError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| RunnerError::io(&path, e))?;
        Ok(path)
    }

    pub fn get(&self, cell_id: &str) -> Result<RunRecord, RunnerError> {
        read_record(&self.path_for(cell_id))
    }

    /// Every record in the store, sorted by grid index then seed.
    pub fn load_all(&self) -> Result<Vec<RunRecord>, RunnerError> {
        let dir = self.records_dir();
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| RunnerError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut records = paths.iter().map(|p| read_record(p)).collect::<Result<Vec<_>, _>>()?;
        records.sort_by(|a, b| {
            (a.config.suite, a.config.grid_index, a.config.seed()).cmp(&(b.config.suite, b.config.grid_index, b.config.seed()))
        });
        Ok(records)
    }
}

pub fn read_record(path: &Path) -> Result<RunRecord, RunnerError> {
    let text = fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
    let record: RunRecord = serde_json::from_str(&text)
        .map_err(|e| RunnerError::Record { path: path.to_path_buf(), message: e.to_string() })?;
    record.check().map_err(|message| RunnerError::Record { path: path.to_path_buf(), message })?;
    Ok(record)
}
