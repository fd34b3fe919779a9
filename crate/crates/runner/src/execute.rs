//! Running the cells of a plan on a bounded worker pool.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use overparam_core::landscape::{probe, ProbeSettings};
use overparam_core::nn::ModelState;
use overparam_core::ntk::{kernel_drift, relative_movement};
use overparam_core::numerics::norm2;
use overparam_core::pruning::lottery_from_baseline;
use overparam_core::train::{train, TrainOptions};

use crate::data::PreparedData;
use crate::plan::{CellConfig, ExperimentPlan};
use crate::record::{fingerprint, Movement, RunRecord, Store, SCHEMA_VERSION};
use crate::RunnerError;

const HESSIAN_LABEL: u64 = 1;
const KERNEL_LABEL: u64 = 2;

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub data_root: PathBuf,
    pub jobs: usize,
    /// Recompute cells that already have a record.
    pub force: bool,
}

#[derive(Clone, Copy, Debug)]
pub enum Progress<'a> {
    Skipped { cell: &'a CellConfig },
    Started { cell: &'a CellConfig },
    Finished { cell: &'a CellConfig, seconds: f64, diverged: bool },
    Failed { cell: &'a CellConfig, error: &'a str },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub completed: Vec<String>,
    pub skipped: Vec<String>,
    /// `(cell id, message)`.
    pub failed: Vec<(String, String)>,
}

impl RunReport {
    pub fn ok(&self) -> bool {
        self.failed.is_empty()
    }
}

fn cell_err(cell: &CellConfig, e: impl std::fmt::Display) -> RunnerError {
    RunnerError::Cell { label: cell.label.clone(), seed: cell.seed(), message: e.to_string() }
}

/// Train one cell and attach the measurements its suite asks for.
pub fn run_cell(cell: &CellConfig, data: &PreparedData) -> Result<RunRecord, RunnerError> {
    let start = Instant::now();
    let train_set = data.train_for(cell);
    let test_set = Some(&data.test);
    let out = train::<f32>(&cell.train, train_set, test_set, TrainOptions::default()).map_err(|e| cell_err(cell, e))?;
    let healthy = out.divergence.is_none();

    let landscape = match &cell.landscape {
        Some(l) if healthy => {
            let hessian = data.shared_subset(train_set, l.hessian_subset, HESSIAN_LABEL);
            let settings = ProbeSettings {
                iterations: l.iterations,
                sigmas: l.sigmas.clone(),
                samples_per_sigma: l.samples_per_sigma,
                seed: cell.seed(),
            };
            Some(probe(&out.model, &hessian, train_set, &settings).map_err(|e| cell_err(cell, e))?)
        }
        _ => None,
    };

    let movement = match &cell.ntk {
        Some(n) if healthy => {
            let delta_rel = relative_movement(&out.theta0, out.model.theta()).map_err(|e| cell_err(cell, e))?;
            let kernel_drift = if n.kernel_probes > 0 {
                let probes = data.shared_subset(train_set, n.kernel_probes, KERNEL_LABEL);
                let m0 = ModelState::from_parts(cell.train.model.clone(), out.theta0.clone(), None)
                    .map_err(|e| cell_err(cell, e))?;
                Some(kernel_drift(&m0, &out.model, &probes).map_err(|e| cell_err(cell, e))?)
            } else {
                None
            };
            Some(Movement { theta0_norm: norm2(&out.theta0), delta_rel, kernel_drift, kernel_probes: n.kernel_probes })
        }
        _ => None,
    };

    let lottery = match &cell.lottery {
        Some(settings) if healthy => Some(
            lottery_from_baseline(&cell.train, settings, &out, train_set, test_set).map_err(|e| cell_err(cell, e))?,
        ),
        _ => None,
    };

    Ok(RunRecord {
        schema: SCHEMA_VERSION,
        cell_id: cell.id(),
        fingerprint: fingerprint(cell),
        config: cell.clone(),
        params: out.model.num_params(),
        train_size: train_set.len(),
        history: out.history,
        final_train: out.final_train,
        final_test: out.final_test,
        divergence: out.divergence,
        landscape,
        movement,
        lottery,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Run every missing cell of `plan`. Existing records are left alone
/// unless `force` is set. The dataset is loaded before any cell starts, so
/// a missing dataset leaves the store untouched.
pub fn run_plan(
    plan: &ExperimentPlan,
    opts: &RunOptions,
    progress: &(dyn Fn(Progress<'_>) + Sync),
) -> Result<RunReport, RunnerError> {
    plan.validate()?;
    let store = Store::new(&opts.out);
    let cells = plan.cells();
    let mut report = RunReport::default();
    let mut pending = Vec::new();
    for cell in &cells {
        if !opts.force && store.contains(&cell.id()) {
            store.get(&cell.id())?;
            report.skipped.push(cell.id());
            progress(Progress::Skipped { cell });
        } else {
            pending.push(cell);
        }
    }
    let owned: Vec<CellConfig> = pending.iter().map(|c| (*c).clone()).collect();
    let Some(data) = PreparedData::for_cells(&owned, &opts.data_root)? else {
        return Ok(report);
    };
    std::fs::create_dir_all(&opts.out).map_err(|e| RunnerError::io(&opts.out, e))?;
    let plan_path = opts.out.join("plan.toml");
    std::fs::write(&plan_path, plan.to_toml()).map_err(|e| RunnerError::io(&plan_path, e))?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<String, String>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..opts.jobs.clamp(1, pending.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = pending.get(i) else { break };
                progress(Progress::Started { cell });
                let outcome = run_cell(cell, &data).and_then(|r| {
                    store.put(&r)?;
                    Ok(r)
                });
                let entry = match outcome {
                    Ok(r) => {
                        progress(Progress::Finished { cell, seconds: r.wall_seconds, diverged: r.divergence.is_some() });
                        Ok(r.cell_id)
                    }
                    Err(e) => {
                        let msg = e.to_string();
                        progress(Progress::Failed { cell, error: &msg });
                        Err(msg)
                    }
                };
                results.lock().expect("no worker panics while holding the lock").push((i, entry));
            });
        }
    });
    let mut results = results.into_inner().expect("workers joined");
    results.sort_by_key(|r| r.0);
    for (i, r) in results {
        match r {
            Ok(id) => report.completed.push(id),
            Err(msg) => report.failed.push((pending[i].id(), msg)),
        }
    }
    Ok(report)
}
