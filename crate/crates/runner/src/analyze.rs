//! Seed-aggregated summaries of stored records and their CSV roll-ups.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use overparam_core::ntk::loglog_slope;
use overparam_core::numerics::{streams, RngStream};
use overparam_core::optim::Algorithm;
use overparam_core::pruning::{self, SweepRow};
use overparam_core::stats::{
    bootstrap_ci, generalization_gap, interpolation_threshold, welch_t, MeanStd, Threshold, WelchResult,
    BOOTSTRAP_ITERATIONS,
};
use serde::{Deserialize, Serialize};

use crate::plan::Suite;
use crate::record::{RunRecord, Store};
use crate::RunnerError;

/// One grid point aggregated over seeds. Accuracies are in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub grid_index: usize,
    pub label: String,
    pub width: usize,
    pub params: usize,
    pub train_size: usize,
    pub algorithm: Algorithm,
    pub batch_size: usize,
    pub base_lr: f64,
    pub seeds: Vec<u64>,
    pub diverged: usize,
    pub train_acc: MeanStd,
    pub test_acc: MeanStd,
    pub test_ci95: Option<(f64, f64)>,
    pub gen_gap: MeanStd,
    pub lambda_max: Option<MeanStd>,
    /// `(σ, mean absolute loss increase)` across seeds.
    pub loss_increase: Vec<(f64, MeanStd)>,
    pub delta_rel: Option<MeanStd>,
    pub kernel_drift: Option<MeanStd>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub welch: Option<WelchResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LotteryRow {
    pub width: usize,
    pub row: SweepRow,
    /// Ticket against control test accuracy across seeds.
    pub welch: Option<WelchResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub suite: Suite,
    pub groups: Vec<GroupRow>,
    pub threshold: Option<Threshold>,
    /// Smallest against largest SGD batch size, on test accuracy.
    pub batch_comparison: Option<Comparison>,
    pub movement_slope: Option<f64>,
    pub lottery: Vec<LotteryRow>,
}

fn pct(v: f64) -> f64 {
    100.0 * v
}

fn opt_summary(values: Vec<f64>) -> Option<MeanStd> {
    (!values.is_empty()).then(|| MeanStd::of(&values))
}

fn group_row(records: &[&RunRecord]) -> GroupRow {
    let first = records[0];
    let ok: Vec<&&RunRecord> = records.iter().filter(|r| r.divergence.is_none()).collect();
    let train: Vec<f64> = records.iter().map(|r| pct(r.final_train.accuracy)).collect();
    let test: Vec<f64> = records.iter().filter_map(|r| r.final_test.map(|e| pct(e.accuracy))).collect();
    let gaps: Vec<f64> = records
        .iter()
        .filter_map(|r| r.final_test.map(|t| generalization_gap(r.final_train.accuracy, t.accuracy)))
        .collect();
    let test_ci95 = (test.len() >= 2)
        .then(|| {
            let mut rng = RngStream::new(0, streams::BOOTSTRAP).derive(first.config.grid_index as u64);
            bootstrap_ci(&test, BOOTSTRAP_ITERATIONS, &mut rng).ok()
        })
        .flatten();
    let sigmas: Vec<f64> = ok
        .iter()
        .find_map(|r| r.landscape.as_ref())
        .map(|l| l.curve.points.iter().map(|p| p.sigma).collect())
        .unwrap_or_default();
    let loss_increase = sigmas
        .iter()
        .map(|&s| {
            let v: Vec<f64> = ok
                .iter()
                .filter_map(|r| r.landscape.as_ref().and_then(|l| l.curve.at(s)).and_then(|p| p.mean_increase))
                .collect();
            (s, MeanStd::of(&v))
        })
        .collect();
    GroupRow {
        grid_index: first.config.grid_index,
        label: first.config.label.clone(),
        width: first.config.train.model.width,
        params: first.params,
        train_size: first.train_size,
        algorithm: first.config.train.optim.algorithm,
        batch_size: first.config.train.optim.batch_size,
        base_lr: first.config.train.optim.base_lr,
        seeds: records.iter().map(|r| r.config.seed()).collect(),
        diverged: records.len() - ok.len(),
        train_acc: MeanStd::of(&train),
        test_acc: MeanStd::of(&test),
        test_ci95,
        gen_gap: MeanStd::of(&gaps),
        lambda_max: opt_summary(ok.iter().filter_map(|r| r.landscape.as_ref().map(|l| l.sharpness.lambda_max)).collect()),
        loss_increase,
        delta_rel: opt_summary(ok.iter().filter_map(|r| r.movement.as_ref().map(|m| m.delta_rel)).collect()),
        kernel_drift: opt_summary(ok.iter().filter_map(|r| r.movement.as_ref().and_then(|m| m.kernel_drift)).collect()),
    }
}

fn test_values(records: &[&RunRecord]) -> Vec<f64> {
    records.iter().filter_map(|r| r.final_test.map(|e| pct(e.accuracy))).collect()
}

/// Aggregate the records of one suite.
pub fn summarize(suite: Suite, records: &[RunRecord]) -> Summary {
    let mut by_grid: BTreeMap<usize, Vec<&RunRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.config.suite == suite) {
        by_grid.entry(r.config.grid_index).or_default().push(r);
    }
    let groups: Vec<GroupRow> = by_grid.values().map(|rs| group_row(rs)).collect();

    let threshold = (suite == Suite::DoubleDescent)
        .then(|| {
            let mut sweep: Vec<(usize, f64)> = groups.iter().map(|g| (g.params, g.train_acc.mean / 100.0)).collect();
            sweep.sort_by_key(|s| s.0);
            interpolation_threshold(&sweep, groups.first().map_or(1, |g| g.train_size))
        })
        .flatten();

    let batch_comparison = matches!(suite, Suite::ImplicitReg | Suite::LandscapeCompare)
        .then(|| {
            let sgd: Vec<&GroupRow> = groups.iter().filter(|g| g.algorithm == Algorithm::SgdMomentum).collect();
            let small = sgd.iter().min_by_key(|g| (g.batch_size, g.grid_index))?;
            let large = sgd.iter().max_by_key(|g| (g.batch_size, usize::MAX - g.grid_index))?;
            if small.batch_size == large.batch_size {
                return None;
            }
            let a = test_values(&by_grid[&small.grid_index]);
            let b = test_values(&by_grid[&large.grid_index]);
            Some(Comparison { a: small.label.clone(), b: large.label.clone(), welch: welch_t(&a, &b).ok() })
        })
        .flatten();

    let movement_slope = (suite == Suite::NtkSweep)
        .then(|| {
            let pts: Vec<(f64, f64)> =
                groups.iter().filter_map(|g| g.delta_rel.map(|d| (g.width as f64, d.mean))).collect();
            (pts.len() >= 2).then(|| {
                let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                loglog_slope(&x, &y)
            })
        })
        .flatten();

    let mut lottery = Vec::new();
    if suite == Suite::Lottery {
        for rs in by_grid.values() {
            let recs: Vec<_> = rs.iter().filter_map(|r| r.lottery.clone()).collect();
            for (k, row) in pruning::summarize(&recs).into_iter().enumerate() {
                let ticket: Vec<f64> = recs.iter().filter_map(|r| r.rows.get(k)?.ticket_test.map(pct)).collect();
                let control: Vec<f64> = recs.iter().filter_map(|r| r.rows.get(k)?.control_test.map(pct)).collect();
                let welch = welch_t(&ticket, &control).ok();
                lottery.push(LotteryRow { width: rs[0].config.train.model.width, row, welch });
            }
        }
    }

    Summary { suite, groups, threshold, batch_comparison, movement_slope, lottery }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl Summary {
    /// Header and rows in the column order of the matching results table.
    pub fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let s = |x: &str| x.to_string();
        match self.suite {
            Suite::DoubleDescent => {
                let header = ["width", "params", "params_per_sample", "train_acc_mean", "train_acc_std", "test_acc_mean",
                    "test_acc_std", "test_ci95_low", "test_ci95_high", "n_seeds", "diverged"];
                let rows = self
                    .groups
                    .iter()
                    .map(|g| {
                        vec![g.width.to_string(), g.params.to_string(), num(g.params as f64 / g.train_size as f64),
                            num(g.train_acc.mean), num(g.train_acc.std), num(g.test_acc.mean), num(g.test_acc.std),
                            opt(g.test_ci95.map(|c| c.0)), opt(g.test_ci95.map(|c| c.1)), g.seeds.len().to_string(),
                            g.diverged.to_string()]
                    })
                    .collect();
                (header.map(s).to_vec(), rows)
            }
            Suite::ImplicitReg | Suite::LandscapeCompare => {
                let mut header: Vec<String> = ["config", "algorithm", "batch_size", "lr", "train_acc_mean", "train_acc_std",
                    "test_acc_mean", "test_acc_std", "gen_gap_mean", "gen_gap_std", "n_seeds", "diverged"]
                    .map(s)
                    .to_vec();
                let sigmas: Vec<f64> = self.groups.iter().flat_map(|g| g.loss_increase.iter().map(|p| p.0)).fold(
                    Vec::new(),
                    |mut acc, x| {
                        if !acc.contains(&x) {
                            acc.push(x);
                        }
                        acc
                    },
                );
                let landscape = self.groups.iter().any(|g| g.lambda_max.is_some());
                if landscape {
                    header.extend(["lambda_max_mean", "lambda_max_std"].map(s));
                    header.extend(sigmas.iter().map(|x| format!("loss_increase_sigma_{x}")));
                }
                let rows = self
                    .groups
                    .iter()
                    .map(|g| {
                        let algo = serde_json::to_value(g.algorithm).ok().and_then(|v| v.as_str().map(s)).unwrap_or_default();
                        let mut row = vec![g.label.clone(), algo, g.batch_size.to_string(), num(g.base_lr),
                            num(g.train_acc.mean), num(g.train_acc.std), num(g.test_acc.mean), num(g.test_acc.std),
                            num(g.gen_gap.mean), num(g.gen_gap.std), g.seeds.len().to_string(), g.diverged.to_string()];
                        if landscape {
                            row.push(opt(g.lambda_max.map(|m| m.mean)));
                            row.push(opt(g.lambda_max.map(|m| m.std)));
                            for x in &sigmas {
                                row.push(opt(g.loss_increase.iter().find(|p| p.0 == *x).map(|p| p.1.mean)));
                            }
                        }
                        row
                    })
                    .collect();
                (header, rows)
            }
            Suite::NtkSweep => {
                let header = ["width", "params", "delta_rel_mean", "delta_rel_std", "train_acc_mean", "test_acc_mean",
                    "test_acc_std", "kernel_drift_mean", "n_seeds", "diverged"];
                let rows = self
                    .groups
                    .iter()
                    .map(|g| {
                        vec![g.width.to_string(), g.params.to_string(), opt(g.delta_rel.map(|d| d.mean)),
                            opt(g.delta_rel.map(|d| d.std)), num(g.train_acc.mean), num(g.test_acc.mean),
                            num(g.test_acc.std), opt(g.kernel_drift.map(|d| d.mean)), g.seeds.len().to_string(),
                            g.diverged.to_string()]
                    })
                    .collect();
                (header.map(s).to_vec(), rows)
            }
            Suite::Lottery => {
                let header = ["width", "remaining_pct", "ticket_mean", "ticket_std", "control_mean", "control_std",
                    "n_seeds", "welch_p"];
                let rows = self
                    .lottery
                    .iter()
                    .map(|l| {
                        vec![l.width.to_string(), num(l.row.remaining_pct), num(l.row.ticket.mean),
                            num(l.row.ticket.std), opt(l.row.control.map(|c| c.mean)), opt(l.row.control.map(|c| c.std)),
                            l.row.ticket.n.to_string(), opt(l.welch.map(|w| w.p))]
                    })
                    .collect();
                (header.map(s).to_vec(), rows)
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let (header, rows) = self.table();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).expect("in-memory write");
        for r in rows {
            w.write_record(&r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

fn write_if_changed(path: &Path, text: &str) -> Result<(), RunnerError> {
    if fs::read_to_string(path).is_ok_and(|old| old == text) {
        return Ok(());
    }
    fs::write(path, text).map_err(|e| RunnerError::io(path, e))
}

/// Regenerate `<suite>.csv` and `<suite>.summary.json` for every suite
/// present in the store. Returns the files written.
pub fn analyze_store(store: &Store) -> Result<Vec<PathBuf>, RunnerError> {
    let records = store.load_all()?;
    let mut written = Vec::new();
    for suite in Suite::ALL {
        if !records.iter().any(|r| r.config.suite == suite) {
            continue;
        }
        let summary = summarize(suite, &records);
        let csv_path = store.root().join(format!("{}.csv", suite.name()));
        write_if_changed(&csv_path, &summary.to_csv())?;
        let json_path = store.root().join(format!("{}.summary.json", suite.name()));
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        write_if_changed(&json_path, &json)?;
        written.push(csv_path);
        written.push(json_path);
    }
    Ok(written)
}
