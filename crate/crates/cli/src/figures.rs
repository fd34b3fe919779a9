//! Charts built from the per-suite CSV roll-ups.

use std::path::Path;

use anyhow::{bail, Context, Result};
use overparam_runner::Suite;

use crate::svg::{ChartKind, ChartSpec, Series};

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()
            .with_context(|| format!("parsing {}", path.display()))?;
        Ok(Self { header, rows })
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).with_context(|| format!("missing column {name:?}"))
    }

    pub fn text(&self, name: &str) -> Result<Vec<String>> {
        let i = self.index(name)?;
        Ok(self.rows.iter().map(|r| r.get(i).cloned().unwrap_or_default()).collect())
    }

    /// Blank cells become `None`.
    pub fn numbers(&self, name: &str) -> Result<Vec<Option<f64>>> {
        self.text(name)?
            .into_iter()
            .map(|s| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).with_context(|| format!("column {name:?}: {s:?} is not a number"))
                }
            })
            .collect()
    }
}

fn points(x: &[Option<f64>], y: &[Option<f64>], f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    x.iter().zip(y).filter_map(|(a, b)| Some((a.as_ref().copied()?, f(b.as_ref().copied()?)))).collect()
}

fn bar_series(name: &str, y: &[Option<f64>]) -> Series {
    Series { name: name.into(), points: y.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i as f64, v))).collect() }
}

/// Drops the leading words every label shares, keeping at least one word.
fn short_labels(labels: &[String]) -> Vec<String> {
    let words: Vec<Vec<&str>> = labels.iter().map(|l| l.split_whitespace().collect()).collect();
    let min_len = words.iter().map(Vec::len).min().unwrap_or(0);
    let mut shared = 0;
    while shared + 1 < min_len && words.iter().all(|w| w[shared] == words[0][shared]) {
        shared += 1;
    }
    if labels.len() < 2 {
        return labels.to_vec();
    }
    words.iter().map(|w| w[shared..].join(" ")).collect()
}

/// Chart panels for one suite's table.
pub fn charts(suite: Suite, t: &Table) -> Result<Vec<ChartSpec>> {
    if t.rows.is_empty() {
        bail!("the {} table has no rows", suite.name());
    }
    Ok(match suite {
        Suite::DoubleDescent => {
            let params = t.numbers("params")?;
            let per_sample = t.numbers("params_per_sample")?;
            let mut c = ChartSpec::line("Double descent", "parameters", "error (%)");
            c.x_log = true;
            c.series.push(Series { name: "test error".into(), points: points(&params, &t.numbers("test_acc_mean")?, |a| 100.0 - a) });
            c.series.push(Series { name: "train error".into(), points: points(&params, &t.numbers("train_acc_mean")?, |a| 100.0 - a) });
            if let (Some(Some(p)), Some(Some(r))) = (params.first(), per_sample.first()) {
                let n = (p / r).round();
                c.vlines.push((n, format!("n = {n}")));
            }
            vec![c]
        }
        Suite::ImplicitReg => {
            let cats = short_labels(&t.text("config")?);
            let mut acc = ChartSpec::bars("Test accuracy by optimizer", "test accuracy (%)", cats.clone());
            acc.series.push(bar_series("test accuracy", &t.numbers("test_acc_mean")?));
            let mut gap = ChartSpec::bars("Generalization gap", "train - test (pts)", cats);
            gap.series.push(bar_series("gap", &t.numbers("gen_gap_mean")?));
            vec![acc, gap]
        }
        Suite::LandscapeCompare => {
            let cats = short_labels(&t.text("config")?);
            let mut lam = ChartSpec::bars("Top Hessian eigenvalue", "lambda max", cats.clone());
            lam.kind = ChartKind::Bar;
            lam.series.push(bar_series("lambda max", &t.numbers("lambda_max_mean")?));
            let mut curve = ChartSpec::line("Loss increase under weight noise", "sigma", "loss increase");
            curve.x_log = true;
            let sigma_cols: Vec<(f64, &String)> = t
                .header
                .iter()
                .filter_map(|h| h.strip_prefix("loss_increase_sigma_").and_then(|s| s.parse().ok()).map(|s| (s, h)))
                .collect();
            for (row, name) in cats.iter().enumerate() {
                let mut pts = Vec::new();
                for (sigma, col) in &sigma_cols {
                    if let Some(Some(v)) = t.numbers(col)?.get(row) {
                        pts.push((*sigma, *v));
                    }
                }
                curve.series.push(Series { name: name.clone(), points: pts });
            }
            vec![lam, curve]
        }
        Suite::NtkSweep => {
            let width = t.numbers("width")?;
            let mut mv = ChartSpec::line("Relative parameter movement", "width", "delta theta rel");
            mv.x_log = true;
            mv.y_log = true;
            mv.series.push(Series { name: "delta theta rel".into(), points: points(&width, &t.numbers("delta_rel_mean")?, |v| v) });
            let mut acc = ChartSpec::line("Test accuracy", "width", "test accuracy (%)");
            acc.x_log = true;
            acc.series.push(Series { name: "test accuracy".into(), points: points(&width, &t.numbers("test_acc_mean")?, |v| v) });
            vec![mv, acc]
        }
        Suite::Lottery => {
            let pct = t.numbers("remaining_pct")?;
            let mut c = ChartSpec::line("Pruned subnetworks", "weights remaining (%)", "test accuracy (%)");
            c.x_log = true;
            c.series.push(Series { name: "rewound ticket".into(), points: points(&pct, &t.numbers("ticket_mean")?, |v| v) });
            c.series.push(Series { name: "random reinit".into(), points: points(&pct, &t.numbers("control_mean")?, |v| v) });
            vec![c]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_prefix_is_removed() {
        let l = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(short_labels(&l(&["mlp w=256 sgd bs=32", "mlp w=256 adam bs=128"])), l(&["sgd bs=32", "adam bs=128"]));
        assert_eq!(short_labels(&l(&["a b", "a b"])), l(&["b", "b"]));
        assert_eq!(short_labels(&l(&["mlp w=8 sgd"])), l(&["mlp w=8 sgd"]));
    }
}
