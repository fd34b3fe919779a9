//! Global magnitude pruning with rewinding to the original initialization,
//! and the random-reinitialization control.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::nn::{Layout, ModelError, ModelState, ParamRole};
use crate::numerics::{streams, RngStream, Scalar};
use crate::stats;
use crate::train::{train, TrainConfig, TrainError, TrainOptions, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum PruneError {
    #[error("prune fraction must be in [0, 1), got {0}")]
    Fraction(f64),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("remaining percentages must lie in (0, 100], got {0}")]
    Percent(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Which parameters may be pruned: linear and conv weights. Biases never are.
pub fn eligible(layout: &Layout) -> Vec<bool> {
    let mut e = vec![false; layout.param_count];
    for p in layout.params.iter().filter(|p| p.role == ParamRole::Weight) {
        e[p.range.clone()].fill(true);
    }
    e
}

/// Binary keep-mask over the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneMask {
    pub keep: Vec<bool>,
    pub eligible: usize,
    pub kept_eligible: usize,
}

impl PruneMask {
    pub fn all_ones(len: usize, eligible: usize) -> Self {
        Self { keep: vec![true; len], eligible, kept_eligible: eligible }
    }

    pub fn remaining_fraction(&self) -> f64 {
        if self.eligible == 0 {
            1.0
        } else {
            self.kept_eligible as f64 / self.eligible as f64
        }
    }
}

/// Number of eligible weights removed for a prune fraction.
pub fn prune_count(eligible: usize, fraction: f64) -> usize {
    ((fraction * eligible as f64) + 1e-9).floor() as usize
}

/// Zero the `fraction` of eligible coordinates with the smallest `|θ|`
/// under a single global threshold; ties prune the lower index first.
/// Coordinates already pruned by `prior` rank below every surviving one.
pub fn magnitude_mask<F: Scalar>(
    theta: &[F],
    eligible_set: &[bool],
    fraction: f64,
    prior: Option<&PruneMask>,
) -> Result<PruneMask, PruneError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(PruneError::Fraction(fraction));
    }
    if theta.len() != eligible_set.len() || prior.is_some_and(|p| p.keep.len() != theta.len()) {
        return Err(PruneError::Length(format!("theta {} vs eligible {}", theta.len(), eligible_set.len())));
    }
    let mut order: Vec<(f64, usize)> = eligible_set
        .iter()
        .enumerate()
        .filter(|(_, &e)| e)
        .map(|(i, _)| {
            let alive = prior.is_none_or(|p| p.keep[i]);
            (if alive { theta[i].as_f64().abs() } else { -1.0 }, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let e = order.len();
    let k = prune_count(e, fraction);
    let mut keep = vec![true; theta.len()];
    for &(_, i) in &order[..k] {
        keep[i] = false;
    }
    Ok(PruneMask { keep, eligible: e, kept_eligible: e - k })
}

/// Cumulative prune fractions for `rounds` equal geometric steps towards
/// `target` remaining.
pub fn round_fractions(remaining: f64, rounds: usize) -> Vec<f64> {
    let rounds = rounds.max(1);
    (1..=rounds).map(|r| 1.0 - remaining.powf(r as f64 / rounds as f64)).collect()
}

/// Retrain from `theta0 ⊙ mask` with the mask enforced after every step.
pub fn rewind_and_retrain(
    cfg: &TrainConfig,
    theta0: &[f32],
    mask: &PruneMask,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
) -> Result<TrainOutcome<f32>, PruneError> {
    if theta0.len() != cfg.model.param_count() {
        return Err(PruneError::Length(format!(
            "theta0 has {} entries, spec needs {}",
            theta0.len(),
            cfg.model.param_count()
        )));
    }
    let start = ModelState::from_parts(cfg.model.clone(), theta0.to_vec(), None)?;
    let opts = TrainOptions { initial: Some(start), mask: Some(&mask.keep), on_epoch: None };
    Ok(train(cfg, train_set, test_set, opts)?)
}

/// Same mask and protocol from a fresh initialization drawn from `init`.
pub fn random_reinit_control(
    cfg: &TrainConfig,
    mask: &PruneMask,
    init: &mut RngStream,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
) -> Result<TrainOutcome<f32>, PruneError> {
    let start = ModelState::build(&cfg.model, init)?;
    let opts = TrainOptions { initial: Some(start), mask: Some(&mask.keep), on_epoch: None };
    Ok(train(cfg, train_set, test_set, opts)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LotterySettings {
    /// Remaining percentages, each in (0, 100].
    pub remaining_pct: Vec<f64>,
    /// 1 for one-shot pruning; more for equal geometric rounds.
    #[serde(default = "one")]
    pub rounds: usize,
    #[serde(default = "yes")]
    pub control: bool,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LotteryRow {
    pub remaining_pct: f64,
    pub remaining_fraction: f64,
    pub ticket_train: f64,
    pub ticket_test: Option<f64>,
    pub control_train: Option<f64>,
    pub control_test: Option<f64>,
    /// Largest `|θᵢ|` over masked coordinates across every epoch checkpoint.
    pub masked_max_abs: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LotteryRecord {
    pub seed: u64,
    pub rows: Vec<LotteryRow>,
}

fn max_abs(out: &TrainOutcome<f32>) -> f64 {
    out.masked_max_abs.iter().copied().fold(0.0, f64::max)
}

/// Full ticket experiment for one seed: train, then for each target prune,
/// rewind and retrain, plus the reinitialized control. The 100% row is the
/// unpruned baseline itself.
pub fn lottery_run(
    cfg: &TrainConfig,
    settings: &LotterySettings,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
) -> Result<LotteryRecord, PruneError> {
    check_percents(settings)?;
    let baseline = train::<f32>(cfg, train_set, test_set, TrainOptions::default())?;
    lottery_from_baseline(cfg, settings, &baseline, train_set, test_set)
}

fn check_percents(settings: &LotterySettings) -> Result<(), PruneError> {
    match settings.remaining_pct.iter().find(|&&p| !(p > 0.0 && p <= 100.0)) {
        Some(&p) => Err(PruneError::Percent(p)),
        None => Ok(()),
    }
}

/// [`lottery_run`] with the unpruned run already done; `baseline` must come
/// from training `cfg` without a mask.
pub fn lottery_from_baseline(
    cfg: &TrainConfig,
    settings: &LotterySettings,
    baseline: &TrainOutcome<f32>,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
) -> Result<LotteryRecord, PruneError> {
    check_percents(settings)?;
    let eligible_set = eligible(baseline.model.layout());
    let n_eligible = eligible_set.iter().filter(|&&e| e).count();
    let mut rows = Vec::new();
    for &pct in &settings.remaining_pct {
        if pct >= 100.0 {
            rows.push(LotteryRow {
                remaining_pct: pct,
                remaining_fraction: 1.0,
                ticket_train: baseline.final_train.accuracy,
                ticket_test: baseline.final_test.map(|e| e.accuracy),
                control_train: None,
                control_test: None,
                masked_max_abs: 0.0,
                diverged: baseline.divergence.is_some(),
            });
            continue;
        }
        let mut mask = PruneMask::all_ones(baseline.theta0.len(), n_eligible);
        let mut trained = baseline.model.theta().to_vec();
        let mut ticket = None;
        let mut worst = 0.0f64;
        for frac in round_fractions(pct / 100.0, settings.rounds) {
            mask = magnitude_mask(&trained, &eligible_set, frac, Some(&mask))?;
            let out = rewind_and_retrain(cfg, &baseline.theta0, &mask, train_set, test_set)?;
            worst = worst.max(max_abs(&out));
            trained = out.model.theta().to_vec();
            ticket = Some(out);
        }
        let ticket = ticket.expect("at least one round");
        let control = if settings.control {
            let mut init = RngStream::new(cfg.seed, streams::REINIT);
            let out = random_reinit_control(cfg, &mask, &mut init, train_set, test_set)?;
            worst = worst.max(max_abs(&out));
            Some(out)
        } else {
            None
        };
        rows.push(LotteryRow {
            remaining_pct: pct,
            remaining_fraction: mask.remaining_fraction(),
            ticket_train: ticket.final_train.accuracy,
            ticket_test: ticket.final_test.map(|e| e.accuracy),
            control_train: control.as_ref().map(|c| c.final_train.accuracy),
            control_test: control.as_ref().and_then(|c| c.final_test.map(|e| e.accuracy)),
            masked_max_abs: worst,
            diverged: ticket.divergence.is_some() || control.as_ref().is_some_and(|c| c.divergence.is_some()),
        });
    }
    Ok(LotteryRecord { seed: cfg.seed, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub remaining_pct: f64,
    pub ticket: stats::MeanStd,
    pub control: Option<stats::MeanStd>,
}

/// Per-percentage mean and sample std of test accuracy (in percent) across seeds.
pub fn summarize(records: &[LotteryRecord]) -> Vec<SweepRow> {
    let Some(first) = records.first() else { return Vec::new() };
    first
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let pick = |f: &dyn Fn(&LotteryRow) -> Option<f64>| -> Vec<f64> {
                records.iter().filter_map(|r| r.rows.get(k).and_then(f)).map(|v| 100.0 * v).collect()
            };
            let ticket = pick(&|r| r.ticket_test);
            let control = pick(&|r| r.control_test);
            SweepRow {
                remaining_pct: row.remaining_pct,
                ticket: stats::MeanStd::of(&ticket),
                control: (!control.is_empty()).then(|| stats::MeanStd::of(&control)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let theta = [-0.1f64, 0.5, 0.02, -0.3];
        let m = magnitude_mask(&theta, &[true; 4], 0.5, None).unwrap();
        assert_eq!(m.keep, vec![false, true, false, true]);
        assert_eq!(m.remaining_fraction(), 0.5);
    }

    #[test]
    fn zero_fraction_keeps_everything_and_one_is_rejected() {
        let theta = [1.0f32, 2.0, 3.0];
        assert_eq!(magnitude_mask(&theta, &[true; 3], 0.0, None).unwrap().keep, vec![true; 3]);
        assert!(matches!(magnitude_mask(&theta, &[true; 3], 1.0, None), Err(PruneError::Fraction(_))));
    }

    #[test]
    fn biases_are_never_pruned() {
        let spec = ModelSpec::mlp_with_input(6, 4);
        let layout = spec.layout().unwrap();
        let e = eligible(&layout);
        let theta = vec![0.0f32; spec.param_count()];
        let m = magnitude_mask(&theta, &e, 0.9, None).unwrap();
        for p in layout.params.iter().filter(|p| p.role == ParamRole::Bias) {
            assert!(m.keep[p.range.clone()].iter().all(|&k| k));
        }
    }

    #[test]
    fn ninety_percent_on_cnn_keeps_ceiling_of_tenth() {
        let spec = ModelSpec::cnn(4);
        let e = eligible(&spec.layout().unwrap());
        let n = e.iter().filter(|&&x| x).count();
        let mut rng = RngStream::new(0, 0);
        let theta: Vec<f32> = (0..spec.param_count()).map(|_| rng.normal() as f32).collect();
        let m = magnitude_mask(&theta, &e, 0.9, None).unwrap();
        assert_eq!(m.kept_eligible, (0.1 * n as f64).ceil() as usize);
    }

    #[test]
    fn geometric_rounds_reach_target() {
        let f = round_fractions(0.1, 3);
        assert!((f[2] - 0.9).abs() < 1e-12);
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(round_fractions(0.3, 1), vec![0.7]);
    }

    proptest! {
        #[test]
        fn kept_set_is_top_k_by_magnitude(theta in prop::collection::vec(-1.0f64..1.0, 1..60), frac in 0.0f64..0.99, elig_seed: u64) {
            let mut rng = RngStream::new(elig_seed, 0);
            let e: Vec<bool> = theta.iter().map(|_| rng.uniform() < 0.7).collect();
            let m = magnitude_mask(&theta, &e, frac, None).unwrap();
            // oracle: full sort of eligible indices by (|θ|, index) descending keeps the top
            let mut idx: Vec<usize> = (0..theta.len()).filter(|&i| e[i]).collect();
            idx.sort_by(|&a, &b| theta[b].abs().total_cmp(&theta[a].abs()).then(b.cmp(&a)));
            let keep_n = idx.len() - prune_count(idx.len(), frac);
            let mut want = vec![true; theta.len()];
            for &i in &idx[keep_n..] {
                want[i] = false;
            }
            prop_assert_eq!(&m.keep, &want);
            prop_assert!(e.iter().zip(&m.keep).all(|(&el, &k)| el || k));
            let target = 1.0 - frac;
            prop_assert!((m.kept_eligible as f64 - target * idx.len() as f64).abs() <= 1.0);
        }
    }
}
