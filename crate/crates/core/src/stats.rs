//! Seed summaries, bootstrap intervals, Welch's t-test and the capacity
//! quantities used in reporting.

use serde::{Deserialize, Serialize};

use crate::numerics::RngStream;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 values, got {0}")]
    TooFew(usize),
    #[error("both samples have zero variance")]
    DegenerateVariance,
    #[error("non-finite value in sample")]
    NonFinite,
}

pub const BOOTSTRAP_ITERATIONS: usize = 1000;
/// Train accuracy at or above this counts as interpolating.
pub const INTERPOLATION_ACCURACY: f64 = 0.9995;

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1); 0 for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Self {
        Self { mean: if v.is_empty() { f64::NAN } else { mean(v) }, std: sample_std(v), n: v.len() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub n_seeds: usize,
}

impl SeedSummary {
    pub fn new(values: &[f64], rng: &mut RngStream) -> Result<Self, StatsError> {
        let (lo, hi) = bootstrap_ci(values, BOOTSTRAP_ITERATIONS, rng)?;
        Ok(Self {
            values: values.to_vec(),
            mean: mean(values),
            std: sample_std(values),
            ci95_low: lo,
            ci95_high: hi,
            n_seeds: values.len(),
        })
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap 95% interval for the mean.
pub fn bootstrap_ci(values: &[f64], iterations: usize, rng: &mut RngStream) -> Result<(f64, f64), StatsError> {
    let n = values.len();
    if n < 2 {
        return Err(StatsError::TooFew(n));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut means: Vec<f64> = (0..iterations.max(1))
        .map(|_| (0..n).map(|_| values[rng.below(n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok((quantile(&means, 0.025), quantile(&means, 0.975)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
    pub significant: bool,
}

pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult, StatsError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(StatsError::TooFew(s.len()));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let va = sample_std(a).powi(2) / na;
    let vb = sample_std(b).powi(2) / nb;
    if va + vb == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let t = (mean(a) - mean(b)) / (va + vb).sqrt();
    let dof = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let p = student_t_two_tailed(t, dof);
    Ok(WelchResult { t, dof, p, significant: p < 0.05 })
}

/// `P(|T| ≥ |t|)` for Student's t with `dof` degrees of freedom.
pub fn student_t_two_tailed(t: f64, dof: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut s = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

/// `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + num * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + num / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        h *= d * c;
        let num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + num * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + num / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Train minus test accuracy, in percentage points.
pub fn generalization_gap(train_acc: f64, test_acc: f64) -> f64 {
    100.0 * (train_acc - test_acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VcBound {
    pub value: f64,
    /// `sqrt(d ln(n/d) / n)`, constant factor 1.
    pub gap: f64,
    /// Set when `n ≤ d` or the bound reaches 1.
    pub vacuous: bool,
}

/// Illustrative VC-style bound `r_emp + sqrt(d ln(n/d) / n)`.
pub fn vc_bound(d_vc: f64, n: f64, r_emp: f64) -> VcBound {
    if n <= d_vc || d_vc < 1.0 {
        return VcBound { value: f64::INFINITY, gap: f64::INFINITY, vacuous: true };
    }
    let gap = (d_vc * (n / d_vc).ln() / n).sqrt();
    let value = r_emp + gap;
    VcBound { value, gap, vacuous: value >= 1.0 }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub index: usize,
    pub params: usize,
    /// Parameters per training sample.
    pub ratio: f64,
}

/// First model (in parameter order) whose train accuracy reaches the
/// interpolation level.
pub fn interpolation_threshold(sweep: &[(usize, f64)], n_train: usize) -> Option<Threshold> {
    sweep.iter().position(|&(_, acc)| acc >= INTERPOLATION_ACCURACY).map(|index| {
        let params = sweep[index].0;
        Threshold { index, params, ratio: params as f64 / n_train as f64 }
    })
}
