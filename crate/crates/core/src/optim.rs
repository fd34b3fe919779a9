//! Optimizers, learning-rate scaling and schedules.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::nn::{Mode, ModelError, ModelState};
use crate::numerics::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("schedule step {t} is past the horizon {total}")]
    StepOutOfRange { t: usize, total: usize },
    #[error("gradient has length {got}, parameters {expected}")]
    Length { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    SgdMomentum,
    Adam,
    /// One plain gradient step per epoch on the whole training set.
    FullBatchGd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Cosine annealing evaluated once per epoch, floor 0.
    Cosine,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub algorithm: Algorithm,
    pub base_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_eps() -> f64 {
    1e-8
}

pub const BASE_BATCH: usize = 128;
pub const BASE_LR: f64 = 0.01;
pub const ADAM_LR: f64 = 0.001;
pub const GD_LR: f64 = 0.001;
pub const GD_SUBSET: usize = 5000;

/// Batch sizes whose learning rate departs from the linear rule.
const LR_OVERRIDES: [(usize, f64); 3] = [(32, 0.005), (64, 0.0075), (2048, 0.10)];

/// `0.01 · batch / 128`, except for batch sizes with a tabulated rate.
pub fn scaled_lr(batch_size: usize) -> f64 {
    LR_OVERRIDES
        .iter()
        .find(|(b, _)| *b == batch_size)
        .map(|&(_, lr)| lr)
        .unwrap_or(BASE_LR * batch_size as f64 / BASE_BATCH as f64)
}

/// `lr0 · ½ · (1 + cos(π t / T))`, clamped at 0.
pub fn cosine_lr(t: usize, total: usize, lr0: f64) -> Result<f64, OptimError> {
    if t > total {
        return Err(OptimError::StepOutOfRange { t, total });
    }
    if total == 0 {
        return Ok(lr0);
    }
    let frac = t as f64 / total as f64;
    Ok((lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())).max(0.0))
}

impl OptimConfig {
    pub fn sgd(batch_size: usize, epochs: usize) -> Self {
        Self {
            algorithm: Algorithm::SgdMomentum,
            base_lr: scaled_lr(batch_size),
            momentum: 0.9,
            betas: default_betas(),
            eps: default_eps(),
            batch_size,
            epochs,
            schedule: Schedule::Cosine,
        }
    }

    pub fn adam(batch_size: usize, epochs: usize) -> Self {
        Self { algorithm: Algorithm::Adam, base_lr: ADAM_LR, ..Self::sgd(batch_size, epochs) }
    }

    pub fn full_batch_gd(epochs: usize) -> Self {
        Self {
            algorithm: Algorithm::FullBatchGd,
            base_lr: GD_LR,
            momentum: 0.0,
            batch_size: GD_SUBSET,
            schedule: Schedule::Constant,
            ..Self::sgd(GD_SUBSET, epochs)
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::InvalidConfig(m));
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("adam betas must be in [0, 1), got {:?}", self.betas));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }

    /// Learning rate used throughout `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.base_lr,
            Schedule::Cosine => cosine_lr(epoch.min(self.epochs), self.epochs, self.base_lr).unwrap_or(0.0),
        }
    }
}

fn check_grad<F: Scalar>(theta: &[F], grad: &[F]) -> Result<(), OptimError> {
    if theta.len() != grad.len() {
        return Err(OptimError::Length { expected: theta.len(), got: grad.len() });
    }
    match grad.iter().position(|g| !g.is_finite()) {
        Some(index) => Err(OptimError::NonFiniteGradient { index }),
        None => Ok(()),
    }
}

/// Classical momentum: `v ← μv + g; θ ← θ − lr·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<F: Scalar> {
    pub momentum: F,
    pub velocity: Vec<F>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(len: usize, momentum: f64) -> Self {
        Self { momentum: F::from_f64(momentum), velocity: vec![F::zero(); len] }
    }

    pub fn step(&mut self, theta: &mut [F], grad: &[F], lr: f64) -> Result<(), OptimError> {
        check_grad(theta, grad)?;
        let lr = F::from_f64(lr);
        for ((t, v), &g) in theta.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *t = *t - lr * *v;
        }
        Ok(())
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(len: usize, betas: (f64, f64), eps: f64) -> Self {
        Self { beta1: betas.0, beta2: betas.1, eps, m: vec![F::zero(); len], v: vec![F::zero(); len], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [F], grad: &[F], lr: f64) -> Result<(), OptimError> {
        check_grad(theta, grad)?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((t, m), v), &g) in theta.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(grad) {
            let g = g.as_f64();
            let mn = self.beta1 * m.as_f64() + (1.0 - self.beta1) * g;
            let vn = self.beta2 * v.as_f64() + (1.0 - self.beta2) * g * g;
            *m = F::from_f64(mn);
            *v = F::from_f64(vn);
            let update = lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
            *t = F::from_f64(t.as_f64() - update);
        }
        Ok(())
    }
}

/// Optimizer state for one training run.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer<F: Scalar> {
    Sgd(Sgd<F>),
    Adam(Adam<F>),
}

impl<F: Scalar> Optimizer<F> {
    pub fn for_config(cfg: &OptimConfig, len: usize) -> Self {
        match cfg.algorithm {
            Algorithm::SgdMomentum => Optimizer::Sgd(Sgd::new(len, cfg.momentum)),
            Algorithm::FullBatchGd => Optimizer::Sgd(Sgd::new(len, 0.0)),
            Algorithm::Adam => Optimizer::Adam(Adam::new(len, cfg.betas, cfg.eps)),
        }
    }

    pub fn step(&mut self, theta: &mut [F], grad: &[F], lr: f64) -> Result<(), OptimError> {
        match self {
            Optimizer::Sgd(s) => s.step(theta, grad, lr),
            Optimizer::Adam(a) => a.step(theta, grad, lr),
        }
    }

    /// Zero the state of every coordinate whose `keep` bit is false.
    pub fn apply_mask(&mut self, keep: &[bool]) {
        let zero = |buf: &mut [F]| {
            for (x, &k) in buf.iter_mut().zip(keep) {
                if !k {
                    *x = F::zero();
                }
            }
        };
        match self {
            Optimizer::Sgd(s) => zero(&mut s.velocity),
            Optimizer::Adam(a) => {
                zero(&mut a.m);
                zero(&mut a.v);
            }
        }
    }
}

/// One momentum-free step on the mean loss over all of `data`.
pub fn full_batch_gd_step<F: Scalar>(model: &mut ModelState<F>, data: &Dataset, lr: f64) -> Result<f64, ModelError> {
    let (x, y) = data.all::<F>();
    let loss = model.compute_grad(&x, &y, Mode::Train)?;
    let grad = model.grad.data().to_vec();
    let mut sgd = Sgd::new(grad.len(), 0.0);
    sgd.step(model.theta_mut(), &grad, lr)
        .map_err(|e| match e {
            OptimError::NonFiniteGradient { index } => ModelError::NonFiniteGradient { index },
            other => ModelError::InvalidSpec(other.to_string()),
        })?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lr_table() {
        assert_eq!(scaled_lr(128), 0.01);
        assert_eq!(scaled_lr(256), 0.02);
        assert_eq!(scaled_lr(2048), 0.10);
        assert_eq!(scaled_lr(32), 0.005);
        assert_eq!(scaled_lr(64), 0.0075);
        assert!((scaled_lr(512) - 0.04).abs() < 1e-15);
        assert!((scaled_lr(1024) - 0.08).abs() < 1e-15);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 0.1).unwrap(), 0.1);
        assert!(cosine_lr(10, 10, 0.1).unwrap().abs() < 1e-18);
        assert!((cosine_lr(5, 10, 0.1).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(cosine_lr(11, 10, 0.1), Err(OptimError::StepOutOfRange { t: 11, total: 10 }));
    }

    #[test]
    fn momentum_hand_recursion() {
        let mut sgd = Sgd::<f64>::new(1, 0.9);
        let mut theta = [1.0];
        for _ in 0..2 {
            let g = [theta[0]];
            sgd.step(&mut theta, &g, 0.1).unwrap();
        }
        assert!((theta[0] - 0.72).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_plain_gd_and_contracts() {
        let mut sgd = Sgd::<f64>::new(1, 0.0);
        let mut theta = [2.0];
        let mut prev = 2.0f64;
        for _ in 0..20 {
            let g = [theta[0]];
            sgd.step(&mut theta, &g, 0.05).unwrap();
            assert!(theta[0].abs() < prev.abs());
            prev = theta[0];
        }
        assert!((theta[0] - 2.0 * 0.95f64.powi(20)).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut sgd = Sgd::<f32>::new(2, 0.9);
        let mut theta = [0.0f32; 2];
        assert_eq!(sgd.step(&mut theta, &[0.0, f32::NAN], 0.1), Err(OptimError::NonFiniteGradient { index: 1 }));
        let mut adam = Adam::<f32>::new(2, (0.9, 0.999), 1e-8);
        assert!(adam.step(&mut theta, &[f32::INFINITY, 0.0], 0.1).is_err());
    }

    #[test]
    fn adam_first_step_has_size_lr() {
        let mut adam = Adam::<f64>::new(3, (0.9, 0.999), 1e-8);
        let mut theta = [0.0; 3];
        adam.step(&mut theta, &[0.3, -2.0, 50.0], 0.001).unwrap();
        for (t, s) in theta.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((t - s * 0.001).abs() < 1e-9, "{t}");
        }
    }

    #[test]
    fn adam_matches_reference_recursion() {
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.01);
        let mut adam = Adam::<f64>::new(1, (b1, b2), eps);
        let mut theta = [1.5];
        let (mut th, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = th;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            th -= lr * mh / (vh.sqrt() + eps);
            let grad = [theta[0]];
            adam.step(&mut theta, &grad, lr).unwrap();
        }
        assert!((theta[0] - th).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::sgd(128, 10).validate().is_ok());
        let mut c = OptimConfig::sgd(128, 10);
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        c = OptimConfig::sgd(128, 10);
        c.base_lr = 0.0;
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn zero_gradient_leaves_theta_fixed(theta0 in prop::collection::vec(-5.0f32..5.0, 1..20), steps in 1usize..10) {
            let n = theta0.len();
            for cfg in [OptimConfig::sgd(32, 5), OptimConfig::adam(32, 5), OptimConfig::full_batch_gd(5)] {
                let mut opt = Optimizer::<f32>::for_config(&cfg, n);
                let mut theta = theta0.clone();
                for _ in 0..steps {
                    opt.step(&mut theta, &vec![0.0; n], cfg.base_lr).unwrap();
                }
                prop_assert_eq!(&theta, &theta0);
            }
        }

        #[test]
        fn cosine_is_nonincreasing(total in 1usize..200, lr0 in 1e-4f64..1.0) {
            let lrs: Vec<f64> = (0..=total).map(|t| cosine_lr(t, total, lr0).unwrap()).collect();
            prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(lrs.iter().all(|&l| l >= 0.0));
        }

        #[test]
        fn sgd_is_bitwise_reproducible(theta0 in prop::collection::vec(-1.0f32..1.0, 1..16), lr in 1e-3f64..0.5) {
            let run = || {
                let mut s = Sgd::<f32>::new(theta0.len(), 0.9);
                let mut th = theta0.clone();
                for _ in 0..5 {
                    let g = th.clone();
                    s.step(&mut th, &g, lr).unwrap();
                }
                th.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            };
            prop_assert_eq!(run(), run());
        }
    }
}
