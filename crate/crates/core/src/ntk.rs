//! Lazy-training measurements: relative parameter movement and the
//! empirical tangent kernel.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::nn::{ModelError, ModelSpec, ModelState};
use crate::numerics::{dot, norm2, Scalar};
use crate::train::{train, TrainConfig, TrainError, TrainOptions};

#[derive(Debug, thiserror::Error)]
pub enum NtkError {
    #[error("parameter vectors differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("initial parameter norm is zero")]
    ZeroInitialNorm,
    #[error("widths must be strictly increasing")]
    UnsortedWidths,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// `|θ_T − θ₀|₂ / |θ₀|₂`.
pub fn relative_movement<F: Scalar>(theta0: &[F], theta_t: &[F]) -> Result<f64, NtkError> {
    if theta0.len() != theta_t.len() {
        return Err(NtkError::Length(theta0.len(), theta_t.len()));
    }
    let n0 = norm2(theta0);
    if n0 == 0.0 {
        return Err(NtkError::ZeroInitialNorm);
    }
    let disp = theta0.iter().zip(theta_t).map(|(a, b)| (b.as_f64() - a.as_f64()).powi(2)).sum::<f64>().sqrt();
    Ok(disp / n0)
}

/// Gram matrix `K[i][j] = Σ_c ⟨∇θ f_c(xᵢ), ∇θ f_c(xⱼ)⟩` over `m` probes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalKernel {
    pub size: usize,
    /// Row-major `size × size`.
    pub gram: Vec<f64>,
}

impl EmpiricalKernel {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.size + j]
    }

    pub fn frobenius(&self) -> f64 {
        self.gram.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Kernel over the samples of `probes`, summed over output logits. The
/// upper triangle is computed and mirrored, so the result is exactly
/// symmetric.
pub fn empirical_kernel<F: Scalar>(model: &ModelState<F>, probes: &Dataset) -> Result<EmpiricalKernel, NtkError> {
    let m = probes.len();
    let mut gram = vec![0.0; m * m];
    for class in 0..model.spec().classes {
        let grads = (0..m)
            .map(|i| {
                let (x, _) = probes.gather::<F>(&[i]);
                model.output_gradient(&x, class)
            })
            .collect::<Result<Vec<_>, _>>()?;
        for i in 0..m {
            for j in i..m {
                gram[i * m + j] += dot(&grads[i], &grads[j]);
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            gram[i * m + j] = gram[j * m + i];
        }
    }
    Ok(EmpiricalKernel { size: m, gram })
}

/// `|K_T − K₀|_F / |K₀|_F` on a shared probe set.
pub fn kernel_drift<F: Scalar>(
    model0: &ModelState<F>,
    model_t: &ModelState<F>,
    probes: &Dataset,
) -> Result<f64, NtkError> {
    let k0 = empirical_kernel(model0, probes)?;
    let kt = empirical_kernel(model_t, probes)?;
    let diff = k0.gram.iter().zip(&kt.gram).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(diff / k0.frobenius())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovementRecord {
    pub width: usize,
    pub params: usize,
    pub seed: u64,
    pub theta0_norm: f64,
    pub displacement_norm: f64,
    pub delta_rel: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub kernel_drift: Option<f64>,
    pub diverged: bool,
}

/// Train one configuration and measure how far its parameters moved.
pub fn movement_run(
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    probes: Option<&Dataset>,
) -> Result<MovementRecord, NtkError> {
    let out = train::<f32>(cfg, train_set, test_set, TrainOptions::default())?;
    let theta0_norm = norm2(&out.theta0);
    let delta_rel = relative_movement(&out.theta0, out.model.theta())?;
    let drift = match probes {
        Some(p) => {
            let m0 = ModelState::from_parts(cfg.model.clone(), out.theta0.clone(), None)?;
            Some(kernel_drift(&m0, &out.model, p)?)
        }
        None => None,
    };
    Ok(MovementRecord {
        width: cfg.model.width,
        params: out.model.num_params(),
        seed: cfg.seed,
        theta0_norm,
        displacement_norm: delta_rel * theta0_norm,
        delta_rel,
        train_accuracy: out.final_train.accuracy,
        test_accuracy: out.final_test.map(|e| e.accuracy),
        kernel_drift: drift,
        diverged: out.divergence.is_some(),
    })
}

/// One run per width with the base config's optimizer and seed.
pub fn width_sweep(
    widths: &[usize],
    base: &TrainConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    probes: Option<&Dataset>,
) -> Result<Vec<MovementRecord>, NtkError> {
    if widths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(NtkError::UnsortedWidths);
    }
    widths
        .iter()
        .map(|&w| {
            let cfg = TrainConfig { model: ModelSpec { width: w, ..base.model.clone() }, ..base.clone() };
            movement_run(&cfg, train_set, test_set, probes)
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
