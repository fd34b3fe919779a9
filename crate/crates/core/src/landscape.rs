//! Loss-landscape probes: loss increase under Gaussian weight noise and the
//! dominant Hessian eigenvalue by power iteration.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::nn::{ModelError, ModelState};
use crate::numerics::{dot, norm2, streams, RngStream, Scalar};

pub const DEFAULT_SIGMAS: [f64; 7] = [0.0005, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05];
pub const DEFAULT_SAMPLES: usize = 5;
pub const DEFAULT_ITERATIONS: usize = 30;
pub const HESSIAN_SUBSET: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum LandscapeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("architectures differ: {0}")]
    ArchitectureMismatch(String),
    #[error("sigmas must be nonnegative and strictly increasing")]
    BadSigmas,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub sigma: f64,
    /// Mean of `L(θ+ε) − L(θ)`; `None` when a perturbed loss was non-finite.
    pub mean_increase: Option<f64>,
    /// Mean of `100 · (L(θ+ε) − L(θ)) / L(θ)`; `None` when `L(θ) = 0` or non-finite.
    pub mean_increase_pct: Option<f64>,
    pub non_finite: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    #[serde(with = "crate::numerics::float_serde")]
    pub baseline_loss: f64,
    pub samples_per_sigma: usize,
    pub points: Vec<CurvePoint>,
    /// Whether the absolute increase is nondecreasing in σ.
    pub monotone: bool,
}

impl PerturbationCurve {
    pub fn at(&self, sigma: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.sigma == sigma)
    }
}

/// Perturbation curve of an arbitrary loss over a parameter vector. `theta`
/// is never modified; each sample perturbs a private copy.
pub fn perturbation_curve_fn<F: Scalar>(
    theta: &[F],
    sigmas: &[f64],
    samples: usize,
    rng: &mut RngStream,
    mut loss: impl FnMut(&[F]) -> Result<f64, ModelError>,
) -> Result<PerturbationCurve, LandscapeError> {
    if sigmas.iter().any(|&s| !(s >= 0.0)) || sigmas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LandscapeError::BadSigmas);
    }
    let baseline = loss(theta)?;
    let mut scratch = theta.to_vec();
    let mut points = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        if sigma == 0.0 {
            let pct = (baseline != 0.0).then_some(0.0);
            points.push(CurvePoint { sigma, mean_increase: Some(0.0), mean_increase_pct: pct, non_finite: false });
            continue;
        }
        let (mut abs_sum, mut non_finite) = (0.0, false);
        for _ in 0..samples {
            for (s, &t) in scratch.iter_mut().zip(theta) {
                *s = F::from_f64(t.as_f64() + sigma * rng.normal());
            }
            let l = loss(&scratch)?;
            if l.is_finite() {
                abs_sum += l - baseline;
            } else {
                non_finite = true;
            }
        }
        let mean = abs_sum / samples.max(1) as f64;
        let (mean_increase, pct) = if non_finite {
            (None, None)
        } else {
            (Some(mean), (baseline != 0.0).then(|| 100.0 * mean / baseline))
        };
        points.push(CurvePoint { sigma, mean_increase, mean_increase_pct: pct, non_finite });
    }
    let monotone = points.windows(2).all(|w| match (w[0].mean_increase, w[1].mean_increase) {
        (Some(a), Some(b)) => b >= a,
        (_, None) => true,
        (None, Some(_)) => false,
    });
    Ok(PerturbationCurve { baseline_loss: baseline, samples_per_sigma: samples, points, monotone })
}

/// Perturbation curve of the eval-mode mean loss of `model` on `data`.
/// Running BatchNorm statistics are left as they are.
pub fn perturb_curve<F: Scalar>(
    model: &ModelState<F>,
    data: &Dataset,
    sigmas: &[f64],
    samples: usize,
    rng: &mut RngStream,
) -> Result<PerturbationCurve, LandscapeError> {
    let mut scratch = model.clone();
    perturbation_curve_fn(model.theta(), sigmas, samples, rng, |th| {
        scratch.theta_mut().copy_from_slice(th);
        Ok(scratch.evaluate(data)?.mean_loss)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    #[serde(with = "crate::numerics::float_serde")]
    pub lambda_max: f64,
    pub iterations: usize,
    /// `vₖᵀ H vₖ` for each iterate before its update.
    pub rayleigh_trace: Vec<f64>,
    pub subset_size: usize,
    /// The operator returned a zero vector.
    pub degenerate: bool,
    /// The final Rayleigh quotient is negative.
    pub negative: bool,
}

/// Dominant eigenvalue of a symmetric operator: `v ← Hv / |Hv|` from a
/// random unit start, then `λ = vᵀHv` at the final iterate.
pub fn power_iteration<E>(
    dim: usize,
    iterations: usize,
    rng: &mut RngStream,
    mut op: impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
) -> Result<SharpnessReport, E> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let n0 = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut trace = Vec::with_capacity(iterations);
    let degenerate_report = |trace: Vec<f64>| SharpnessReport {
        lambda_max: 0.0,
        iterations,
        rayleigh_trace: trace,
        subset_size: 0,
        degenerate: true,
        negative: false,
    };
    for _ in 0..iterations {
        let hv = op(&v)?;
        trace.push(dot(&v, &hv));
        let n = norm2(&hv);
        if n == 0.0 || !n.is_finite() {
            return Ok(degenerate_report(trace));
        }
        v = hv.into_iter().map(|x| x / n).collect();
    }
    let hv = op(&v)?;
    let lambda = dot(&v, &hv);
    if norm2(&hv) == 0.0 {
        return Ok(degenerate_report(trace));
    }
    Ok(SharpnessReport {
        lambda_max: lambda,
        iterations,
        rayleigh_trace: trace,
        subset_size: 0,
        degenerate: false,
        negative: lambda < 0.0,
    })
}

/// Top Hessian eigenvalue of the eval-mode loss on `subset`, computed with
/// exact Hessian-vector products in 64-bit.
pub fn top_eigenvalue<F: Scalar>(
    model: &ModelState<F>,
    subset: &Dataset,
    iterations: usize,
    rng: &mut RngStream,
) -> Result<SharpnessReport, LandscapeError> {
    let m64 = model.cast::<f64>();
    let (x, y) = subset.all::<f64>();
    let mut report = power_iteration(m64.num_params(), iterations, rng, |v| m64.hvp(&x, &y, v).map(|t| t.into_vec()))?;
    report.subset_size = subset.len();
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub iterations: usize,
    pub sigmas: Vec<f64>,
    pub samples_per_sigma: usize,
    pub seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            sigmas: DEFAULT_SIGMAS.to_vec(),
            samples_per_sigma: DEFAULT_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub sharpness: SharpnessReport,
    pub curve: PerturbationCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessComparison {
    pub a: ProbeReport,
    pub b: ProbeReport,
    /// `λ(b) / λ(a)`.
    pub lambda_ratio: f64,
    /// Per-σ ratio of absolute loss increases, `b / a`.
    pub increase_ratio: Vec<Option<f64>>,
}

/// Probe both models with identical random streams: the same power-iteration
/// start vector and the same noise draws.
pub fn probe<F: Scalar>(
    model: &ModelState<F>,
    hessian_subset: &Dataset,
    perturb_set: &Dataset,
    settings: &ProbeSettings,
) -> Result<ProbeReport, LandscapeError> {
    let mut power_rng = RngStream::new(settings.seed, streams::POWER_ITERATION);
    let mut noise_rng = RngStream::new(settings.seed, streams::PERTURB);
    Ok(ProbeReport {
        sharpness: top_eigenvalue(model, hessian_subset, settings.iterations, &mut power_rng)?,
        curve: perturb_curve(model, perturb_set, &settings.sigmas, settings.samples_per_sigma, &mut noise_rng)?,
    })
}

pub fn compare_sharpness<F: Scalar>(
    a: &ModelState<F>,
    b: &ModelState<F>,
    hessian_subset: &Dataset,
    perturb_set: &Dataset,
    settings: &ProbeSettings,
) -> Result<SharpnessComparison, LandscapeError> {
    if a.spec() != b.spec() {
        return Err(LandscapeError::ArchitectureMismatch(format!("{:?} vs {:?}", a.spec(), b.spec())));
    }
    let ra = probe(a, hessian_subset, perturb_set, settings)?;
    let rb = probe(b, hessian_subset, perturb_set, settings)?;
    let increase_ratio = ra
        .curve
        .points
        .iter()
        .zip(&rb.curve.points)
        .map(|(pa, pb)| match (pa.mean_increase, pb.mean_increase) {
            (Some(x), Some(y)) if x != 0.0 => Some(y / x),
            _ => None,
        })
        .collect();
    Ok(SharpnessComparison {
        lambda_ratio: rb.sharpness.lambda_max / ra.sharpness.lambda_max,
        a: ra,
        b: rb,
        increase_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn dense(m: &[f64], n: usize) -> impl FnMut(&[f64]) -> Result<Vec<f64>, Infallible> + '_ {
        move |v| Ok((0..n).map(|i| (0..n).map(|j| m[i * n + j] * v[j]).sum()).collect())
    }

    #[test]
    fn diagonal_dominant_eigenvalue() {
        let m = [5.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0];
        let r = power_iteration(3, 30, &mut RngStream::new(0, 5), dense(&m, 3)).unwrap();
        assert!((r.lambda_max - 5.0).abs() < 1e-6, "{}", r.lambda_max);
        assert_eq!(r.rayleigh_trace.len(), 30);
        assert!(!r.degenerate && !r.negative);
    }

    #[test]
    fn isotropic_converges_in_one_step() {
        let c = 3.5;
        let r = power_iteration(4, 1, &mut RngStream::new(2, 5), |v: &[f64]| {
            Ok::<_, Infallible>(v.iter().map(|x| c * x).collect())
        })
        .unwrap();
        assert!((r.lambda_max - c).abs() < 1e-12);
    }

    #[test]
    fn zero_operator_is_degenerate() {
        let r = power_iteration(3, 5, &mut RngStream::new(0, 5), |v: &[f64]| Ok::<_, Infallible>(vec![0.0; v.len()]))
            .unwrap();
        assert!(r.degenerate);
        assert_eq!(r.lambda_max, 0.0);
    }

    #[test]
    fn negative_dominant_is_flagged() {
        let m = [-4.0, 0.0, 0.0, 1.0];
        let r = power_iteration(2, 30, &mut RngStream::new(0, 5), dense(&m, 2)).unwrap();
        assert!(r.negative);
        assert!((r.lambda_max + 4.0).abs() < 1e-6);
    }

    #[test]
    fn zero_sigma_gives_exact_zero_and_theta_untouched() {
        let theta = vec![1.0f64, -2.0];
        let curve = perturbation_curve_fn(&theta, &[0.0, 0.1], 3, &mut RngStream::new(0, 4), |t| {
            Ok(1.0 + t.iter().map(|x| x * x).sum::<f64>())
        })
        .unwrap();
        assert_eq!(curve.points[0].mean_increase, Some(0.0));
        assert_eq!(curve.points[0].mean_increase_pct, Some(0.0));
        assert_eq!(theta, vec![1.0, -2.0]);
    }

    #[test]
    fn quadratic_increase_matches_trace_formula() {
        // L = ½ θᵀ H θ at θ* = 0 with diagonal H: E[ΔL] = ½ σ² tr(H)
        let h: Vec<f64> = (1..=20).map(|i| i as f64 / 4.0).collect();
        let trace: f64 = h.iter().sum();
        let sigma = 0.3;
        let curve = perturbation_curve_fn(&vec![0.0f64; 20], &[sigma], 1000, &mut RngStream::new(7, 4), |t| {
            Ok(0.5 * t.iter().zip(&h).map(|(x, hi)| hi * x * x).sum::<f64>())
        })
        .unwrap();
        let want = 0.5 * sigma * sigma * trace;
        let got = curve.points[0].mean_increase.unwrap();
        assert!((got - want).abs() / want < 0.10, "{got} vs {want}");
        assert_eq!(curve.points[0].mean_increase_pct, None);
    }

    #[test]
    fn non_finite_loss_is_flagged() {
        let curve =
            perturbation_curve_fn(&[0.0f64], &[0.1], 2, &mut RngStream::new(0, 4), |t| Ok(if t[0] == 0.0 { 1.0 } else { f64::NAN }))
                .unwrap();
        assert!(curve.points[0].non_finite);
        assert_eq!(curve.points[0].mean_increase, None);
    }

    #[test]
    fn unordered_sigmas_are_rejected() {
        let r = perturbation_curve_fn(&[0.0f64], &[0.1, 0.05], 1, &mut RngStream::new(0, 4), |_| Ok(0.0));
        assert!(matches!(r, Err(LandscapeError::BadSigmas)));
    }
}
