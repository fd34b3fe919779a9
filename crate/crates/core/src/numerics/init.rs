//! Random tensor constructors and the weight-initialization schemes.

use super::{NumericsError, RngStream, Scalar, Tensor};

/// Gain used for ReLU layers in the Kaiming bound `gain * sqrt(3 / fan_in)`.
pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

pub fn gaussian<F: Scalar>(
    rng: &mut RngStream,
    shape: &[usize],
    mean: f64,
    std: f64,
) -> Result<Tensor<F>, NumericsError> {
    if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(NumericsError::InvalidArgument(format!(
            "gaussian needs finite mean and std >= 0, got ({mean}, {std})"
        )));
    }
    let n: usize = shape.iter().product();
    if std == 0.0 {
        return Ok(Tensor::full(shape, F::from_f64(mean)));
    }
    let data = (0..n).map(|_| F::from_f64(mean + std * rng.normal())).collect();
    Tensor::new(shape.to_vec(), data)
}

pub fn uniform<F: Scalar>(
    rng: &mut RngStream,
    shape: &[usize],
    bound: f64,
) -> Result<Tensor<F>, NumericsError> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::from_f64(rng.symmetric(bound))).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Bound of the Kaiming-uniform distribution with ReLU gain.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    RELU_GAIN * (3.0 / fan_in as f64).sqrt()
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform on `[-b, b]` with `b = sqrt(2) * sqrt(3 / fan_in) = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<F: Scalar>(
    rng: &mut RngStream,
    fan_in: usize,
    shape: &[usize],
) -> Result<Tensor<F>, NumericsError> {
    if fan_in == 0 {
        return Err(NumericsError::InvalidArgument("kaiming_uniform needs fan_in >= 1".into()));
    }
    uniform(rng, shape, kaiming_bound(fan_in))
}

/// Glorot/Xavier uniform on `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<F: Scalar>(
    rng: &mut RngStream,
    fan_in: usize,
    fan_out: usize,
    shape: &[usize],
) -> Result<Tensor<F>, NumericsError> {
    if fan_in + fan_out == 0 {
        return Err(NumericsError::InvalidArgument("xavier_uniform needs nonzero fans".into()));
    }
    uniform(rng, shape, xavier_bound(fan_in, fan_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn zero_std_is_constant() {
        let mut rng = RngStream::new(1, 0);
        let t: Tensor<f64> = gaussian(&mut rng, &[3, 2], 1.5, 0.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn negative_std_is_rejected() {
        let mut rng = RngStream::new(1, 0);
        assert!(gaussian::<f64>(&mut rng, &[2], 0.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a: Tensor<f32> = gaussian(&mut RngStream::new(1, 0), &[64], 0.0, 1.0).unwrap();
        let b: Tensor<f32> = gaussian(&mut RngStream::new(1, 0), &[64], 0.0, 1.0).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn million_standard_normals_have_unit_moments() {
        let mut rng = RngStream::new(42, 0);
        let t: Tensor<f64> = gaussian(&mut rng, &[1_000_000], 0.0, 1.0).unwrap();
        let (mean, var) = moments(t.data());
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn kaiming_bound_of_fan_in_six_is_one() {
        assert!((kaiming_bound(6) - 1.0).abs() < 1e-15);
        let mut rng = RngStream::new(5, 0);
        let t: Tensor<f64> = kaiming_uniform(&mut rng, 6, &[10_000]).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn kaiming_variance_matches_uniform_formula() {
        let mut rng = RngStream::new(9, 0);
        let fan_in = 100;
        let b = kaiming_bound(fan_in);
        let t: Tensor<f64> = kaiming_uniform(&mut rng, fan_in, &[1_000_000]).unwrap();
        let (_, var) = moments(t.data());
        let want = b * b / 3.0;
        assert!((var - want).abs() / want < 0.02, "var {var} want {want}");
    }

    #[test]
    fn kaiming_repeatable_and_rejects_zero_fan_in() {
        let a: Tensor<f32> = kaiming_uniform(&mut RngStream::new(2, 2), 10, &[20]).unwrap();
        let b: Tensor<f32> = kaiming_uniform(&mut RngStream::new(2, 2), 10, &[20]).unwrap();
        assert_eq!(a, b);
        assert!(kaiming_uniform::<f32>(&mut RngStream::new(2, 2), 0, &[1]).is_err());
    }
}
