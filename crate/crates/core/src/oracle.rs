//! Slow, independent reference computations used to check the fast paths:
//! finite-difference derivatives and a dense symmetric eigensolver.

/// Central-difference gradient with per-coordinate step
/// `rel_step · max(1, |θᵢ|)`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, theta: &[f64], rel_step: f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let h = rel_step * theta[i].abs().max(1.0);
            x[i] = theta[i] + h;
            let up = f(&x);
            x[i] = theta[i] - h;
            let down = f(&x);
            x[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Hessian from second differences of `f` alone (no gradients):
/// `[f(++) − f(+−) − f(−+) + f(−−)] / 4h²`, with the pure second
/// difference on the diagonal. Row-major `n × n`.
pub fn fd_hessian(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let n = theta.len();
    let mut x = theta.to_vec();
    let f0 = f(&x);
    let mut hess = vec![0.0; n * n];
    for i in 0..n {
        x[i] = theta[i] + 2.0 * h;
        let pp = f(&x);
        x[i] = theta[i] - 2.0 * h;
        let mm = f(&x);
        x[i] = theta[i];
        hess[i * n + i] = (pp - 2.0 * f0 + mm) / (4.0 * h * h);
        for j in i + 1..n {
            let mut eval = |si: f64, sj: f64| {
                x[i] = theta[i] + si * h;
                x[j] = theta[j] + sj * h;
                let v = f(&x);
                x[i] = theta[i];
                x[j] = theta[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h * h);
            hess[i * n + j] = v;
            hess[j * n + i] = v;
        }
    }
    hess
}

/// `max|a − b| / max|b|` (normwise relative error; absolute when `b` is 0).
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Eigenvalues of a symmetric row-major `n × n` matrix by cyclic Jacobi
/// rotations, sorted descending.
pub fn symmetric_eigenvalues(matrix: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s
    };
    let total: f64 = a.iter().map(|v| v * v).sum();
    for _sweep in 0..100 {
        if off(&a) <= 1e-30 * total.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}
