//! Self-checks of the derivative, curvature and statistics code against
//! slow independent references. Used by `overparam verify`.

use overparam_core::landscape::power_iteration;
use overparam_core::nn::{Mode, ModelSpec, ModelState};
use overparam_core::numerics::RngStream;
use overparam_core::oracle::{fd_gradient, max_rel_error, symmetric_eigenvalues};
use overparam_core::stats::{bootstrap_ci, welch_t};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

fn batch(spec: &ModelSpec, n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = RngStream::new(seed, 99);
    let x = (0..n * spec.input_len()).map(|_| rng.normal()).collect();
    let y = (0..n).map(|_| rng.below(spec.classes) as u8).collect();
    (x, y)
}

/// Initialized model with every coordinate (biases included) nudged.
fn perturbed(spec: &ModelSpec, seed: u64) -> ModelState<f64> {
    let mut m = ModelState::build(spec, &mut RngStream::new(seed, 1)).expect("valid spec");
    let mut rng = RngStream::new(seed, 77);
    for v in m.theta_mut() {
        *v += 0.05 * rng.normal();
    }
    m
}

/// Backprop against central differences on 20 random MLP instances.
pub fn gradient_vs_finite_differences() -> Check {
    let mut worst = 0.0f64;
    for draw in 0..20u64 {
        let spec = ModelSpec::mlp_with_input(6 + draw as usize % 7, 3 + draw as usize % 4).with_classes(4);
        let mut m = perturbed(&spec, draw);
        let (x, y) = batch(&spec, 6, draw);
        let theta = m.theta().to_vec();
        let (_, grad) = m.loss_and_grad(&x, &y, Mode::Train).expect("shapes agree");
        let f = |th: &[f64]| {
            let t = ModelState::from_parts(spec.clone(), th.to_vec(), None).expect("same length");
            t.loss_with(&x, &y, Mode::Train).expect("shapes agree")
        };
        worst = worst.max(max_rel_error(grad.data(), &fd_gradient(f, &theta, 1e-6)));
    }
    Check::new("gradient vs finite differences (20 MLPs)", worst < 1e-5, format!("max rel err {worst:.2e} < 1e-5"))
}

/// Same comparison for a small CNN, in both BatchNorm modes. The small step
/// keeps the differences from straddling ReLU and max-pool kinks.
pub fn cnn_gradient_vs_finite_differences() -> Check {
    let spec = ModelSpec::cnn_with_input([2, 8, 8], 1);
    let m = perturbed(&spec, 3);
    let (x, y) = batch(&spec, 4, 3);
    let mut worst = 0.0f64;
    for mode in [Mode::Train, Mode::Eval] {
        let mut mm = m.clone();
        let (_, grad) = mm.loss_and_grad(&x, &y, mode).expect("shapes agree");
        let f = |th: &[f64]| {
            let t = ModelState::from_parts(spec.clone(), th.to_vec(), Some(m.bn.clone())).expect("same length");
            t.loss_with(&x, &y, mode).expect("shapes agree")
        };
        worst = worst.max(max_rel_error(grad.data(), &fd_gradient(f, m.theta(), 1e-6)));
    }
    Check::new("CNN gradient vs finite differences", worst < 1e-5, format!("max rel err {worst:.2e} < 1e-5"))
}

fn eval_grad(spec: &ModelSpec, m: &ModelState<f64>, theta: Vec<f64>, x: &[f64], y: &[u8]) -> Vec<f64> {
    let mut t = ModelState::from_parts(spec.clone(), theta, Some(m.bn.clone())).expect("same length");
    t.loss_and_grad(x, y, Mode::Eval).expect("shapes agree").1.into_vec()
}

/// Exact Hessian-vector products against differences of gradients.
pub fn hvp_vs_gradient_differences() -> Check {
    let mut worst = 0.0f64;
    for spec in [ModelSpec::mlp_with_input(10, 4), ModelSpec::cnn_with_input([1, 8, 8], 1)] {
        for draw in 0..5u64 {
            let m = perturbed(&spec, 40 + draw);
            let (x, y) = batch(&spec, 8, 40 + draw);
            let mut rng = RngStream::new(draw, 5);
            let v: Vec<f64> = (0..m.num_params()).map(|_| rng.normal()).collect();
            let hv = m.hvp(&x, &y, &v).expect("shapes agree");
            let eps = 1e-6;
            let shift = |s: f64| m.theta().iter().zip(&v).map(|(t, d)| t + s * eps * d).collect::<Vec<_>>();
            let gp = eval_grad(&spec, &m, shift(1.0), &x, &y);
            let gm = eval_grad(&spec, &m, shift(-1.0), &x, &y);
            let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
            worst = worst.max(max_rel_error(hv.data(), &fd));
        }
    }
    Check::new("Hessian-vector product vs gradient differences", worst < 1e-4, format!("max rel err {worst:.2e} < 1e-4"))
}

/// Assemble a full Hessian column by column and test its symmetry.
pub fn hessian_symmetry() -> Check {
    let spec = ModelSpec::mlp_with_input(5, 4);
    let m = perturbed(&spec, 11);
    let (x, y) = batch(&spec, 8, 11);
    let n = m.num_params();
    let mut h = vec![0.0; n * n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = m.hvp(&x, &y, &e).expect("shapes agree");
        for i in 0..n {
            h[i * n + j] = col.data()[i];
        }
    }
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((h[i * n + j] - h[j * n + i]).abs());
        }
    }
    let rel = asym / h.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Check::new("assembled Hessian symmetry", rel < 1e-6, format!("{n}x{n}, max rel asymmetry {rel:.2e} < 1e-6"))
}

/// Symmetric `n × n` matrix with eigenvalues `eig` in a random orthonormal basis.
pub fn random_symmetric(n: usize, eig: &[f64], rng: &mut RngStream) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|a| a / norm).collect());
    }
    let mut m = vec![0.0; n * n];
    for (k, u) in q.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] += eig[k] * u[i] * u[j];
            }
        }
    }
    m
}

/// 30-step power iteration against a dense Jacobi solve on 20 matrices whose
/// top eigenvalue exceeds the next largest magnitude by a factor in [1.2, 3].
pub fn power_iteration_vs_dense() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = RngStream::new(seed, 42);
        let n = 8 + rng.below(17);
        let gap = 1.2 + 1.8 * rng.uniform();
        let mut eig: Vec<f64> = (1..n).map(|_| rng.symmetric(1.0)).collect();
        eig[0] = 1.0;
        eig.insert(0, gap);
        let m = random_symmetric(n, &eig, &mut rng);
        let want = symmetric_eigenvalues(&m, n)[0];
        let report = power_iteration(n, 30, &mut RngStream::new(seed, 5), |v| {
            Ok::<_, ()>((0..n).map(|i| (0..n).map(|j| m[i * n + j] * v[j]).sum()).collect())
        })
        .expect("infallible operator");
        worst = worst.max((report.lambda_max - want).abs() / want.abs());
    }
    Check::new("power iteration vs dense eigensolver (20 matrices)", worst < 1e-4, format!("max rel err {worst:.2e} < 1e-4"))
}

pub fn bootstrap_behaviour() -> Check {
    let v = [84.1, 85.3, 84.9, 85.0, 84.4];
    let a = bootstrap_ci(&v, 1000, &mut RngStream::new(3, 7));
    let b = bootstrap_ci(&v, 1000, &mut RngStream::new(3, 7));
    let flat = bootstrap_ci(&[2.5; 4], 1000, &mut RngStream::new(3, 7));
    let passed = a.is_ok() && a == b && flat == Ok((2.5, 2.5));
    Check::new("bootstrap determinism and zero-width constant CI", passed, format!("{a:?}, constant {flat:?}"))
}

pub fn welch_behaviour() -> Check {
    let a = [85.5, 85.6, 85.4];
    let b = [83.2, 83.4, 83.3];
    let (Ok(ab), Ok(ba)) = (welch_t(&a, &b), welch_t(&b, &a)) else {
        return Check::new("Welch t-test", false, "unexpected error".into());
    };
    let t = 2.2 / (0.02f64 / 3.0).sqrt();
    let passed = (ab.t - t).abs() < 1e-9 && ab.p < 1e-3 && ab.t == -ba.t && ab.p == ba.p;
    Check::new("Welch t-test hand example and antisymmetry", passed, format!("t {:.3}, dof {:.2}, p {:.2e}", ab.t, ab.dof, ab.p))
}

pub fn all() -> Vec<Check> {
    vec![
        gradient_vs_finite_differences(),
        cnn_gradient_vs_finite_differences(),
        hvp_vs_gradient_differences(),
        hessian_symmetry(),
        power_iteration_vs_dense(),
        bootstrap_behaviour(),
        welch_behaviour(),
    ]
}
