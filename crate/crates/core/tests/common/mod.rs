//! Oracles and fixtures shared by the integration suites. Each suite uses
//! a subset, so the unused-code lint is off for the whole module.
#![allow(dead_code)]

pub mod grad_suite;

use std::path::PathBuf;
use std::sync::LazyLock;

use vaelab::data::mnist::{load_mnist, Dataset};
use vaelab::linalg::cholesky;
use vaelab::nn::ParamSet;
use vaelab::rng::{Rng, Stream};
use vaelab::tape::{Tape, Var};
use vaelab::tensor::Tensor;
use vaelab::vae::{stage, Arch, StagedParams, VaeModel};

/// MNIST directory: `$VAELAB_DATA_DIR`, else the repository's data/mnist.
pub fn data_dir() -> PathBuf {
    std::env::var_os("VAELAB_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub static DATASET: LazyLock<Dataset> =
    LazyLock::new(|| load_mnist(&data_dir()).expect("MNIST files present (set VAELAB_DATA_DIR)"));

// ---------------------------------------------------------------------------
// Central finite differences.

pub struct FdReport {
    pub checked: usize,
    pub worst: f64,
    /// Where the worst error sits: tensor name, flat index, analytic
    /// gradient, and the central-difference slope.
    pub worst_at: String,
}

/// Checks d(loss)/d(every picked parameter coordinate) against a central
/// difference. `build` must stage `params` on the tape and return a scalar
/// loss var; it is re-invoked for every probe, so it has to be a pure
/// function of the parameter values.
pub fn check_gradients(
    params: &ParamSet<f64>,
    picks_per_tensor: usize,
    h: f64,
    build: &dyn Fn(&mut Tape<f64>, &StagedParams) -> Var,
) -> FdReport {
    let mut tape: Tape<f64> = Tape::new();
    let sp = stage(&mut tape, params, true);
    let loss = build(&mut tape, &sp);
    assert_eq!(tape.shape(loss), &[1], "loss must be scalar");
    let mut grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Option<Tensor<f64>>> = sp.vars().iter().map(|&v| grads.take(v)).collect();
    drop(tape);

    let value_at = |p: &ParamSet<f64>| -> f64 {
        let mut tape: Tape<f64> = Tape::new();
        let sp = stage(&mut tape, p, true);
        let loss = build(&mut tape, &sp);
        tape.value(loss).data()[0]
    };

    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for t in 0..params.len() {
        let len = params.tensor(t).data().len();
        let picks = pick_indices(len, picks_per_tensor, t);
        for i in picks {
            let g = analytic[t].as_ref().map_or(0.0, |g| g.data()[i]);
            let probe = |step: f64| -> (f64, f64) {
                let mut plus = params.clone();
                plus.tensor_mut(t).data_mut()[i] += step;
                let mut minus = params.clone();
                minus.tensor_mut(t).data_mut()[i] -= step;
                let slope = (value_at(&plus) - value_at(&minus)) / (2.0 * step);
                let rel = (slope - g).abs() / slope.abs().max(g.abs()).max(1e-4);
                (slope, rel)
            };
            // A kink (relu, clamp) sits at a fixed parameter distance d from
            // the probe point and contaminates the difference only while
            // h > d, so shrinking h clears it. A wrong analytic gradient
            // stays wrong at every step size.
            let (mut slope, mut rel) = probe(h);
            for shrink in [10.0, 100.0] {
                if rel <= 1e-5 {
                    break;
                }
                let (s2, r2) = probe(h / shrink);
                if r2 < rel {
                    slope = s2;
                    rel = r2;
                }
            }
            if rel > worst {
                worst = rel;
                worst_at = format!(
                    "{}[{i}]: analytic {g:.6e}, slope {slope:.6e}",
                    params.name(t)
                );
            }
            checked += 1;
        }
    }
    FdReport {
        checked,
        worst,
        worst_at,
    }
}

/// Up to `k` evenly spaced indices into a length-`len` tensor, phase-shifted
/// per tensor so different tensors probe different residues.
fn pick_indices(len: usize, k: usize, salt: usize) -> Vec<usize> {
    if len <= k {
        return (0..len).collect();
    }
    let stride = len / k;
    let phase = (salt * 7919) % stride.max(1);
    (0..k).map(|j| (j * stride + phase) % len).collect()
}

/// Loss = sum(v ⊙ w) with fixed pseudo-random weights, so every output
/// coordinate feeds the scalar with a distinct coefficient.
pub fn weighted_sum(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let shape = tape.shape(v).to_vec();
    let len: usize = shape.iter().product();
    let mut rng = Rng::new(seed, Stream::Stats, 77);
    let data: Vec<f64> = (0..len).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
    let w = tape.input(Tensor::new(shape, data).unwrap());
    let prod = tape.mul(v, w).unwrap();
    tape.sum_all(prod)
}

/// Random f64 tensor with entries in (lo, hi).
pub fn uniform_tensor(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f64> {
    let len = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| lo + (hi - lo) * rng.next_f64()).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn normal_tensor_f64(shape: Vec<usize>, rng: &mut Rng) -> Tensor<f64> {
    let len = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.next_normal()).collect();
    Tensor::new(shape, data).unwrap()
}

// ---------------------------------------------------------------------------
// Chi-squared quadrature oracle.

fn chi2_pdf(t: f64, k: usize) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let half = k as f64 / 2.0;
    // Γ(k/2) for even k is (k/2 − 1)!.
    let mut gamma = 1.0;
    for i in 1..(k / 2) {
        gamma *= i as f64;
    }
    (t / 2.0).powf(half - 1.0) * (-t / 2.0).exp() / (2.0 * gamma)
}

fn simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let split = left + right;
    if depth == 0 || (split - whole).abs() <= 15.0 * tol {
        split + (split - whole) / 15.0
    } else {
        simpson(f, a, m, fa, flm, fm, tol / 2.0, depth - 1)
            + simpson(f, m, b, fm, frm, fb, tol / 2.0, depth - 1)
    }
}

/// CDF of chi-squared with `k` degrees of freedom by adaptive Simpson
/// integration of the density, accurate to roughly 1e-9.
pub fn chi2_cdf_quadrature(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let f = |t: f64| chi2_pdf(t, k);
    simpson(&f, 0.0, x, f(0.0), f(0.5 * x), f(x), 1e-10, 48).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Distribution statistics.

/// Kolmogorov-Smirnov statistic of a sample against Uniform(0, 1).
pub fn ks_uniform(ps: &[f64]) -> f64 {
    let mut sorted = ps.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, p) in sorted.iter().enumerate() {
        let hi = ((i + 1) as f64 / n - p).abs();
        let lo = (p - i as f64 / n).abs();
        d = d.max(hi).max(lo);
    }
    d
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

// ---------------------------------------------------------------------------
// Synthetic Gaussians.

/// Random symmetric positive-definite matrix A·Aᵀ + 0.1·I.
pub fn random_psd(dim: usize, scale: f64, rng: &mut Rng) -> Vec<f64> {
    let a: Vec<f64> = (0..dim * dim).map(|_| rng.next_normal() * scale).collect();
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            let mut s = 0.0;
            for k in 0..dim {
                s += a[i * dim + k] * a[j * dim + k];
            }
            out[i * dim + j] = s + if i == j { 0.1 } else { 0.0 };
        }
    }
    out
}

/// Draws `n` samples from N(mean, cov) through the Cholesky factor.
pub fn sample_gaussian(mean: &[f64], cov: &[f64], n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let dim = mean.len();
    let l = cholesky(cov, dim).expect("covariance is positive definite");
    (0..n)
        .map(|_| {
            let eps: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
            (0..dim)
                .map(|i| {
                    let mut v = mean[i];
                    for j in 0..=i {
                        v += l[i * dim + j] * eps[j];
                    }
                    v
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// KL Monte Carlo oracle and the bias-rigged encoder that pins a posterior.

/// Monte Carlo estimate of mean KL(q‖p) per latent dimension, with
/// antithetic noise pairs. `draws` counts pairs.
pub fn mc_kl_mean(mu: &[f32], logvar: &[f32], draws: usize, rng: &mut Rng) -> f64 {
    let dim = mu.len();
    let estimate = |eps: &[f64]| -> f64 {
        let mut s = 0.0;
        for d in 0..dim {
            let m = mu[d] as f64;
            let lv = logvar[d] as f64;
            let z = m + (0.5 * lv).exp() * eps[d];
            s += z * z - eps[d] * eps[d] - lv;
        }
        0.5 * s / dim as f64
    };
    let mut total = 0.0;
    for _ in 0..draws {
        let eps: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
        let neg: Vec<f64> = eps.iter().map(|e| -e).collect();
        total += 0.5 * (estimate(&eps) + estimate(&neg));
    }
    total / draws as f64
}

/// Fully-connected model whose encoder ignores its input: the first dense
/// layer is zeroed, so mu and logvar come straight from the head biases.
pub fn pinned_posterior_model(mu: &[f32], logvar: &[f32]) -> VaeModel {
    let mut model = VaeModel::init(Arch::Fc, &mut Rng::new(9, Stream::Init, 0)).unwrap();
    zero_param(&mut model.params, "enc.w1");
    set_param(&mut model.params, "enc.b_mu", mu);
    set_param(&mut model.params, "enc.b_logvar", logvar);
    model
}

fn param_index(params: &ParamSet<f32>, name: &str) -> usize {
    (0..params.len())
        .find(|&i| params.name(i) == name)
        .unwrap_or_else(|| panic!("no parameter named {name}"))
}

pub fn zero_param(params: &mut ParamSet<f32>, name: &str) {
    let i = param_index(params, name);
    for v in params.tensor_mut(i).data_mut() {
        *v = 0.0;
    }
}

pub fn set_param(params: &mut ParamSet<f32>, name: &str, values: &[f32]) {
    let i = param_index(params, name);
    let data = params.tensor_mut(i).data_mut();
    assert_eq!(data.len(), values.len(), "size mismatch for {name}");
    data.copy_from_slice(values);
}

/// Random pixel batch with values strictly inside (0, 1).
pub fn pixel_batch(n: usize, rng: &mut Rng) -> Tensor<f32> {
    let data: Vec<f32> = (0..n * 784)
        .map(|_| 0.02 + 0.96 * rng.next_f64() as f32)
        .collect();
    Tensor::new(vec![n, 784], data).unwrap()
}
