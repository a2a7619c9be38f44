//! Generation quality scored through a small digit classifier.
//!
//! A trained classifier turns each image into a 10-logit vector. Populations
//! of logits are summarized as Gaussians; generated and real populations are
//! compared with the Fréchet distance, and single samples are scored with
//! chi-squared p-values of their Mahalanobis distance, either against the
//! global logit Gaussian or against the Gaussian of the class the classifier
//! itself assigns.

use std::path::Path;

use crate::conv::Padding;
use crate::data::checkpoint;
use crate::data::mnist::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::nn::{glorot_conv, glorot_dense, Adam, ParamSet};
use crate::par;
use crate::rng::{Rng, Stream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vae::{stage, StagedParams, IMAGE_PIXELS, IMAGE_SIDE};

pub const LOGIT_DIM: usize = 10;
const HEAD_INPUT: usize = 7 * 7 * 32;
const EPOCHS: usize = 3;
const BATCH: usize = 100;
const LEARNING_RATE: f64 = 1e-3;
const ACCURACY_FLOOR: f64 = 0.97;
const RIDGE: f64 = 1e-6;
const INFER_CHUNK: usize = 512;
const CONTEXT_TAG: &str = "classifier-ctx";

/// How many training images feed the global logit Gaussian used for Fréchet
/// scores and unconditional p-values.
pub const GLOBAL_STATS_SAMPLES: usize = 10000;

/// Two strided 3x3 convolutions and a dense layer onto 10 logits.
pub struct ClassifierModel {
    pub params: ParamSet<f32>,
}

impl ClassifierModel {
    pub fn init(rng: &mut Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        params.add("conv1.k", glorot_conv(rng, 3, 3, 1, 16)?)?;
        params.add("conv1.b", Tensor::zeros(vec![16])?)?;
        params.add("conv2.k", glorot_conv(rng, 3, 3, 16, 32)?)?;
        params.add("conv2.b", Tensor::zeros(vec![32])?)?;
        params.add("head.w", glorot_dense(rng, HEAD_INPUT, LOGIT_DIM)?)?;
        params.add("head.b", Tensor::zeros(vec![LOGIT_DIM])?)?;
        Ok(ClassifierModel { params })
    }

    /// Logits for `[N, 784]` images, evaluated in fixed-size chunks.
    pub fn logits(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let shape = images.shape();
        if shape.len() != 2 || shape[1] != IMAGE_PIXELS {
            return Err(Error::Shape(format!(
                "classifier expects [N, {IMAGE_PIXELS}] images, got {shape:?}"
            )));
        }
        let n = shape[0];
        let mut out = Vec::with_capacity(n * LOGIT_DIM);
        let mut start = 0;
        while start < n {
            let len = INFER_CHUNK.min(n - start);
            let mut tape: Tape<f32> = Tape::new();
            let sp = stage(&mut tape, &self.params, false);
            let x = tape.input(images.rows(start, start + len)?);
            let logits = logits_graph(&mut tape, &sp, x)?;
            out.extend_from_slice(tape.value(logits).data());
            start += len;
        }
        Tensor::new(vec![n, LOGIT_DIM], out)
    }

    pub fn predict(&self, images: &Tensor<f32>) -> Result<Vec<usize>> {
        let logits = self.logits(images)?;
        Ok((0..images.shape()[0])
            .map(|i| argmax(logits.row(i)))
            .collect())
    }

    pub fn accuracy(&self, images: &Tensor<f32>, labels: &[u8]) -> Result<f64> {
        let predicted = self.predict(images)?;
        if predicted.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions against {} labels",
                predicted.len(),
                labels.len()
            )));
        }
        let hits = predicted
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p == **l as usize)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn logits_graph(tape: &mut Tape<f32>, sp: &StagedParams, x: Var) -> Result<Var> {
    let batch = tape.shape(x)[0];
    let x4 = tape.reshape(x, vec![batch, IMAGE_SIDE, IMAGE_SIDE, 1])?;
    let c1 = tape.conv2d(x4, sp.var("conv1.k"), 2, Padding::Same)?;
    let c1 = tape.add_bias(c1, sp.var("conv1.b"))?;
    let c1 = tape.relu(c1);
    let c2 = tape.conv2d(c1, sp.var("conv2.k"), 2, Padding::Same)?;
    let c2 = tape.add_bias(c2, sp.var("conv2.b"))?;
    let c2 = tape.relu(c2);
    let flat = tape.reshape(c2, vec![batch, HEAD_INPUT])?;
    let h = tape.matmul(flat, sp.var("head.w"))?;
    tape.add_bias(h, sp.var("head.b"))
}

/// Trains the classifier for three epochs of cross-entropy under Adam and
/// returns it with its test accuracy. Fails if accuracy lands below 97%.
pub fn train_classifier(dataset: &Dataset, seed: u64) -> Result<(ClassifierModel, f64)> {
    let mut model = ClassifierModel::init(&mut Rng::new(seed, Stream::Classifier, 0))?;
    let mut shuffle_rng = Rng::new(seed, Stream::Classifier, 1);
    let mut adam = Adam::new(LEARNING_RATE);
    let n = dataset.train_len();
    let steps = n / BATCH;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..EPOCHS {
        shuffle_rng.shuffle(&mut order);
        for step in 0..steps {
            let idx = &order[step * BATCH..(step + 1) * BATCH];
            let images = dataset.train_images.gather_rows(idx)?;
            let labels: Vec<usize> = idx
                .iter()
                .map(|&i| dataset.train_labels[i] as usize)
                .collect();
            let mut tape: Tape<f32> = Tape::new();
            let sp = stage(&mut tape, &model.params, true);
            let x = tape.input(images);
            let logits = logits_graph(&mut tape, &sp, x)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Option<Tensor<f32>>> =
                sp.vars().iter().map(|&v| grads.take(v)).collect();
            adam.step(&mut model.params, &grads)?;
        }
    }
    let accuracy = model.accuracy(&dataset.test_images, &dataset.test_labels)?;
    if accuracy < ACCURACY_FLOOR {
        return Err(Error::Contract(format!(
            "classifier reached {accuracy:.4} test accuracy, below the required {ACCURACY_FLOOR}"
        )));
    }
    Ok((model, accuracy))
}

/// Mean and covariance of a logit population, kept in f64. The covariance
/// carries a 1e-6 ridge on the diagonal so it is always invertible.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    mean: Vec<f64>,
    cov: Vec<f64>,
    count: usize,
}

impl GaussianStats {
    /// Builds stats from explicit parts. The covariance is taken verbatim
    /// (no ridge is added) and must be symmetric within 1e-6.
    pub fn from_parts(mean: Vec<f64>, cov: Vec<f64>, count: usize) -> Result<Self> {
        let dim = mean.len();
        if cov.len() != dim * dim {
            return Err(Error::Shape(format!(
                "covariance of {} entries for dimension {dim}",
                cov.len()
            )));
        }
        for j in 0..dim {
            for k in (j + 1)..dim {
                if (cov[j * dim + k] - cov[k * dim + j]).abs() > 1e-6 {
                    return Err(Error::Numeric(format!(
                        "covariance asymmetric at ({j}, {k}): {} vs {}",
                        cov[j * dim + k],
                        cov[k * dim + j]
                    )));
                }
            }
        }
        Ok(GaussianStats { mean, cov, count })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Sample mean and covariance (divisor N−1) of `[N, dim]` logits, plus the
/// diagonal ridge. Needs at least two rows.
pub fn fit_stats(logits: &Tensor<f32>) -> Result<GaussianStats> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::Shape(format!("fit_stats on shape {shape:?}")));
    }
    let (n, dim) = (shape[0], shape[1]);
    if n < 2 {
        return Err(Error::Contract(format!(
            "covariance needs at least 2 samples, got {n}"
        )));
    }
    let mut mean = vec![0.0f64; dim];
    for row in logits.data().chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0f64; dim * dim];
    let mut centered = vec![0.0f64; dim];
    for row in logits.data().chunks_exact(dim) {
        for (c, (&v, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
            *c = v as f64 - m;
        }
        for j in 0..dim {
            for k in j..dim {
                cov[j * dim + k] += centered[j] * centered[k];
            }
        }
    }
    let divisor = (n - 1) as f64;
    for j in 0..dim {
        for k in j..dim {
            let v = cov[j * dim + k] / divisor;
            cov[j * dim + k] = v;
            cov[k * dim + j] = v;
        }
        cov[j * dim + j] += RIDGE;
    }
    Ok(GaussianStats {
        mean,
        cov,
        count: n,
    })
}

/// Squared Wasserstein-2 distance between two Gaussians:
/// ‖m_a−m_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a^½ Σ_b Σ_a^½)^½).
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::Shape(format!(
            "distance between dimensions {n} and {}",
            b.dim()
        )));
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let sqrt_a = linalg::sqrt_psd(&a.cov, n, neg_tol(&a.cov))?;
    let inner = linalg::matmul_sq(&linalg::matmul_sq(&sqrt_a, &b.cov, n), &sqrt_a, n);
    let sqrt_inner = linalg::sqrt_psd(&inner, n, neg_tol(&inner))?;
    let trace_term =
        linalg::trace(&a.cov, n) + linalg::trace(&b.cov, n) - 2.0 * linalg::trace(&sqrt_inner, n);
    Ok((mean_term + trace_term).max(0.0))
}

/// Negative-eigenvalue budget scaled to the matrix: rounding in the
/// eigendecomposition can push true zeros slightly negative, and the slack
/// grows with the entries' magnitude.
fn neg_tol(matrix: &[f64]) -> f64 {
    let max_abs = matrix.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    1e-9 * max_abs.max(1.0)
}

/// Chi-squared CDF for even k via the closed form
/// 1 − e^{−x/2} Σ_{i<k/2} (x/2)^i / i!.
pub fn chi2_cdf(x: f64, k: usize) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Domain(format!("chi-squared CDF of negative {x}")));
    }
    if k == 0 || k % 2 != 0 {
        return Err(Error::Contract(format!(
            "closed-form chi-squared CDF needs even positive k, got {k}"
        )));
    }
    let h = x / 2.0;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for i in 1..(k / 2) {
        term *= h / i as f64;
        sum += term;
    }
    Ok((1.0 - (-h).exp() * sum).clamp(0.0, 1.0))
}

/// (x−m)ᵀ Σ⁻¹ (x−m) via a Cholesky solve.
pub fn mahalanobis_sq(x: &[f64], stats: &GaussianStats) -> Result<f64> {
    let n = stats.dim();
    if x.len() != n {
        return Err(Error::Shape(format!(
            "point of dimension {} against stats of dimension {n}",
            x.len()
        )));
    }
    let l = linalg::cholesky(&stats.cov, n)?;
    let diff: Vec<f64> = x.iter().zip(&stats.mean).map(|(a, b)| a - b).collect();
    let y = linalg::solve_lower(&l, &diff, n);
    Ok(y.iter().map(|v| v * v).sum())
}

pub fn unconditional_p_value(logits: &[f64], global: &GaussianStats) -> Result<f64> {
    let d2 = mahalanobis_sq(logits, global)?;
    Ok(1.0 - chi2_cdf(d2, global.dim())?)
}

#[derive(Debug, Clone, Copy)]
pub struct PValueResult {
    /// Class the classifier assigns (argmax logit, ties to the lowest index).
    pub label: usize,
    pub d2: f64,
    pub p: f64,
}

/// Scores logits against the Gaussian of their own argmax class.
pub fn conditional_p_value(logits: &[f64], per_class: &[GaussianStats]) -> Result<PValueResult> {
    if per_class.len() != LOGIT_DIM || logits.len() != LOGIT_DIM {
        return Err(Error::Contract(format!(
            "conditional score needs {LOGIT_DIM} logits and {LOGIT_DIM} class stats, got {} and {}",
            logits.len(),
            per_class.len()
        )));
    }
    let label = argmax(logits);
    let stats = &per_class[label];
    let d2 = mahalanobis_sq(logits, stats)?;
    let p = 1.0 - chi2_cdf(d2, stats.dim())?;
    Ok(PValueResult { label, d2, p })
}

/// Conditional p-values for every row of an `[N, 10]` logit tensor.
pub fn conditional_p_values(
    logits: &Tensor<f32>,
    per_class: &[GaussianStats],
) -> Result<Vec<PValueResult>> {
    let n = logits.shape()[0];
    par::map_indexed(n, |i| conditional_p_value(&row_f64(logits, i), per_class))
        .into_iter()
        .collect()
}

/// Unconditional p-values for every row of an `[N, 10]` logit tensor.
pub fn unconditional_p_values(logits: &Tensor<f32>, global: &GaussianStats) -> Result<Vec<f64>> {
    let n = logits.shape()[0];
    par::map_indexed(n, |i| unconditional_p_value(&row_f64(logits, i), global))
        .into_iter()
        .collect()
}

fn row_f64(t: &Tensor<f32>, i: usize) -> Vec<f64> {
    t.row(i).iter().map(|&v| v as f64).collect()
}

fn argmax<T: PartialOrd>(xs: &[T]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

/// Five-number summary plus mean, with quantiles linearly interpolated at
/// rank q(n−1).
#[derive(Debug, Clone, Copy)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

pub fn quartiles(values: &[f64]) -> Result<Quartiles> {
    if values.is_empty() {
        return Err(Error::Contract("quartiles of an empty set".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let at = |q: f64| {
        let rank = q * (sorted.len() - 1) as f64;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        let w = rank - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    };
    Ok(Quartiles {
        min: sorted[0],
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
        max: sorted[sorted.len() - 1],
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
    })
}

/// Everything the quality metrics need: the classifier, its measured test
/// accuracy, the global logit Gaussian over a seeded 10000-image subset of
/// the training split, and one Gaussian per predicted class over the full
/// training split.
pub struct ClassifierContext {
    pub model: ClassifierModel,
    pub accuracy: f64,
    pub global: GaussianStats,
    pub per_class: Vec<GaussianStats>,
}

pub fn build_context(dataset: &Dataset, seed: u64) -> Result<ClassifierContext> {
    let (model, accuracy) = train_classifier(dataset, seed)?;
    let logits = model.logits(&dataset.train_images)?;
    let n = dataset.train_len();
    let subset = Rng::new(seed, Stream::Stats, 0).sample_distinct(GLOBAL_STATS_SAMPLES.min(n), n);
    let global = fit_stats(&logits.gather_rows(&subset)?)?;
    let mut grouped: Vec<Vec<usize>> = vec![Vec::new(); LOGIT_DIM];
    for i in 0..n {
        grouped[argmax(logits.row(i))].push(i);
    }
    let mut per_class = Vec::with_capacity(LOGIT_DIM);
    for (class, rows) in grouped.iter().enumerate() {
        if rows.len() < 2 {
            return Err(Error::Contract(format!(
                "classifier predicts class {class} for only {} training images",
                rows.len()
            )));
        }
        per_class.push(fit_stats(&logits.gather_rows(rows)?)?);
    }
    Ok(ClassifierContext {
        model,
        accuracy,
        global,
        per_class,
    })
}

pub fn save_context(path: &Path, ctx: &ClassifierContext) -> Result<()> {
    let mut params = ParamSet::new();
    for (name, tensor) in ctx.model.params.iter() {
        params.add(&format!("clf.{name}"), tensor.clone())?;
    }
    params.add("accuracy", Tensor::new(vec![1], vec![ctx.accuracy as f32])?)?;
    add_stats(&mut params, "global", &ctx.global)?;
    for (class, stats) in ctx.per_class.iter().enumerate() {
        add_stats(&mut params, &format!("class{class}"), stats)?;
    }
    checkpoint::save_params(path, CONTEXT_TAG, &params)
}

pub fn load_context(path: &Path) -> Result<ClassifierContext> {
    let (tag, params) = checkpoint::load_params(path)?;
    if tag != CONTEXT_TAG {
        return Err(Error::Format(format!(
            "{}: tag {tag:?} is not a classifier context",
            path.display()
        )));
    }
    let template = ClassifierModel::init(&mut Rng::new(0, Stream::Classifier, 0))?;
    let mut model_params = ParamSet::new();
    for i in 0..template.params.len() {
        let name = template.params.name(i);
        let tensor = fetch(&params, path, &format!("clf.{name}"))?;
        if tensor.shape() != template.params.tensor(i).shape() {
            return Err(Error::Format(format!(
                "{}: {name} has shape {:?}, expected {:?}",
                path.display(),
                tensor.shape(),
                template.params.tensor(i).shape()
            )));
        }
        model_params.add(name, tensor.clone())?;
    }
    let accuracy = fetch(&params, path, "accuracy")?.item()? as f64;
    let global = read_stats(&params, path, "global")?;
    let per_class = (0..LOGIT_DIM)
        .map(|class| read_stats(&params, path, &format!("class{class}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassifierContext {
        model: ClassifierModel {
            params: model_params,
        },
        accuracy,
        global,
        per_class,
    })
}

/// Loads the cached context if the file exists; otherwise trains one, saves
/// it, and reloads it so in-memory stats carry the file's f32 rounding and a
/// fresh build behaves identically to a cached run.
pub fn load_or_build_context(
    path: &Path,
    dataset: &Dataset,
    seed: u64,
) -> Result<ClassifierContext> {
    if !path.exists() {
        let ctx = build_context(dataset, seed)?;
        save_context(path, &ctx)?;
    }
    load_context(path)
}

fn add_stats(params: &mut ParamSet<f32>, prefix: &str, stats: &GaussianStats) -> Result<()> {
    let dim = stats.dim();
    params.add(
        &format!("{prefix}.mean"),
        Tensor::new(vec![dim], stats.mean.iter().map(|&v| v as f32).collect())?,
    )?;
    params.add(
        &format!("{prefix}.cov"),
        Tensor::new(
            vec![dim, dim],
            stats.cov.iter().map(|&v| v as f32).collect(),
        )?,
    )?;
    params.add(
        &format!("{prefix}.count"),
        Tensor::new(vec![1], vec![stats.count as f32])?,
    )?;
    Ok(())
}

fn read_stats(params: &ParamSet<f32>, path: &Path, prefix: &str) -> Result<GaussianStats> {
    let mean = fetch(params, path, &format!("{prefix}.mean"))?;
    let cov = fetch(params, path, &format!("{prefix}.cov"))?;
    let count = fetch(params, path, &format!("{prefix}.count"))?.item()? as usize;
    let dim = mean.numel();
    if cov.shape() != [dim, dim] {
        return Err(Error::Format(format!(
            "{}: {prefix}.cov has shape {:?} for dimension {dim}",
            path.display(),
            cov.shape()
        )));
    }
    GaussianStats::from_parts(
        mean.data().iter().map(|&v| v as f64).collect(),
        cov.data().iter().map(|&v| v as f64).collect(),
        count,
    )
}

fn fetch<'p>(params: &'p ParamSet<f32>, path: &Path, name: &str) -> Result<&'p Tensor<f32>> {
    params
        .get(name)
        .ok_or_else(|| Error::Format(format!("{}: missing tensor {name:?}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_stats(mean: Vec<f64>, diag: &[f64]) -> GaussianStats {
        let dim = mean.len();
        let mut cov = vec![0.0; dim * dim];
        for (i, &d) in diag.iter().enumerate() {
            cov[i * dim + i] = d;
        }
        GaussianStats::from_parts(mean, cov, 100).unwrap()
    }

    #[test]
    fn classifier_logits_shape_and_determinism() {
        let mut rng = Rng::new(5, Stream::Classifier, 0);
        let model = ClassifierModel::init(&mut rng).unwrap();
        let images = Tensor::from_fn(vec![3, IMAGE_PIXELS], |i| (i % 7) as f32 / 7.0).unwrap();
        let a = model.logits(&images).unwrap();
        let b = model.logits(&images).unwrap();
        assert_eq!(a.shape(), &[3, LOGIT_DIM]);
        assert!(a.is_finite());
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn identical_rows_leave_only_the_ridge() {
        let logits = Tensor::from_fn(vec![12, LOGIT_DIM], |i| (i % LOGIT_DIM) as f32).unwrap();
        let stats = fit_stats(&logits).unwrap();
        for j in 0..LOGIT_DIM {
            for k in 0..LOGIT_DIM {
                let want = if j == k { RIDGE } else { 0.0 };
                assert!((stats.cov()[j * LOGIT_DIM + k] - want).abs() < 1e-12);
            }
        }
        assert_eq!(stats.count(), 12);
    }

    #[test]
    fn two_point_covariance_by_hand() {
        let mut data = vec![0.0f32; 2 * LOGIT_DIM];
        data[0] = 1.0;
        data[LOGIT_DIM] = -1.0;
        let stats = fit_stats(&Tensor::new(vec![2, LOGIT_DIM], data).unwrap()).unwrap();
        assert!(stats.mean().iter().all(|&m| m.abs() < 1e-12));
        assert!((stats.cov()[0] - (2.0 + RIDGE)).abs() < 1e-12);
        assert!((stats.cov()[LOGIT_DIM + 1] - RIDGE).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples_are_rejected() {
        let logits = Tensor::<f32>::zeros(vec![1, LOGIT_DIM]).unwrap();
        assert!(fit_stats(&logits).is_err());
    }

    #[test]
    fn frechet_mean_shift_only() {
        let a = diag_stats(vec![0.0; 10], &[1.0; 10]);
        let mut shifted = vec![0.0; 10];
        shifted[3] = 2.0;
        shifted[7] = -1.0;
        let b = diag_stats(shifted, &[1.0; 10]);
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 5.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn frechet_diagonal_closed_form() {
        let da = [1.0, 2.0, 3.0, 0.5, 4.0, 1.5, 2.5, 0.25, 1.0, 9.0];
        let db = [2.0, 1.0, 3.0, 4.0, 0.5, 2.0, 1.0, 1.0, 6.0, 0.1];
        let a = diag_stats(vec![0.0; 10], &da);
        let b = diag_stats(vec![0.0; 10], &db);
        let want: f64 = da
            .iter()
            .zip(&db)
            .map(|(x, y)| (x.sqrt() - y.sqrt()) * (x.sqrt() - y.sqrt()))
            .sum();
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - want).abs() < 1e-9, "{d} vs {want}");
    }

    #[test]
    fn frechet_rejects_indefinite_covariance() {
        let mut cov = vec![0.0; 100];
        for i in 0..10 {
            cov[i * 10 + i] = 1.0;
        }
        cov[0] = -1.0;
        let bad = GaussianStats::from_parts(vec![0.0; 10], cov, 50).unwrap();
        let good = diag_stats(vec![0.0; 10], &[1.0; 10]);
        let err = frechet_distance(&bad, &good).unwrap_err().to_string();
        assert!(err.contains("eigenvalue"), "{err}");
    }

    #[test]
    fn chi2_cdf_known_points() {
        assert_eq!(chi2_cdf(0.0, 10).unwrap(), 0.0);
        assert!(chi2_cdf(200.0, 10).unwrap() >= 1.0 - 1e-12);
        let near_95 = chi2_cdf(18.307, 10).unwrap();
        assert!((near_95 - 0.95).abs() < 5e-4, "{near_95}");
        assert!(chi2_cdf(-0.1, 10).is_err());
        assert!(chi2_cdf(1.0, 7).is_err());
    }

    #[test]
    fn p_value_is_one_at_the_mean() {
        let stats = diag_stats(vec![1.0; 10], &[2.0; 10]);
        let p = unconditional_p_value(&vec![1.0; 10], &stats).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn unit_covariance_matches_chi2_radius() {
        let stats = diag_stats(vec![0.0; 10], &[1.0; 10]);
        let mut x = vec![0.0; 10];
        x[0] = 18.307f64.sqrt();
        let p = unconditional_p_value(&x, &stats).unwrap();
        assert!((p - 0.05).abs() < 5e-4, "{p}");
    }

    #[test]
    fn conditional_ties_break_to_lowest_class() {
        let per_class: Vec<GaussianStats> = (0..10)
            .map(|c| diag_stats(vec![c as f64; 10], &[1.0; 10]))
            .collect();
        let logits = vec![3.0, 3.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let result = conditional_p_value(&logits, &per_class).unwrap();
        assert_eq!(result.label, 0);
    }

    #[test]
    fn conditional_scores_against_own_class() {
        let per_class: Vec<GaussianStats> = (0..10)
            .map(|c| {
                let mut mean = vec![0.0; 10];
                mean[c] = 5.0;
                diag_stats(mean, &[1.0; 10])
            })
            .collect();
        let mut logits = vec![0.0; 10];
        logits[4] = 5.0;
        let result = conditional_p_value(&logits, &per_class).unwrap();
        assert_eq!(result.label, 4);
        assert_eq!(result.p, 1.0);
        assert!(result.d2.abs() < 1e-9);
    }

    #[test]
    fn quartiles_of_a_line() {
        let values: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let q = quartiles(&values).unwrap();
        assert_eq!(q.min, 0.0);
        assert_eq!(q.q1, 1.0);
        assert_eq!(q.median, 2.0);
        assert_eq!(q.q3, 3.0);
        assert_eq!(q.max, 4.0);
        assert_eq!(q.mean, 2.0);
    }

    #[test]
    fn context_cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ctx.ckpt");
        let mut rng = Rng::new(9, Stream::Classifier, 0);
        let model = ClassifierModel::init(&mut rng).unwrap();
        let global = diag_stats(vec![0.5; 10], &[1.0; 10]);
        let per_class = (0..10)
            .map(|c| diag_stats(vec![c as f64; 10], &[2.0; 10]))
            .collect();
        let ctx = ClassifierContext {
            model,
            accuracy: 0.98,
            global,
            per_class,
        };
        save_context(&path, &ctx).unwrap();
        let loaded = load_context(&path).unwrap();
        assert!((loaded.accuracy - 0.98).abs() < 1e-6);
        assert_eq!(loaded.global.count(), 100);
        assert_eq!(loaded.per_class.len(), 10);
        assert!((loaded.per_class[3].mean()[0] - 3.0).abs() < 1e-6);
        for i in 0..ctx.model.params.len() {
            assert_eq!(
                ctx.model.params.tensor(i).data(),
                loaded.model.params.tensor(i).data()
            );
        }
    }
}
