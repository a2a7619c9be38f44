//! The training schedule: shuffled Adam steps with a fixed evaluation
//! cadence, the generated-loss probe, and sweeps over β.
//!
//! Every evaluation scores three populations with the same objective: the
//! current training batch, the next 50 test examples, and 50 decoded prior
//! samples re-encoded as if they were test data. A run's headline numbers
//! are the averages over its last epoch of evaluations.

use crate::augment::AugmentPool;
use crate::data::mnist::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{fit_stats, frechet_distance, ClassifierContext};
use crate::nn::Adam;
use crate::par;
use crate::rng::{derive, Rng, Stream};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::vae::{
    breakdown_of, loss_graph, sample_prior, stage, Arch, LossBreakdown, PosteriorGaussian,
    VaeModel, LATENT_DIM,
};

const ADAM_LR: f64 = 1e-3;

/// β values spanning 4.8e-4 to 4.8, two per decade.
pub const DEFAULT_BETAS: [f64; 9] = [0.00048, 0.0016, 0.0048, 0.016, 0.048, 0.16, 0.48, 1.6, 4.8];

/// Latent draws inside the training loop's evaluation cadence use offset 0
/// of the generation stream; per-epoch sample grids use 1 + epoch; sample
/// populations for distribution metrics use this offset.
pub const GEN_OFFSET_POPULATION: u64 = 1000;

#[derive(Debug, Clone, Copy)]
pub struct AugmentConfig {
    /// Training step (1-indexed) at which the pool seeds itself.
    pub gen_start_step: usize,
    /// Per-step probability that a pool slot restarts from the batch.
    pub p_sampled: f64,
    /// Pool size; the default run keeps it equal to the batch size.
    pub n_augmented: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub arch: Arch,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    /// Evaluate once every this many training steps.
    pub eval_every: usize,
    /// Generated samples per evaluation.
    pub gen_eval_n: usize,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
}

impl TrainConfig {
    /// The reference schedule: 5 epochs of 1200 steps at batch size 50,
    /// evaluating every 6 steps on 50 test examples and 50 samples.
    pub fn new(arch: Arch, beta: f64, seed: u64) -> Self {
        TrainConfig {
            arch,
            beta,
            epochs: 5,
            batch_size: 50,
            steps_per_epoch: 1200,
            eval_every: 6,
            gen_eval_n: 50,
            seed,
            augment: None,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    /// Evaluation records produced per epoch.
    pub fn evals_per_epoch(&self) -> usize {
        self.steps_per_epoch / self.eval_every
    }

    fn validate(&self, dataset: &Dataset) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Contract(format!(
                "beta must be positive and finite, got {}",
                self.beta
            )));
        }
        if self.epochs == 0
            || self.batch_size == 0
            || self.steps_per_epoch == 0
            || self.gen_eval_n == 0
        {
            return Err(Error::Contract(
                "epochs, batch size, steps per epoch, and sample count must be positive".into(),
            ));
        }
        if self.eval_every == 0 || self.steps_per_epoch % self.eval_every != 0 {
            return Err(Error::Contract(format!(
                "eval cadence {} must divide the {} steps of an epoch",
                self.eval_every, self.steps_per_epoch
            )));
        }
        if self.batch_size * self.steps_per_epoch > dataset.train_len() {
            return Err(Error::Ingest(format!(
                "an epoch consumes {} examples but the training split has {}",
                self.batch_size * self.steps_per_epoch,
                dataset.train_len()
            )));
        }
        if dataset.test_len() == 0 {
            return Err(Error::Ingest("empty test split".into()));
        }
        if let Some(a) = &self.augment {
            if a.n_augmented == 0 || a.n_augmented > self.batch_size {
                return Err(Error::Contract(format!(
                    "pool size {} must lie in [1, batch size {}]",
                    a.n_augmented, self.batch_size
                )));
            }
            if !(0.0..=1.0).contains(&a.p_sampled) {
                return Err(Error::Contract(format!(
                    "p_sampled must lie in [0, 1], got {}",
                    a.p_sampled
                )));
            }
            if a.gen_start_step == 0 {
                return Err(Error::Contract(
                    "gen_start_step is 1-indexed and must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Losses observed at one evaluation step.
#[derive(Debug, Clone, Copy)]
pub struct EvalRecord {
    /// Training step (1-indexed) after which the evaluation ran.
    pub step: usize,
    pub train: LossBreakdown,
    pub test: LossBreakdown,
    pub gen: LossBreakdown,
}

/// Last-epoch averages: recon and kl are averaged across records, totals
/// recomputed from the averages.
#[derive(Debug, Clone, Copy)]
pub struct RunSummary {
    pub train: LossBreakdown,
    pub test: LossBreakdown,
    pub gen: LossBreakdown,
}

pub struct RunHistory {
    pub records: Vec<EvalRecord>,
    pub summary: RunSummary,
}

pub fn run_training(config: &TrainConfig, dataset: &Dataset) -> Result<(VaeModel, RunHistory)> {
    run_training_with(config, dataset, |_, _, _| Ok(()))
}

/// As [`run_training`], invoking `on_epoch(epoch_index, model, records)`
/// after each epoch completes.
pub fn run_training_with(
    config: &TrainConfig,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(usize, &VaeModel, &[EvalRecord]) -> Result<()>,
) -> Result<(VaeModel, RunHistory)> {
    config.validate(dataset)?;
    let seed = config.seed;
    let beta = config.beta;
    let mut model = VaeModel::init(config.arch, &mut Rng::new(seed, Stream::Init, 0))?;
    let mut shuffle_rng = Rng::new(seed, Stream::Shuffle, 0);
    let mut train_eps_rng = Rng::new(seed, Stream::TrainEps, 0);
    let mut eval_eps_rng = Rng::new(seed, Stream::EvalEps, 0);
    let mut gen_rng = Rng::new(seed, Stream::Gen, 0);
    let mut augment_rng = Rng::new(seed, Stream::Augment, 0);
    let mut adam = Adam::new(ADAM_LR);
    let mut pool = match &config.augment {
        Some(a) => Some(AugmentPool::new(
            a.n_augmented,
            a.p_sampled,
            a.gen_start_step,
        )?),
        None => None,
    };
    let mut records = Vec::with_capacity(config.epochs * config.evals_per_epoch());
    let mut order: Vec<usize> = (0..dataset.train_len()).collect();
    let mut test_cursor = 0usize;
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        for i in 0..config.steps_per_epoch {
            step += 1;
            let idx = &order[i * config.batch_size..(i + 1) * config.batch_size];
            let batch = dataset.train_images.gather_rows(idx)?;
            let batch = match &pool {
                Some(p) => p.augment_batch(&model, &batch)?,
                None => batch,
            };
            let rows = batch.shape()[0];
            let eps = normal_tensor(&mut train_eps_rng, rows)?;

            let mut tape: Tape<f32> = Tape::new();
            let sp = stage(&mut tape, &model.params, true);
            let x = tape.input(batch);
            let ein = tape.input(eps);
            let lg = loss_graph(&mut tape, config.arch, &sp, x, ein, beta)?;
            let train_loss = breakdown_of(&tape, &lg, beta);
            let posterior =
                PosteriorGaussian::new(tape.value(lg.mu).clone(), tape.value(lg.logvar).clone())?;
            let mut grads = tape.backward(lg.total)?;
            let grads: Vec<Option<Tensor<f32>>> =
                sp.vars().iter().map(|&v| grads.take(v)).collect();
            drop(tape);
            adam.step(&mut model.params, &grads)?;

            if let Some(p) = &mut pool {
                if step == p.gen_start_step() {
                    let eps = normal_tensor(&mut augment_rng, p.n_augmented())?;
                    p.init(&posterior, &eps)?;
                } else if p.is_active() {
                    let n = p.n_augmented();
                    let batch_post = posterior.slice_rows(0, config.batch_size)?;
                    let variant_post =
                        posterior.slice_rows(config.batch_size, config.batch_size + n)?;
                    p.update(&batch_post, &variant_post, &mut augment_rng)?;
                }
            }

            if step % config.eval_every == 0 {
                let test_idx: Vec<usize> = (0..config.gen_eval_n)
                    .map(|j| (test_cursor + j) % dataset.test_len())
                    .collect();
                test_cursor = (test_cursor + config.gen_eval_n) % dataset.test_len();
                let test_batch = dataset.test_images.gather_rows(&test_idx)?;
                let test_eps = normal_tensor(&mut eval_eps_rng, config.gen_eval_n)?;
                let test = model.loss(&test_batch, &test_eps, beta)?;
                let gen = generated_eval(
                    &model,
                    beta,
                    config.gen_eval_n,
                    &mut gen_rng,
                    &mut eval_eps_rng,
                )?;
                records.push(EvalRecord {
                    step,
                    train: train_loss,
                    test,
                    gen,
                });
            }
        }
        on_epoch(epoch, &model, &records)?;
    }
    let summary = summarize(&records, config.evals_per_epoch(), beta);
    Ok((model, RunHistory { records, summary }))
}

fn normal_tensor(rng: &mut Rng, rows: usize) -> Result<Tensor<f32>> {
    let mut data = vec![0.0f32; rows * LATENT_DIM];
    rng.fill_normal(&mut data);
    Tensor::new(vec![rows, LATENT_DIM], data)
}

fn generated_eval(
    model: &VaeModel,
    beta: f64,
    n: usize,
    gen_rng: &mut Rng,
    eval_eps_rng: &mut Rng,
) -> Result<LossBreakdown> {
    let z = sample_prior(n, gen_rng)?;
    let samples = model.decode(&z)?;
    let eps = normal_tensor(eval_eps_rng, n)?;
    model.loss(&samples, &eps, beta)
}

fn summarize(records: &[EvalRecord], last: usize, beta: f64) -> RunSummary {
    let tail = &records[records.len() - last.min(records.len())..];
    let avg = |pick: fn(&EvalRecord) -> LossBreakdown| {
        let n = tail.len() as f64;
        let recon = tail.iter().map(|r| pick(r).recon).sum::<f64>() / n;
        let kl = tail.iter().map(|r| pick(r).kl).sum::<f64>() / n;
        LossBreakdown::from_parts(recon, kl, beta)
    };
    RunSummary {
        train: avg(|r| r.train),
        test: avg(|r| r.test),
        gen: avg(|r| r.gen),
    }
}

/// Decodes `n` prior samples and scores them with the full objective as if
/// they were test data: the samples are re-encoded with fresh noise.
pub fn measure_generated_loss(
    model: &VaeModel,
    beta: f64,
    n: usize,
    seed: u64,
) -> Result<LossBreakdown> {
    let mut gen_rng = Rng::new(seed, Stream::Gen, 0);
    let mut eps_rng = Rng::new(seed, Stream::EvalEps, 0);
    generated_eval(model, beta, n, &mut gen_rng, &mut eps_rng)
}

/// Decoded prior samples for distribution metrics, drawn from a stream
/// offset reserved for populations so they never overlap training draws.
pub fn sample_population(model: &VaeModel, n: usize, seed: u64) -> Result<Tensor<f32>> {
    let z = sample_prior(n, &mut Rng::new(seed, Stream::Gen, GEN_OFFSET_POPULATION))?;
    model.decode(&z)
}

/// Fréchet distance between the classifier-logit Gaussian of `n` generated
/// samples and the context's real-data Gaussian.
pub fn fid_of_model(model: &VaeModel, ctx: &ClassifierContext, n: usize, seed: u64) -> Result<f64> {
    let samples = sample_population(model, n, seed)?;
    let logits = ctx.model.logits(&samples)?;
    frechet_distance(&ctx.global, &fit_stats(&logits)?)
}

/// One sweep entry: the trained model and its headline numbers.
pub struct SweepRun {
    pub beta: f64,
    pub seed: u64,
    pub model: VaeModel,
    pub history: RunHistory,
    pub fid: f64,
}

/// Samples drawn per model for sweep FID scores.
pub const SWEEP_FID_SAMPLES: usize = 10000;

/// Trains one model per β and scores each with FID over 10000 samples.
/// Failures are recorded per β; the sweep keeps going.
pub fn sweep(
    betas: &[f64],
    base: &TrainConfig,
    dataset: &Dataset,
    ctx: &ClassifierContext,
    jobs: usize,
) -> Vec<(f64, Result<SweepRun>)> {
    let inputs: Vec<(usize, f64)> = betas.iter().copied().enumerate().collect();
    let outcomes = par::run_jobs(inputs, jobs, |(index, beta)| {
        (beta, sweep_run(index, beta, base, dataset, ctx))
    });
    outcomes
}

/// One β run with its own seed derived from the base seed and grid index.
pub fn sweep_run(
    index: usize,
    beta: f64,
    base: &TrainConfig,
    dataset: &Dataset,
    ctx: &ClassifierContext,
) -> Result<SweepRun> {
    let mut config = *base;
    config.beta = beta;
    config.seed = derive(base.seed, index as u64);
    let (model, history) = run_training(&config, dataset)?;
    let fid = fid_of_model(&model, ctx, SWEEP_FID_SAMPLES, config.seed)?;
    Ok(SweepRun {
        beta,
        seed: config.seed,
        model,
        history,
        fid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset(train: usize, test: usize) -> Dataset {
        let pixel = |i: usize| ((i * 37) % 97) as f32 / 96.0;
        Dataset {
            train_images: Tensor::from_fn(vec![train, 784], pixel).unwrap(),
            train_labels: vec![0; train],
            test_images: Tensor::from_fn(vec![test, 784], |i| pixel(i + 11)).unwrap(),
            test_labels: vec![0; test],
        }
    }

    fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig {
            arch: Arch::Fc,
            beta: 0.048,
            epochs: 2,
            batch_size: 4,
            steps_per_epoch: 3,
            eval_every: 3,
            gen_eval_n: 4,
            seed,
            augment: None,
        }
    }

    #[test]
    fn schedule_validation_catches_mismatches() {
        let dataset = tiny_dataset(12, 4);
        let mut bad_beta = tiny_config(1);
        bad_beta.beta = 0.0;
        assert!(bad_beta.validate(&dataset).is_err());
        let mut bad_cadence = tiny_config(1);
        bad_cadence.eval_every = 2;
        assert!(bad_cadence.validate(&dataset).is_err());
        let mut too_big = tiny_config(1);
        too_big.steps_per_epoch = 6;
        let err = too_big.validate(&dataset).unwrap_err().to_string();
        assert!(err.contains("training split"), "{err}");
        let mut bad_pool = tiny_config(1);
        bad_pool.augment = Some(AugmentConfig {
            gen_start_step: 2,
            p_sampled: 0.5,
            n_augmented: 5,
        });
        assert!(bad_pool.validate(&dataset).is_err());
    }

    #[test]
    fn record_cadence_and_steps() {
        let dataset = tiny_dataset(12, 4);
        let (_, history) = run_training(&tiny_config(7), &dataset).unwrap();
        assert_eq!(history.records.len(), 2);
        assert_eq!(history.records[0].step, 3);
        assert_eq!(history.records[1].step, 6);
        for r in &history.records {
            for b in [r.train, r.test, r.gen] {
                assert!(b.total.is_finite());
                assert!(b.recon > 0.0);
                assert!(b.kl >= 0.0);
                assert!((b.total - (b.recon + b.beta * b.kl)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn summary_averages_the_last_epoch() {
        let dataset = tiny_dataset(12, 4);
        let config = tiny_config(7);
        let (_, history) = run_training(&config, &dataset).unwrap();
        let tail = &history.records[history.records.len() - config.evals_per_epoch()..];
        let want_recon = tail.iter().map(|r| r.test.recon).sum::<f64>() / tail.len() as f64;
        assert!((history.summary.test.recon - want_recon).abs() < 1e-15);
        let s = history.summary.train;
        assert!((s.total - (s.recon + config.beta * s.kl)).abs() < 1e-15);
    }

    #[test]
    fn same_seed_reproduces_the_run() {
        let dataset = tiny_dataset(12, 4);
        let (model_a, hist_a) = run_training(&tiny_config(9), &dataset).unwrap();
        let (model_b, hist_b) = run_training(&tiny_config(9), &dataset).unwrap();
        for i in 0..model_a.params.len() {
            assert_eq!(
                model_a.params.tensor(i).data(),
                model_b.params.tensor(i).data()
            );
        }
        for (a, b) in hist_a.records.iter().zip(&hist_b.records) {
            assert_eq!(a.train.total, b.train.total);
            assert_eq!(a.test.total, b.test.total);
            assert_eq!(a.gen.total, b.gen.total);
        }
        let (_, hist_c) = run_training(&tiny_config(10), &dataset).unwrap();
        assert_ne!(hist_a.records[0].train.total, hist_c.records[0].train.total);
    }

    #[test]
    fn epoch_callback_sees_progress() {
        let dataset = tiny_dataset(12, 4);
        let mut seen = Vec::new();
        run_training_with(&tiny_config(3), &dataset, |epoch, _, records| {
            seen.push((epoch, records.len()));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn augmented_run_diverges_after_pool_start() {
        let dataset = tiny_dataset(12, 4);
        let mut config = tiny_config(5);
        config.augment = Some(AugmentConfig {
            gen_start_step: 2,
            p_sampled: 0.5,
            n_augmented: 4,
        });
        let (_, plain) = run_training(&tiny_config(5), &dataset).unwrap();
        let (_, augmented) = run_training(&config, &dataset).unwrap();
        // Step 3's training batch is extended, so its loss differs.
        assert_ne!(
            plain.records[0].train.total,
            augmented.records[0].train.total
        );
        assert_eq!(plain.records.len(), augmented.records.len());
    }

    #[test]
    fn generated_loss_probe_is_deterministic() {
        let mut rng = Rng::new(2, Stream::Init, 0);
        let model = VaeModel::init(Arch::Fc, &mut rng).unwrap();
        let a = measure_generated_loss(&model, 0.048, 50, 4).unwrap();
        let b = measure_generated_loss(&model, 0.048, 50, 4).unwrap();
        assert_eq!(a.total, b.total);
        let c = measure_generated_loss(&model, 0.048, 50, 5).unwrap();
        assert_ne!(a.total, c.total);
    }

    #[test]
    fn population_has_pixel_range_and_size() {
        let mut rng = Rng::new(2, Stream::Init, 0);
        let model = VaeModel::init(Arch::Fc, &mut rng).unwrap();
        let pop = sample_population(&model, 17, 6).unwrap();
        assert_eq!(pop.shape(), &[17, 784]);
        assert!(pop.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
