//! Latent-pool batch augmentation.
//!
//! Once training reaches a chosen step, a pool of latent vectors is seeded
//! from the batch posterior. From then on every training batch is extended
//! with the pool's decoded variants, and after the step each pool slot either
//! restarts from a fresh batch example (probability `p_sampled`) or follows
//! its own variant chain by re-sampling the posterior of the variant it just
//! produced. Slot lifetimes are therefore geometric with mean 1/p_sampled.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::vae::{reparam_sample, PosteriorGaussian, VaeModel, LATENT_DIM};

pub struct AugmentPool {
    latents: Option<Tensor<f32>>,
    n_augmented: usize,
    p_sampled: f64,
    gen_start_step: usize,
}

impl AugmentPool {
    pub fn new(n_augmented: usize, p_sampled: f64, gen_start_step: usize) -> Result<Self> {
        if n_augmented == 0 {
            return Err(Error::Contract("pool needs at least one slot".into()));
        }
        if !(0.0..=1.0).contains(&p_sampled) {
            return Err(Error::Contract(format!(
                "p_sampled must lie in [0, 1], got {p_sampled}"
            )));
        }
        Ok(AugmentPool {
            latents: None,
            n_augmented,
            p_sampled,
            gen_start_step,
        })
    }

    pub fn n_augmented(&self) -> usize {
        self.n_augmented
    }

    pub fn p_sampled(&self) -> f64 {
        self.p_sampled
    }

    /// Training step (1-indexed) at which the pool seeds itself and batches
    /// start being extended.
    pub fn gen_start_step(&self) -> usize {
        self.gen_start_step
    }

    pub fn is_active(&self) -> bool {
        self.latents.is_some()
    }

    pub fn latents(&self) -> Option<&Tensor<f32>> {
        self.latents.as_ref()
    }

    /// Seeds the pool with sampled latents of the first `n_augmented` batch
    /// examples. `eps` must be `[n_augmented, 32]`.
    pub fn init(
        &mut self,
        batch_posterior: &PosteriorGaussian<f32>,
        eps: &Tensor<f32>,
    ) -> Result<()> {
        if self.latents.is_some() {
            return Err(Error::Contract(
                "augmentation pool initialized twice".into(),
            ));
        }
        if batch_posterior.len() < self.n_augmented {
            return Err(Error::Contract(format!(
                "seeding {} pool slots from a batch of {} examples",
                self.n_augmented,
                batch_posterior.len()
            )));
        }
        let head = batch_posterior.slice_rows(0, self.n_augmented)?;
        self.latents = Some(reparam_sample(&head, eps)?);
        Ok(())
    }

    /// Appends the pool's decoded variants to a `[B, 784]` batch. Inactive
    /// pools return the batch unchanged. Variants are plain pixel data; no
    /// gradient flows back into their generation.
    pub fn augment_batch(&self, model: &VaeModel, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        match &self.latents {
            None => Ok(batch.clone()),
            Some(latents) => {
                let variants = model.decode(latents)?;
                batch.concat_rows(&variants)
            }
        }
    }

    /// Refreshes every slot after a training step. Per slot, with probability
    /// `p_sampled` the latent restarts as the sampled latent of a batch
    /// example drawn without replacement; otherwise it becomes the sampled
    /// latent of the slot's own variant. Returns the per-slot restart mask.
    ///
    /// Draw order from `rng` is fixed: one restart decision per slot, then
    /// the without-replacement batch indices, then 32 noise values per slot
    /// for all slots.
    pub fn update(
        &mut self,
        batch_posterior: &PosteriorGaussian<f32>,
        variant_posterior: &PosteriorGaussian<f32>,
        rng: &mut Rng,
    ) -> Result<Vec<bool>> {
        let n = self.n_augmented;
        let latents = self
            .latents
            .as_mut()
            .ok_or_else(|| Error::Contract("updating an inactive augmentation pool".into()))?;
        if variant_posterior.len() != n {
            return Err(Error::Contract(format!(
                "{} variant posteriors for {n} pool slots",
                variant_posterior.len()
            )));
        }
        let restart: Vec<bool> = (0..n).map(|_| rng.next_bernoulli(self.p_sampled)).collect();
        let restarts = restart.iter().filter(|&&r| r).count();
        if restarts > batch_posterior.len() {
            return Err(Error::Contract(format!(
                "{restarts} slot restarts requested from a batch of {} examples",
                batch_posterior.len()
            )));
        }
        let picks = rng.sample_distinct(restarts, batch_posterior.len());
        let mut pick_iter = picks.into_iter();
        let mut eps = [0.0f32; LATENT_DIM];
        for (slot, dst) in latents.data_mut().chunks_exact_mut(LATENT_DIM).enumerate() {
            rng.fill_normal(&mut eps);
            let (mu, logvar) = if restart[slot] {
                let i = pick_iter.next().expect("one pick per restart");
                (batch_posterior.mu.row(i), batch_posterior.logvar.row(i))
            } else {
                (
                    variant_posterior.mu.row(slot),
                    variant_posterior.logvar.row(slot),
                )
            };
            for d in 0..LATENT_DIM {
                dst[d] = mu[d] + (0.5 * logvar[d]).exp() * eps[d];
            }
        }
        Ok(restart)
    }
}
