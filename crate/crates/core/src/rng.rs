//! Deterministic counter-based random numbers.
//!
//! Every random draw in the crate comes from a [`Rng`] keyed by a run seed
//! and a stream id. Streams decouple consumers from each other: inserting
//! an extra draw in one stream never shifts the values another stream sees,
//! which is what makes reruns byte-for-byte reproducible even as features
//! are toggled on and off.

/// Weyl increment from the SplitMix64 generator.
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stafford's "mix13" finalizer, the SplitMix64 output mix.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named random streams. Each consumer owns one stream so draw counts in
/// one place cannot perturb another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Parameter initialization.
    Init,
    /// Dataset shuffling.
    Shuffle,
    /// Reparameterization noise during training steps.
    TrainEps,
    /// Reparameterization noise during loss evaluation.
    EvalEps,
    /// Latent draws for generated samples.
    Gen,
    /// Augmentation pool decisions and replacement noise.
    Augment,
    /// Classifier training.
    Classifier,
    /// Subsampling for statistics fitting.
    Stats,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Shuffle => 2,
            Stream::TrainEps => 3,
            Stream::EvalEps => 4,
            Stream::Gen => 5,
            Stream::Augment => 6,
            Stream::Classifier => 7,
            Stream::Stats => 8,
        }
    }
}

/// Counter-based generator: output i is a hash of (key, i), so a stream can
/// be replayed or skipped to any position without generating the prefix.
#[derive(Clone, Debug)]
pub struct Rng {
    key: u64,
    counter: u64,
    /// Cached second normal variate from the Box-Muller pair.
    spare_normal: Option<f64>,
}

/// Odd multiplier hashing the offset axis, distinct from the stream axis so
/// no (stream, offset) pair can alias another by arithmetic coincidence.
const OFFSET_MULT: u64 = 0xD1B5_4A32_D192_ED03;

/// A fresh seed deterministically derived from a base seed and a salt, used
/// to give each run in a sweep its own independent stream family.
pub fn derive(seed: u64, salt: u64) -> u64 {
    mix64(seed ^ mix64(salt.wrapping_mul(GOLDEN_GAMMA)))
}

impl Rng {
    /// Generator for a (seed, stream) pair. `offset` separates repeated uses
    /// of the same stream, e.g. one sample population per epoch. Seed,
    /// stream, and offset are hashed independently before combining.
    pub fn new(seed: u64, stream: Stream, offset: u64) -> Self {
        let key = mix64(
            mix64(seed ^ GOLDEN_GAMMA)
                ^ mix64(stream.id().wrapping_mul(GOLDEN_GAMMA))
                ^ mix64(offset.wrapping_mul(OFFSET_MULT)),
        );
        Rng {
            key,
            counter: 0,
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix64(
            self.key
                .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform on the half-open interval [0, 1), with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on (0, 1], safe as a log argument.
    #[inline]
    fn next_f64_open_zero(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, bound) by rejection, free of modulo bias.
    pub fn next_below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "next_below needs a positive bound");
        let bound = bound as u64;
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % bound) as usize;
            }
        }
    }

    /// Standard normal via Box-Muller; pairs are cached so consecutive
    /// calls use both variates.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_f64_open_zero();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn next_bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fill with standard normals.
    pub fn fill_normal(&mut self, out: &mut [f32]) {
        for v in out {
            *v = self.next_normal() as f32;
        }
    }

    /// Fisher-Yates shuffle of index order.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct values drawn from [0, n) without replacement, in draw
    /// order (partial Fisher-Yates over a scratch index vector).
    pub fn sample_distinct(&mut self, k: usize, n: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct values from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
