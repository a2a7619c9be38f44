//! The two VAE architectures, their losses, and sampling procedures.
//!
//! Both models share a 32-dimensional latent space. The `fc` architecture
//! is a single-hidden-layer MLP on flattened images; the `conv`
//! architecture uses two stride-2 convolutions down and three transposed
//! convolutions back up. The loss is the per-pixel-mean binary
//! cross-entropy plus `beta` times the per-dimension-mean KL divergence,
//! so `beta` is directly the relative weight between the two averages.

use crate::conv::Padding;
use crate::error::{Error, Result};
use crate::nn::{self, ParamSet};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

pub const LATENT_DIM: usize = 32;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// Hidden width of the fc encoder and decoder.
const FC_HIDDEN: usize = 64;
/// Pixel-probability clamp: sigmoid saturation in 32-bit can emit exact
/// 0/1, which the cross-entropy logs cannot take.
const PIXEL_CLAMP: f64 = 1e-7;
/// Row chunk for no-gradient inference, bounding peak memory on large
/// batches (the conv decoder's intermediates dwarf the inputs).
const INFER_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Fc,
    Conv,
}

impl Arch {
    pub fn tag(self) -> &'static str {
        match self {
            Arch::Fc => "fc",
            Arch::Conv => "conv",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "fc" => Ok(Arch::Fc),
            "conv" => Ok(Arch::Conv),
            other => Err(Error::Format(format!(
                "unknown architecture tag {other:?} (expected \"fc\" or \"conv\")"
            ))),
        }
    }
}

/// Encoder output q(z|x): per-example mean and log-variance, both [B, 32].
#[derive(Clone, Debug)]
pub struct PosteriorGaussian<S: Scalar = f32> {
    pub mu: Tensor<S>,
    pub logvar: Tensor<S>,
}

impl<S: Scalar> PosteriorGaussian<S> {
    pub fn new(mu: Tensor<S>, logvar: Tensor<S>) -> Result<Self> {
        if mu.shape() != logvar.shape() {
            return Err(Error::Shape(format!(
                "posterior mu {:?} and logvar {:?} disagree",
                mu.shape(),
                logvar.shape()
            )));
        }
        if mu.shape().len() != 2 || mu.shape()[1] != LATENT_DIM {
            return Err(Error::Shape(format!(
                "posterior must be [batch, {LATENT_DIM}], got {:?}",
                mu.shape()
            )));
        }
        if !logvar.is_finite() || !mu.is_finite() {
            return Err(Error::Numeric("non-finite posterior parameters".into()));
        }
        Ok(PosteriorGaussian { mu, logvar })
    }

    pub fn len(&self) -> usize {
        self.mu.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows lo..hi as a new posterior.
    pub fn slice_rows(&self, lo: usize, hi: usize) -> Result<Self> {
        PosteriorGaussian::new(self.mu.rows(lo, hi)?, self.logvar.rows(lo, hi)?)
    }
}

/// z = mu + exp(0.5 logvar) * eps, elementwise.
pub fn reparam_sample<S: Scalar>(
    post: &PosteriorGaussian<S>,
    eps: &Tensor<S>,
) -> Result<Tensor<S>> {
    if eps.shape() != post.mu.shape() {
        return Err(Error::Shape(format!(
            "eps shape {:?} does not match posterior {:?}",
            eps.shape(),
            post.mu.shape()
        )));
    }
    let half = S::from_f64(0.5);
    let data = post
        .mu
        .data()
        .iter()
        .zip(post.logvar.data())
        .zip(eps.data())
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect();
    Tensor::new(post.mu.shape().to_vec(), data)
}

/// One loss evaluation, in nats. `total` is always recomputed as
/// `recon + beta * kl` in f64, so the identity holds exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub beta: f64,
}

impl LossBreakdown {
    pub fn from_parts(recon: f64, kl: f64, beta: f64) -> Self {
        LossBreakdown {
            total: recon + beta * kl,
            recon,
            kl,
            beta,
        }
    }
}

/// Parameter tensors staged onto a tape, addressable by name.
pub struct StagedParams {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl StagedParams {
    pub fn var(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("parameter {name:?} was never staged"));
        self.vars[i]
    }

    /// Vars in parameter-set order, aligned with `ParamSet` indices.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Put every parameter on the tape, as trainable leaves or as constants.
pub fn stage<S: Scalar>(tape: &mut Tape<S>, params: &ParamSet<S>, trainable: bool) -> StagedParams {
    let mut names = Vec::with_capacity(params.len());
    let mut vars = Vec::with_capacity(params.len());
    for (name, tensor) in params.iter() {
        names.push(name.to_string());
        vars.push(if trainable {
            tape.param(tensor.clone())
        } else {
            tape.input(tensor.clone())
        });
    }
    StagedParams { names, vars }
}

fn dense<S: Scalar>(
    tape: &mut Tape<S>,
    sp: &StagedParams,
    x: Var,
    w: &str,
    b: &str,
) -> Result<Var> {
    let h = tape.matmul(x, sp.var(w))?;
    tape.add_bias(h, sp.var(b))
}

/// Encoder graph: returns (mu, logvar), each [B, 32]. Accepts inputs shaped
/// [B, 784] or [B, 28, 28, 1].
pub fn encode_graph<S: Scalar>(
    tape: &mut Tape<S>,
    arch: Arch,
    sp: &StagedParams,
    x: Var,
) -> Result<(Var, Var)> {
    let batch = tape.shape(x)[0];
    let x = tape.reshape(x, vec![batch, IMAGE_PIXELS])?;
    match arch {
        Arch::Fc => {
            let h = dense(tape, sp, x, "enc.w1", "enc.b1")?;
            let h = tape.relu(h);
            let mu = dense(tape, sp, h, "enc.w_mu", "enc.b_mu")?;
            let logvar = dense(tape, sp, h, "enc.w_logvar", "enc.b_logvar")?;
            Ok((mu, logvar))
        }
        Arch::Conv => {
            let x4 = tape.reshape(x, vec![batch, IMAGE_SIDE, IMAGE_SIDE, 1])?;
            let c1 = tape.conv2d(x4, sp.var("enc.k1"), 2, Padding::Same)?;
            let c1 = tape.add_bias(c1, sp.var("enc.b1"))?;
            let c1 = tape.relu(c1);
            let c2 = tape.conv2d(c1, sp.var("enc.k2"), 2, Padding::Same)?;
            let c2 = tape.add_bias(c2, sp.var("enc.b2"))?;
            let c2 = tape.relu(c2);
            let flat = tape.reshape(c2, vec![batch, 7 * 7 * 64])?;
            let head = dense(tape, sp, flat, "enc.w_head", "enc.b_head")?;
            let mu = tape.slice_cols(head, 0, LATENT_DIM)?;
            let logvar = tape.slice_cols(head, LATENT_DIM, LATENT_DIM)?;
            Ok((mu, logvar))
        }
    }
}

/// Decoder graph: [B, 32] latents to [B, 784] pixel means in (0, 1).
pub fn decode_graph<S: Scalar>(
    tape: &mut Tape<S>,
    arch: Arch,
    sp: &StagedParams,
    z: Var,
) -> Result<Var> {
    let batch = tape.shape(z)[0];
    match arch {
        Arch::Fc => {
            let h = dense(tape, sp, z, "dec.w1", "dec.b1")?;
            let h = tape.relu(h);
            let out = dense(tape, sp, h, "dec.w2", "dec.b2")?;
            Ok(tape.sigmoid(out))
        }
        Arch::Conv => {
            let h = dense(tape, sp, z, "dec.w1", "dec.b1")?;
            let h = tape.relu(h);
            let h4 = tape.reshape(h, vec![batch, 7, 7, 32])?;
            let t1 = tape.conv2d_transpose(h4, sp.var("dec.k1"), 2)?;
            let t1 = tape.add_bias(t1, sp.var("dec.kb1"))?;
            let t1 = tape.relu(t1);
            let t2 = tape.conv2d_transpose(t1, sp.var("dec.k2"), 2)?;
            let t2 = tape.add_bias(t2, sp.var("dec.kb2"))?;
            let t2 = tape.relu(t2);
            let t3 = tape.conv2d_transpose(t2, sp.var("dec.k3"), 1)?;
            let t3 = tape.add_bias(t3, sp.var("dec.kb3"))?;
            let t3 = tape.sigmoid(t3);
            tape.reshape(t3, vec![batch, IMAGE_PIXELS])
        }
    }
}

/// z = mu + exp(0.5 logvar) * eps as graph nodes.
pub fn reparam_graph<S: Scalar>(tape: &mut Tape<S>, mu: Var, logvar: Var, eps: Var) -> Result<Var> {
    let half_lv = tape.scale(logvar, S::from_f64(0.5));
    let sigma = tape.exp(half_lv);
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

/// Handles into one full loss graph.
pub struct LossGraph {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
    pub x_hat: Var,
}

/// Full objective: encode, reparameterize with the given noise, decode,
/// then recon + beta * kl where recon is the mean binary cross-entropy per
/// pixel and kl the mean KL divergence per latent dimension.
pub fn loss_graph<S: Scalar>(
    tape: &mut Tape<S>,
    arch: Arch,
    sp: &StagedParams,
    x: Var,
    eps: Var,
    beta: f64,
) -> Result<LossGraph> {
    let batch = tape.shape(x)[0];
    let x = tape.reshape(x, vec![batch, IMAGE_PIXELS])?;
    let (mu, logvar) = encode_graph(tape, arch, sp, x)?;
    let z = reparam_graph(tape, mu, logvar, eps)?;
    let x_hat = decode_graph(tape, arch, sp, z)?;

    // -[x log xh + (1-x) log(1-xh)], averaged over batch * pixels.
    let lo = S::from_f64(PIXEL_CLAMP);
    let hi = S::from_f64(1.0 - PIXEL_CLAMP);
    let xh = tape.clamp(x_hat, lo, hi);
    let log_xh = tape.log(xh)?;
    let neg_xh = tape.scale(xh, -S::one());
    let one_minus_xh = tape.add_const(neg_xh, S::one());
    let log_1mxh = tape.log(one_minus_xh)?;
    let neg_x = tape.scale(x, -S::one());
    let one_minus_x = tape.add_const(neg_x, S::one());
    let t1 = tape.mul(x, log_xh)?;
    let t2 = tape.mul(one_minus_x, log_1mxh)?;
    let ce = tape.add(t1, t2)?;
    let ce_sum = tape.sum_all(ce);
    let recon = tape.scale(ce_sum, S::from_f64(-1.0 / (batch * IMAGE_PIXELS) as f64));

    // 0.5 (mu^2 + sigma^2 - 1 - logvar), averaged over batch * latent dims.
    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(logvar);
    let s = tape.add(mu2, var)?;
    let s = tape.add_const(s, -S::one());
    let s = tape.sub(s, logvar)?;
    let kl_sum = tape.sum_all(s);
    let kl = tape.scale(kl_sum, S::from_f64(0.5 / (batch * LATENT_DIM) as f64));

    let weighted_kl = tape.scale(kl, S::from_f64(beta));
    let total = tape.add(recon, weighted_kl)?;
    Ok(LossGraph {
        total,
        recon,
        kl,
        mu,
        logvar,
        z,
        x_hat,
    })
}

/// Reads the scalar loss values out of a built graph.
pub fn breakdown_of<S: Scalar>(tape: &Tape<S>, lg: &LossGraph, beta: f64) -> LossBreakdown {
    LossBreakdown::from_parts(
        tape.value(lg.recon).data()[0].to_f64(),
        tape.value(lg.kl).data()[0].to_f64(),
        beta,
    )
}

fn check_pixels(x: &Tensor<f32>) -> Result<()> {
    if x.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Domain(
            "encoder input pixels must lie in [0, 1]".into(),
        ));
    }
    Ok(())
}

fn flatten_images(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let shape = x.shape();
    let ok = matches!(shape, [_, IMAGE_PIXELS]) || matches!(shape, [_, IMAGE_SIDE, IMAGE_SIDE, 1]);
    if !ok {
        return Err(Error::Shape(format!(
            "images must be [batch, {IMAGE_PIXELS}] or [batch, {IMAGE_SIDE}, {IMAGE_SIDE}, 1], got {shape:?}"
        )));
    }
    let batch = shape[0];
    x.clone().reshaped(vec![batch, IMAGE_PIXELS])
}

/// A VAE: architecture choice plus its parameters. Immutable during
/// evaluation; training replaces the parameter set step by step.
#[derive(Clone, Debug)]
pub struct VaeModel {
    pub arch: Arch,
    pub params: ParamSet<f32>,
}

impl VaeModel {
    /// Fresh model: Glorot-uniform weights, zero biases, drawn from `rng`
    /// in fixed parameter order.
    pub fn init(arch: Arch, rng: &mut Rng) -> Result<Self> {
        let mut p: ParamSet<f32> = ParamSet::new();
        match arch {
            Arch::Fc => {
                p.add("enc.w1", nn::glorot_dense(rng, IMAGE_PIXELS, FC_HIDDEN)?)?;
                p.add("enc.b1", Tensor::zeros(vec![FC_HIDDEN])?)?;
                p.add("enc.w_mu", nn::glorot_dense(rng, FC_HIDDEN, LATENT_DIM)?)?;
                p.add("enc.b_mu", Tensor::zeros(vec![LATENT_DIM])?)?;
                p.add(
                    "enc.w_logvar",
                    nn::glorot_dense(rng, FC_HIDDEN, LATENT_DIM)?,
                )?;
                p.add("enc.b_logvar", Tensor::zeros(vec![LATENT_DIM])?)?;
                p.add("dec.w1", nn::glorot_dense(rng, LATENT_DIM, FC_HIDDEN)?)?;
                p.add("dec.b1", Tensor::zeros(vec![FC_HIDDEN])?)?;
                p.add("dec.w2", nn::glorot_dense(rng, FC_HIDDEN, IMAGE_PIXELS)?)?;
                p.add("dec.b2", Tensor::zeros(vec![IMAGE_PIXELS])?)?;
            }
            Arch::Conv => {
                p.add("enc.k1", nn::glorot_conv(rng, 3, 3, 1, 32)?)?;
                p.add("enc.b1", Tensor::zeros(vec![32])?)?;
                p.add("enc.k2", nn::glorot_conv(rng, 3, 3, 32, 64)?)?;
                p.add("enc.b2", Tensor::zeros(vec![64])?)?;
                p.add(
                    "enc.w_head",
                    nn::glorot_dense(rng, 7 * 7 * 64, 2 * LATENT_DIM)?,
                )?;
                p.add("enc.b_head", Tensor::zeros(vec![2 * LATENT_DIM])?)?;
                p.add("dec.w1", nn::glorot_dense(rng, LATENT_DIM, 7 * 7 * 32)?)?;
                p.add("dec.b1", Tensor::zeros(vec![7 * 7 * 32])?)?;
                p.add("dec.k1", nn::glorot_conv_transpose(rng, 3, 3, 64, 32)?)?;
                p.add("dec.kb1", Tensor::zeros(vec![64])?)?;
                p.add("dec.k2", nn::glorot_conv_transpose(rng, 3, 3, 32, 64)?)?;
                p.add("dec.kb2", Tensor::zeros(vec![32])?)?;
                p.add("dec.k3", nn::glorot_conv_transpose(rng, 3, 3, 1, 32)?)?;
                p.add("dec.kb3", Tensor::zeros(vec![1])?)?;
            }
        }
        Ok(VaeModel { arch, params: p })
    }

    /// Posterior parameters for a batch of images with pixels in [0, 1].
    pub fn encode(&self, x: &Tensor<f32>) -> Result<PosteriorGaussian> {
        check_pixels(x)?;
        let x = flatten_images(x)?;
        let n = x.shape()[0];
        let mut mu = Vec::with_capacity(n * LATENT_DIM);
        let mut logvar = Vec::with_capacity(n * LATENT_DIM);
        let mut start = 0;
        while start < n {
            let len = INFER_CHUNK.min(n - start);
            let mut tape: Tape<f32> = Tape::new();
            let sp = stage(&mut tape, &self.params, false);
            let xin = tape.input(x.rows(start, start + len)?);
            let (m, lv) = encode_graph(&mut tape, self.arch, &sp, xin)?;
            mu.extend_from_slice(tape.value(m).data());
            logvar.extend_from_slice(tape.value(lv).data());
            start += len;
        }
        PosteriorGaussian::new(
            Tensor::new(vec![n, LATENT_DIM], mu)?,
            Tensor::new(vec![n, LATENT_DIM], logvar)?,
        )
    }

    /// Pixel means for a batch of latents, shape [B, 784], each in (0, 1).
    pub fn decode(&self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let zs = z.shape();
        if zs.len() != 2 || zs[1] != LATENT_DIM {
            return Err(Error::Shape(format!(
                "latents must be [batch, {LATENT_DIM}], got {zs:?}"
            )));
        }
        if !z.is_finite() {
            return Err(Error::Numeric("non-finite latent input".into()));
        }
        let n = zs[0];
        let mut out = Vec::with_capacity(n * IMAGE_PIXELS);
        let mut start = 0;
        while start < n {
            let len = INFER_CHUNK.min(n - start);
            let mut tape: Tape<f32> = Tape::new();
            let sp = stage(&mut tape, &self.params, false);
            let zin = tape.input(z.rows(start, start + len)?);
            let xh = decode_graph(&mut tape, self.arch, &sp, zin)?;
            out.extend_from_slice(tape.value(xh).data());
            start += len;
        }
        Tensor::new(vec![n, IMAGE_PIXELS], out)
    }

    /// Prior samples decoded to pixel means; `z` rows are N(0, I) draws.
    pub fn generate(&self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.decode(z)
    }

    /// Full loss on one batch with explicit reparameterization noise.
    pub fn loss(&self, x: &Tensor<f32>, eps: &Tensor<f32>, beta: f64) -> Result<LossBreakdown> {
        check_pixels(x)?;
        let x = flatten_images(x)?;
        let mut tape: Tape<f32> = Tape::new();
        let sp = stage(&mut tape, &self.params, false);
        let xin = tape.input(x);
        let ein = tape.input(eps.clone());
        let lg = loss_graph(&mut tape, self.arch, &sp, xin, ein, beta)?;
        Ok(breakdown_of(&tape, &lg, beta))
    }

    /// The iteration x(k+1) = decode(mu(encode(x(k)))), using the mean
    /// latent vector and never sampling. Returns n_reps + 1 image batches,
    /// starting with the input itself.
    pub fn repeated_autoencode(&self, x: &Tensor<f32>, n_reps: usize) -> Result<Vec<Tensor<f32>>> {
        let mut seq = Vec::with_capacity(n_reps + 1);
        seq.push(flatten_images(x)?);
        for _ in 0..n_reps {
            let post = self.encode(seq.last().unwrap())?;
            seq.push(self.decode(&post.mu)?);
        }
        Ok(seq)
    }
}

/// [n, 32] of standard normal draws, the prior samples fed to `generate`.
pub fn sample_prior(n: usize, rng: &mut Rng) -> Result<Tensor<f32>> {
    let mut data = vec![0.0f32; n * LATENT_DIM];
    rng.fill_normal(&mut data);
    Tensor::new(vec![n, LATENT_DIM], data)
}
