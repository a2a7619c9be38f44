//! Trainable parameter sets, Glorot initialization, and the Adam optimizer.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Ordered collection of named parameter tensors. Iteration order is
/// insertion order, which fixes both the initialization draw order and the
/// checkpoint layout.
#[derive(Clone, Debug)]
pub struct ParamSet<S: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<S>) -> Result<()> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::Contract(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn tensor(&self, index: usize) -> &Tensor<S> {
        &self.tensors[index]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<S> {
        &mut self.tensors[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Converts element type, e.g. to run a gradient check in f64.
    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// Glorot uniform draw: U(-limit, limit) with limit = sqrt(6 / (fan_in +
/// fan_out)). Values land strictly inside the bound; draws that would round
/// onto it are rejected and redrawn.
pub fn glorot<S: Scalar>(
    rng: &mut Rng,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> Result<Tensor<S>> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        loop {
            let w = S::from_f64((2.0 * rng.next_f64() - 1.0) * limit);
            if w.to_f64().abs() < limit {
                data.push(w);
                break;
            }
        }
    }
    Tensor::new(shape, data)
}

/// Dense kernel [fan_in, fan_out].
pub fn glorot_dense<S: Scalar>(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Result<Tensor<S>> {
    glorot(rng, vec![fan_in, fan_out], fan_in, fan_out)
}

/// Convolution kernel [kh, kw, ci, co]; fans count the receptive field.
pub fn glorot_conv<S: Scalar>(
    rng: &mut Rng,
    kh: usize,
    kw: usize,
    ci: usize,
    co: usize,
) -> Result<Tensor<S>> {
    glorot(rng, vec![kh, kw, ci, co], kh * kw * ci, kh * kw * co)
}

/// Transposed-convolution kernel [kh, kw, co, ci] for a layer mapping ci
/// input channels to co output channels.
pub fn glorot_conv_transpose<S: Scalar>(
    rng: &mut Rng,
    kh: usize,
    kw: usize,
    co: usize,
    ci: usize,
) -> Result<Tensor<S>> {
    glorot(rng, vec![kh, kw, co, ci], kh * kw * ci, kh * kw * co)
}

/// Adam with bias correction: m and v track first and second gradient
/// moments, and each update is lr * m_hat / (sqrt(v_hat) + eps).
pub struct Adam<S: Scalar = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update. `grads[i]` pairs with parameter `i`; a None entry
    /// leaves that parameter and its moments untouched.
    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &[Option<Tensor<S>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if self.m.is_empty() {
            self.m = (0..params.len())
                .map(|i| Tensor::full(params.tensor(i).shape().to_vec(), S::zero()))
                .collect::<Result<_>>()?;
            self.v = self.m.clone();
        }
        self.t += 1;
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one = S::one();
        let corr1 = S::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = S::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = S::from_f64(self.lr);
        let eps = S::from_f64(self.eps);
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            if g.shape() != params.tensor(i).shape() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} does not match parameter {:?} of shape {:?}",
                    g.shape(),
                    params.name(i),
                    params.tensor(i).shape()
                )));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.tensor_mut(i).data_mut();
            for (((pv, mv), vv), &gv) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / corr1;
                let v_hat = *vv / corr2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}
