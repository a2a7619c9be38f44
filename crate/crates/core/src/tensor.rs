//! Dense row-major tensors over `f32` or `f64`.
//!
//! Training runs in `f32`; the same code instantiated with `f64` backs the
//! finite-difference gradient checks, which are unreliable in single
//! precision.

use crate::error::{Error, Result};
use crate::par;

/// Element type of a [`Tensor`]: `f32` or `f64`. Sealed by construction;
/// the method set is exactly what the numeric code in this crate touches.
pub trait Scalar:
    Copy
    + PartialOrd
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn neg_infinity() -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn zero() -> Self {
                0.0
            }
            fn one() -> Self {
                1.0
            }
            fn neg_infinity() -> Self {
                <$t>::NEG_INFINITY
            }
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn max(self, other: Self) -> Self {
                self.max(other)
            }
            fn is_finite(self) -> bool {
                self.is_finite()
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Dense n-dimensional array, row-major, `product(shape) == data.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero dimension in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: Vec<usize>, value: S) -> Result<Self> {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![value; numel])
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> S) -> Result<Self> {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|i| f(i)).collect();
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Value of a `[1]` tensor.
    pub fn item(&self) -> Result<S> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data, new shape. Element count must match.
    pub fn reshaped(self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({numel})",
                self.shape,
                self.numel(),
            )));
        }
        Tensor::new(shape, self.data)
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[S] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Rows `lo..hi` of a 2-D tensor as a new tensor.
    pub fn rows(&self, lo: usize, hi: usize) -> Result<Self> {
        if self.shape.len() != 2 || hi > self.shape[0] || lo > hi {
            return Err(Error::Shape(format!(
                "rows({lo}, {hi}) on tensor of shape {:?}",
                self.shape
            )));
        }
        let cols = self.shape[1];
        Tensor::new(
            vec![hi - lo, cols],
            self.data[lo * cols..hi * cols].to_vec(),
        )
    }

    /// Copies the listed rows of a 2-D tensor into a new `[idx.len(), cols]`
    /// tensor, in the given order. Indices may repeat.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Self> {
        if self.shape.len() != 2 {
            return Err(Error::Shape(format!(
                "gather_rows on tensor of shape {:?}",
                self.shape
            )));
        }
        let (n, cols) = (self.shape[0], self.shape[1]);
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= n {
                return Err(Error::Shape(format!("row {i} out of {n}")));
            }
            data.extend_from_slice(&self.data[i * cols..(i + 1) * cols]);
        }
        Tensor::new(vec![idx.len(), cols], data)
    }

    /// Stack two 2-D tensors with equal column counts along axis 0.
    pub fn concat_rows(&self, other: &Self) -> Result<Self> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[1] {
            return Err(Error::Shape(format!(
                "concat_rows of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let mut data = Vec::with_capacity(self.numel() + other.numel());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor::new(vec![self.shape[0] + other.shape[0], self.shape[1]], data)
    }

    /// Transpose of a 2-D tensor.
    pub fn transposed(&self) -> Result<Self> {
        if self.shape.len() != 2 {
            return Err(Error::Shape(format!(
                "transpose of tensor with shape {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Cast between scalar types through `f64`.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }

    /// Sum of all elements, accumulated in `f64` in index order.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }
}

/// `C[m,n] = A[m,k] * B[k,n]`, parallel over rows of the output.
///
/// Each output row is owned by one task and accumulated in index order,
/// so the result does not depend on the thread count.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "matmul expects 2-D operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions disagree: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::full(vec![m, n], S::zero())?;
    let a_data = a.data();
    let b_data = b.data();
    par::for_each_chunk_mut(out.data_mut(), n, |i, c_row| {
        let a_row = &a_data[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b_data[p * n..(p + 1) * n];
            for (c, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c += a_ip * b_pj;
            }
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0f32; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::new(vec![2, 2], vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(vec![2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&eye, &m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::new(vec![2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![5.0f32, 6.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros(vec![2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(vec![4, 2]).unwrap();
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn transpose_round_trip() {
        let t = Tensor::new(vec![2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let tt = t.transposed().unwrap();
        assert_eq!(tt.shape(), &[3, 2]);
        assert_eq!(tt.transposed().unwrap(), t);
    }

    #[test]
    fn concat_rows_stacks() {
        let a = Tensor::new(vec![1, 2], vec![1.0f32, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![3.0f32, 4.0, 5.0, 6.0]).unwrap();
        let c = a.concat_rows(&b).unwrap();
        assert_eq!(c.shape(), &[3, 2]);
        assert_eq!(c.row(2), &[5.0, 6.0]);
    }
}
