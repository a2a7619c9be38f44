//! Raw 2-D convolution kernels, NHWC layout.
//!
//! Convolution here is cross-correlation (no kernel flip). `Same` padding
//! pads with zeros and puts any odd leftover on the bottom/right, so a
//! 28x28 input at stride 2 with a 3x3 kernel maps to 14x14 and then 7x7.
//! Transposed convolution is expressed through the same geometry: its
//! forward pass is the input-gradient of the matching convolution.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Resolved geometry of one convolution: shapes, stride, zero padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub ci: usize,
    pub kh: usize,
    pub kw: usize,
    pub co: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if input_shape.len() != 4 {
            return Err(Error::Shape(format!(
                "conv input must be [batch, h, w, channels], got {input_shape:?}"
            )));
        }
        if kernel_shape.len() != 4 {
            return Err(Error::Shape(format!(
                "conv kernel must be [kh, kw, ci, co], got {kernel_shape:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::Shape("conv stride must be positive".into()));
        }
        let (batch, in_h, in_w, ci) = (
            input_shape[0],
            input_shape[1],
            input_shape[2],
            input_shape[3],
        );
        let (kh, kw, kci, co) = (
            kernel_shape[0],
            kernel_shape[1],
            kernel_shape[2],
            kernel_shape[3],
        );
        if kci != ci {
            return Err(Error::Shape(format!(
                "channel mismatch: input {input_shape:?} has {ci} channels, kernel {kernel_shape:?} expects {kci}"
            )));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Same => {
                let out_h = in_h.div_ceil(stride);
                let out_w = in_w.div_ceil(stride);
                let pad_h = ((out_h - 1) * stride + kh).saturating_sub(in_h);
                let pad_w = ((out_w - 1) * stride + kw).saturating_sub(in_w);
                (out_h, out_w, pad_h / 2, pad_w / 2)
            }
            Padding::Valid => {
                if kh > in_h || kw > in_w {
                    return Err(Error::Shape(format!(
                        "valid-padding kernel {kh}x{kw} larger than input {in_h}x{in_w}"
                    )));
                }
                ((in_h - kh) / stride + 1, (in_w - kw) / stride + 1, 0, 0)
            }
        };
        Ok(ConvGeom {
            batch,
            in_h,
            in_w,
            ci,
            kh,
            kw,
            co,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_h, self.out_w, self.co]
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.batch, self.in_h, self.in_w, self.ci]
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        vec![self.kh, self.kw, self.ci, self.co]
    }

    #[inline]
    fn in_index(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
        let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
        if iy < 0 || ix < 0 || iy >= self.in_h as isize || ix >= self.in_w as isize {
            None
        } else {
            Some((iy as usize, ix as usize))
        }
    }
}

/// Forward pass. Parallel over batch images; accumulation order inside each
/// output pixel is the fixed (ky, kx, ci) loop order.
pub fn conv2d_forward<S: Scalar>(input: &[S], kernel: &[S], g: &ConvGeom) -> Vec<S> {
    let mut out = vec![S::zero(); g.batch * g.out_h * g.out_w * g.co];
    let img_in = g.in_h * g.in_w * g.ci;
    let img_out = g.out_h * g.out_w * g.co;
    par::for_each_chunk_mut(&mut out, img_out, |b, out_img| {
        let in_img = &input[b * img_in..(b + 1) * img_in];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let out_px = &mut out_img[(oy * g.out_w + ox) * g.co..][..g.co];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let Some((iy, ix)) = g.in_index(oy, ox, ky, kx) else {
                            continue;
                        };
                        let in_px = &in_img[(iy * g.in_w + ix) * g.ci..][..g.ci];
                        let k_slab = &kernel[(ky * g.kw + kx) * g.ci * g.co..][..g.ci * g.co];
                        for (c, &x) in in_px.iter().enumerate() {
                            let w_row = &k_slab[c * g.co..][..g.co];
                            for (o, &w) in out_px.iter_mut().zip(w_row) {
                                *o += x * w;
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient with respect to the convolution input. Also serves as the
/// forward pass of the transposed convolution.
pub fn conv2d_grad_input<S: Scalar>(gout: &[S], kernel: &[S], g: &ConvGeom) -> Vec<S> {
    let mut gin = vec![S::zero(); g.batch * g.in_h * g.in_w * g.ci];
    let img_in = g.in_h * g.in_w * g.ci;
    let img_out = g.out_h * g.out_w * g.co;
    par::for_each_chunk_mut(&mut gin, img_in, |b, gin_img| {
        let gout_img = &gout[b * img_out..(b + 1) * img_out];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let g_px = &gout_img[(oy * g.out_w + ox) * g.co..][..g.co];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let Some((iy, ix)) = g.in_index(oy, ox, ky, kx) else {
                            continue;
                        };
                        let gin_px = &mut gin_img[(iy * g.in_w + ix) * g.ci..][..g.ci];
                        let k_slab = &kernel[(ky * g.kw + kx) * g.ci * g.co..][..g.ci * g.co];
                        for (c, gi) in gin_px.iter_mut().enumerate() {
                            let w_row = &k_slab[c * g.co..][..g.co];
                            let mut acc = S::zero();
                            for (&gv, &w) in g_px.iter().zip(w_row) {
                                acc += gv * w;
                            }
                            *gi += acc;
                        }
                    }
                }
            }
        }
    });
    gin
}

/// Gradient with respect to the kernel. Parallel over kernel taps; each tap
/// accumulates over (batch, oy, ox) in fixed order.
pub fn conv2d_grad_kernel<S: Scalar>(input: &[S], gout: &[S], g: &ConvGeom) -> Vec<S> {
    let mut gk = vec![S::zero(); g.kh * g.kw * g.ci * g.co];
    let img_in = g.in_h * g.in_w * g.ci;
    let img_out = g.out_h * g.out_w * g.co;
    let tap = g.ci * g.co;
    par::for_each_chunk_mut(&mut gk, tap, |t, gk_slab| {
        let (ky, kx) = (t / g.kw, t % g.kw);
        for b in 0..g.batch {
            let in_img = &input[b * img_in..(b + 1) * img_in];
            let gout_img = &gout[b * img_out..(b + 1) * img_out];
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let Some((iy, ix)) = g.in_index(oy, ox, ky, kx) else {
                        continue;
                    };
                    let g_px = &gout_img[(oy * g.out_w + ox) * g.co..][..g.co];
                    let in_px = &in_img[(iy * g.in_w + ix) * g.ci..][..g.ci];
                    for (c, &x) in in_px.iter().enumerate() {
                        let gk_row = &mut gk_slab[c * g.co..][..g.co];
                        for (gw, &gv) in gk_row.iter_mut().zip(g_px) {
                            *gw += x * gv;
                        }
                    }
                }
            }
        }
    });
    gk
}
