//! Raw layer kernels on flat buffers.
//!
//! Feature maps are `[C, H, W]`, convolution weights `[OC, IC, KH, KW]` and
//! dense weights `[OUT, IN]`, all row-major. Float kernels let NaN and
//! infinities flow through.

use crate::axmult::Multiply;
use crate::tensor::{round_half_away, saturate_i8};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_h() * self.out_w()
    }

    /// Input coordinate for output row/col `o` and kernel offset `k`, or
    /// `None` when it falls in the zero padding.
    #[inline(always)]
    pub fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Requantization multiplier `scale_in * scale_w / scale_out`.
#[inline]
pub fn requant_multiplier(scale_in: f32, scale_w: f32, scale_out: f32) -> f64 {
    scale_in as f64 * scale_w as f64 / scale_out as f64
}

/// Rounds (half away from zero) and saturates an accumulator to int8.
#[inline(always)]
pub fn requantize(acc: i32, multiplier: f64) -> i8 {
    let v = round_half_away(acc as f64 * multiplier);
    saturate_i8(v.clamp(i64::MIN as f64, i64::MAX as f64) as i64)
}

/// Bias in accumulator units (`scale_in * scale_w`).
pub fn quantize_bias(bias: &[f32], scale_in: f32, scale_w: f32) -> Vec<i32> {
    let s = scale_in as f64 * scale_w as f64;
    bias.iter()
        .map(|&b| round_half_away(b as f64 / s).clamp(i32::MIN as f64, i32::MAX as f64) as i32)
        .collect()
}

pub fn conv2d_f32(g: &ConvGeometry, input: &[f32], weights: &[f32], bias: &[f32]) -> Vec<f32> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = Vec::with_capacity(g.out_len());
    for oc in 0..g.out_channels {
        let wk = &weights[oc * g.in_channels * g.kernel_h * g.kernel_w..];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for ic in 0..g.in_channels {
                    let plane = &input[ic * g.in_h * g.in_w..];
                    let wp = &wk[ic * g.kernel_h * g.kernel_w..];
                    for ky in 0..g.kernel_h {
                        let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                        for kx in 0..g.kernel_w {
                            let Some(ix) = g.source(ox, kx, g.in_w) else { continue };
                            acc += plane[iy * g.in_w + ix] * wp[ky * g.kernel_w + kx];
                        }
                    }
                }
                out.push(acc + bias[oc]);
            }
        }
    }
    out
}

/// Integer convolution; every product goes through `mult` (padding feeds
/// zeros to the multiplier like a hardware array would). Accumulation is
/// 32-bit two's complement.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_i8<M: Multiply + ?Sized>(
    g: &ConvGeometry,
    input: &[i8],
    weights: &[i8],
    bias: &[i32],
    multiplier: f64,
    mult: &M,
) -> Vec<i8> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = Vec::with_capacity(g.out_len());
    for oc in 0..g.out_channels {
        let wk = &weights[oc * g.in_channels * g.kernel_h * g.kernel_w..];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..g.in_channels {
                    let plane = &input[ic * g.in_h * g.in_w..];
                    let wp = &wk[ic * g.kernel_h * g.kernel_w..];
                    for ky in 0..g.kernel_h {
                        let row = g.source(oy, ky, g.in_h);
                        for kx in 0..g.kernel_w {
                            let x = match (row, g.source(ox, kx, g.in_w)) {
                                (Some(iy), Some(ix)) => plane[iy * g.in_w + ix],
                                _ => 0,
                            };
                            acc = acc.wrapping_add(mult.mul(x, wp[ky * g.kernel_w + kx]));
                        }
                    }
                }
                out.push(requantize(acc, multiplier));
            }
        }
    }
    out
}

pub fn dense_f32(input: &[f32], weights: &[f32], bias: &[f32]) -> Vec<f32> {
    let n_in = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weights[o * n_in..(o + 1) * n_in];
            row.iter().zip(input).fold(0.0f32, |acc, (w, x)| acc + x * w) + b
        })
        .collect()
}

pub fn dense_i8<M: Multiply + ?Sized>(
    input: &[i8],
    weights: &[i8],
    bias: &[i32],
    multiplier: f64,
    mult: &M,
) -> Vec<i8> {
    let n_in = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weights[o * n_in..(o + 1) * n_in];
            let acc = row
                .iter()
                .zip(input)
                .fold(b, |acc, (&w, &x)| acc.wrapping_add(mult.mul(x, w)));
            requantize(acc, multiplier)
        })
        .collect()
}

/// Window max over `[C, H, W]`; returns the output and its spatial size.
pub fn maxpool2d<T: Copy + PoolMax>(
    input: &[T],
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
) -> Vec<T> {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = plane[oy * stride * w + ox * stride];
                for ky in 0..k {
                    for kx in 0..k {
                        m = m.pool_max(plane[(oy * stride + ky) * w + ox * stride + kx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub trait PoolMax {
    fn pool_max(self, other: Self) -> Self;
}

impl PoolMax for i8 {
    #[inline(always)]
    fn pool_max(self, other: Self) -> Self {
        self.max(other)
    }
}

impl PoolMax for f32 {
    /// NaN wins so that corrupted values stay visible downstream.
    #[inline(always)]
    fn pool_max(self, other: Self) -> Self {
        if !self.is_nan() && (other > self || other.is_nan()) {
            other
        } else {
            self
        }
    }
}

#[inline]
pub fn relu_f32(x: f32) -> f32 {
    if x > 0.0 || x.is_nan() {
        x
    } else {
        0.0
    }
}

#[inline]
pub fn relu_i8(x: i8) -> i8 {
    x.max(0)
}
