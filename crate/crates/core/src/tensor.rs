use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f32` tensor.
///
/// Values are normally finite; after a fault has been injected they may be
/// infinite or NaN, and every consumer must propagate them rather than panic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, so `NaN` payloads and `-0.0` are compared exactly.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Symmetric per-tensor int8 tensor: `real = scale * int`, zero point 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i8>,
    pub scale: f32,
}

impl QuantTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i8>, scale: f32) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "quantization scale must be positive and finite, got {scale}"
            )));
        }
        Ok(Self { shape, data, scale })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Quantizes with the given scale: round half away from zero, saturate.
    pub fn quantize(t: &Tensor, scale: f32) -> Result<Self> {
        let data = t.data.iter().map(|&x| quantize_value(x, scale)).collect();
        Self::new(t.shape.clone(), data, scale)
    }

    /// Quantizes with the symmetric scale `max|x| / 127` (1 for an all-zero tensor).
    pub fn quantize_symmetric(t: &Tensor) -> Result<Self> {
        Self::quantize(t, symmetric_scale(&t.data))
    }

    pub fn dequantize(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.dequantized_values().collect(),
        }
    }

    pub fn dequantized_values(&self) -> impl Iterator<Item = f32> + '_ {
        let s = self.scale;
        self.data.iter().map(move |&q| q as f32 * s)
    }
}

/// `max|x| / 127`, or 1 when every value is zero.
pub fn symmetric_scale(values: &[f32]) -> f32 {
    let max_abs = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if max_abs > 0.0 {
        max_abs / 127.0
    } else {
        1.0
    }
}

/// Round to nearest, ties away from zero.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

#[inline]
pub fn saturate_i8(v: i64) -> i8 {
    v.clamp(i8::MIN as i64, i8::MAX as i64) as i8
}

#[inline]
pub fn quantize_value(x: f32, scale: f32) -> i8 {
    let q = round_half_away(x as f64 / scale as f64);
    // NaN maps to 0 through the saturating float->int cast.
    q.clamp(i8::MIN as f64, i8::MAX as f64) as i8
}

/// Index of the largest value; ties go to the lowest index and NaN never wins.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    let mut best_val = f32::NAN;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best_val.is_nan() || v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}
