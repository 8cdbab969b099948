//! Golden-vs-faulty comparison metrics.
//!
//! All real-valued metrics work in `f64` on the (dequantized) feature maps.
//! A NaN in the faulty map counts as an infinitely large difference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qnn::LayerTrace;
use crate::stats::CompensatedSum;
use crate::tensor::{argmax, QuantTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultClass {
    /// Prediction changed.
    Critical,
    /// Logits changed but the prediction did not.
    NonCritical,
    /// Logits unchanged (within eps).
    Masked,
}

impl FaultClass {
    pub const ALL: [FaultClass; 3] = [FaultClass::Critical, FaultClass::NonCritical, FaultClass::Masked];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultClass::Critical => "critical",
            FaultClass::NonCritical => "non_critical",
            FaultClass::Masked => "masked",
        }
    }
}

impl std::fmt::Display for FaultClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Metrics at the injected layer's OFM. Infinite PSNR is serialized as "inf".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    #[serde(with = "inf_float")]
    pub max_difference: f64,
    #[serde(with = "inf_float")]
    pub psnr_db: f64,
    #[serde(with = "inf_float")]
    pub ssim: f64,
}

/// Serializes +-inf as "inf"/"-inf" (JSON has no infinity literal).
pub mod inf_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float '{other}'"))),
            },
        }
    }

    /// The same encoding for `Vec<f64>`.
    pub mod seq {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        #[serde(transparent)]
        struct Item(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|&x| Item(x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Item>::deserialize(d)?.into_iter().map(|i| i.0).collect())
        }
    }

    pub fn format(v: f64) -> String {
        if v.is_infinite() {
            if v > 0.0 { "inf" } else { "-inf" }.to_owned()
        } else if v.is_nan() {
            "nan".to_owned()
        } else {
            v.to_string()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub c1: f64,
    pub c2: f64,
    pub dynamic_range: f64,
}

impl SsimConstants {
    pub fn new(c1: f64, c2: f64) -> Self {
        Self {
            c1,
            c2,
            dynamic_range: f64::NAN,
        }
    }

    /// `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`.
    pub fn from_range(l: f64) -> Self {
        let l = l.max(1e-6);
        Self {
            c1: (0.01 * l).powi(2),
            c2: (0.03 * l).powi(2),
            dynamic_range: l,
        }
    }

    /// Constants from the golden map's range `max - min`.
    pub fn for_golden(golden: &[f32]) -> Self {
        let (lo, hi) = golden
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v as f64), hi.max(v as f64))
            });
        Self::from_range(if hi >= lo { hi - lo } else { 0.0 })
    }
}

fn check_shapes(g: &Tensor, f: &Tensor) -> Result<()> {
    if g.shape != f.shape {
        return Err(Error::Shape(format!("golden {:?} vs faulty {:?}", g.shape, f.shape)));
    }
    Ok(())
}

#[inline]
fn abs_diff(g: f32, f: f32) -> f64 {
    let d = (g as f64 - f as f64).abs();
    if d.is_nan() {
        f64::INFINITY
    } else {
        d
    }
}

pub fn max_difference(g: &Tensor, f: &Tensor) -> Result<f64> {
    check_shapes(g, f)?;
    Ok(max_difference_slices(&g.data, &f.data))
}

pub(crate) fn max_difference_slices(g: &[f32], f: &[f32]) -> f64 {
    g.iter().zip(f).map(|(&a, &b)| abs_diff(a, b)).fold(0.0, f64::max)
}

fn mse(g: &[f32], f: &[f32]) -> f64 {
    let s: CompensatedSum = g.iter().zip(f).map(|(&a, &b)| abs_diff(a, b).powi(2)).collect();
    let v = s.value() / g.len().max(1) as f64;
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// `10 log10(peak^2 / MSE)` with `peak = max(g)`; if `max(g) <= 0` the peak
/// is `max|g|`. Zero MSE gives +inf, a zero peak with non-zero MSE -inf.
pub fn psnr(g: &Tensor, f: &Tensor) -> Result<f64> {
    check_shapes(g, f)?;
    Ok(psnr_slices(&g.data, &f.data))
}

pub(crate) fn psnr_slices(g: &[f32], f: &[f32]) -> f64 {
    let err = mse(g, f);
    if err == 0.0 {
        return f64::INFINITY;
    }
    let mut peak = g.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        peak = g.iter().map(|&v| (v as f64).abs()).fold(0.0, f64::max);
    }
    if peak == 0.0 || err.is_infinite() {
        return f64::NEG_INFINITY;
    }
    10.0 * (peak * peak / err).log10()
}

/// Global (single-window) SSIM with population statistics. Returns 0 when
/// the faulty map holds non-finite values.
pub fn ssim(g: &Tensor, f: &Tensor, c: &SsimConstants) -> Result<f64> {
    check_shapes(g, f)?;
    if g.numel() < 2 {
        return Err(Error::Shape("SSIM needs at least two elements".into()));
    }
    Ok(ssim_slices(&g.data, &f.data, c))
}

pub(crate) fn ssim_slices(g: &[f32], f: &[f32], c: &SsimConstants) -> f64 {
    if g.iter().chain(f).any(|v| !v.is_finite()) {
        return 0.0;
    }
    let n = g.len() as f64;
    let mean = |x: &[f32]| x.iter().map(|&v| v as f64).collect::<CompensatedSum>().value() / n;
    let (mg, mf) = (mean(g), mean(f));
    let mut vg = CompensatedSum::default();
    let mut vf = CompensatedSum::default();
    let mut cov = CompensatedSum::default();
    for (&a, &b) in g.iter().zip(f) {
        let (da, db) = (a as f64 - mg, b as f64 - mf);
        vg.add(da * da);
        vf.add(db * db);
        cov.add(da * db);
    }
    let (vg, vf, cov) = (vg.value() / n, vf.value() / n, cov.value() / n);
    let num = (2.0 * mf * mg + c.c1) * (2.0 * cov + c.c2);
    let den = (mf * mf + mg * mg + c.c1) * (vf + vg + c.c2);
    let s = num / den;
    if s.is_finite() {
        s.clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Per-element `|g - f| / max|g|` and its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedError {
    pub errors: Vec<f64>,
    pub mean: f64,
    /// Set when the golden map is all zero and the denominator fell back to 1.
    pub degenerate: bool,
}

pub fn normalized_error(g: &Tensor, f: &Tensor) -> Result<NormalizedError> {
    check_shapes(g, f)?;
    Ok(normalized_error_slices(&g.data, &f.data))
}

pub(crate) fn normalized_error_slices(g: &[f32], f: &[f32]) -> NormalizedError {
    let max_abs = g.iter().map(|&v| (v as f64).abs()).fold(0.0, f64::max);
    let (denom, degenerate) = if max_abs > 0.0 && max_abs.is_finite() {
        (max_abs, false)
    } else {
        (1.0, true)
    };
    let errors: Vec<f64> = g.iter().zip(f).map(|(&a, &b)| abs_diff(a, b) / denom).collect();
    let mean = errors.iter().copied().collect::<CompensatedSum>().value() / errors.len().max(1) as f64;
    NormalizedError {
        errors,
        mean,
        degenerate,
    }
}

/// Percentage of differing bits between two int8 maps of the same scale.
pub fn bitflip_ratio(g: &QuantTensor, f: &QuantTensor) -> Result<f64> {
    if g.shape != f.shape {
        return Err(Error::Shape(format!("golden {:?} vs faulty {:?}", g.shape, f.shape)));
    }
    if g.scale.to_bits() != f.scale.to_bits() {
        return Err(Error::Comparison(format!(
            "scales differ ({} vs {}); bytes are not comparable",
            g.scale, f.scale
        )));
    }
    Ok(100.0 * flipped_bits(&g.data, &f.data) as f64 / (8 * g.numel().max(1)) as f64)
}

pub fn flipped_bits(g: &[i8], f: &[i8]) -> u64 {
    g.iter()
        .zip(f)
        .map(|(&a, &b)| (a as u8 ^ b as u8).count_ones() as u64)
        .sum()
}

/// Masked if `max|delta| <= eps`, else Critical if the prediction changed,
/// else NonCritical.
pub fn classify_fault(golden: &[f32], faulty: &[f32], eps: f64) -> Result<FaultClass> {
    if golden.len() != faulty.len() {
        return Err(Error::Shape(format!(
            "logit lengths differ: {} vs {}",
            golden.len(),
            faulty.len()
        )));
    }
    Ok(if max_difference_slices(golden, faulty) <= eps {
        FaultClass::Masked
    } else if argmax(golden) != argmax(faulty) {
        FaultClass::Critical
    } else {
        FaultClass::NonCritical
    })
}

/// How far past the injected layer a fault stayed visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    /// Distance from the injected layer to the last changed layer; 0 if
    /// only the injected layer changed, -1 if nothing changed.
    pub depth: i64,
    pub changed: Vec<bool>,
}

pub fn propagation_depth(g: &LayerTrace, f: &LayerTrace, injected_layer: usize, eps: f64) -> Result<Propagation> {
    if g.ofms.len() != f.ofms.len() {
        return Err(Error::Shape(format!(
            "trace lengths differ: {} vs {}",
            g.ofms.len(),
            f.ofms.len()
        )));
    }
    if injected_layer >= g.ofms.len() {
        return Err(Error::InvalidArgument(format!(
            "injected layer {injected_layer} outside trace"
        )));
    }
    let mut changed = Vec::with_capacity(g.ofms.len());
    for (a, b) in g.ofms.iter().zip(&f.ofms) {
        if a.shape() != b.shape() {
            return Err(Error::Shape("OFM shapes differ between traces".into()));
        }
        let differs = !a.bit_eq(b) && {
            let (ga, fb) = (a.to_tensor(), b.to_tensor());
            max_difference_slices(&ga.data, &fb.data) > eps
        };
        changed.push(differs);
    }
    let depth = match changed.iter().rposition(|&c| c) {
        Some(last) => last as i64 - injected_layer as i64,
        None => -1,
    };
    Ok(Propagation { depth, changed })
}
