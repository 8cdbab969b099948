use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::bitflip::{flip_bit_f32, flip_bit_i8, flip_random_bits_f32, flip_random_bits_i8};
use crate::error::{Error, Result};
use crate::qnn::{ExecPath, NetworkModel, Tap};
use crate::seed;
use crate::tensor::QuantTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultSite {
    WeightFloat32,
    WeightInt8,
    OfmInt8,
}

impl FaultSite {
    pub fn bit_width(self) -> u32 {
        match self {
            FaultSite::WeightFloat32 => 32,
            FaultSite::WeightInt8 | FaultSite::OfmInt8 => 8,
        }
    }

    pub fn path(self) -> ExecPath {
        match self {
            FaultSite::WeightFloat32 => ExecPath::Float,
            FaultSite::WeightInt8 | FaultSite::OfmInt8 => ExecPath::Quant,
        }
    }

    pub fn is_weight(self) -> bool {
        !matches!(self, FaultSite::OfmInt8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FaultMode {
    Single,
    /// `floor(rate * bits)` distinct flips over the whole target tensor.
    Rate {
        rate: f64,
    },
}

/// One injectable fault. Rate mode ignores `index` and `bit`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultDescriptor {
    pub site: FaultSite,
    pub layer: usize,
    pub index: usize,
    pub bit: u32,
    #[serde(flatten)]
    pub mode: FaultMode,
    pub seed: u64,
}

impl FaultDescriptor {
    pub fn single(site: FaultSite, layer: usize, index: usize, bit: u32) -> Self {
        Self {
            site,
            layer,
            index,
            bit,
            mode: FaultMode::Single,
            seed: 0,
        }
    }

    pub fn rate(site: FaultSite, layer: usize, rate: f64, seed: u64) -> Self {
        Self {
            site,
            layer,
            index: 0,
            bit: 0,
            mode: FaultMode::Rate { rate },
            seed,
        }
    }

    /// Checks the descriptor against `model`'s layers and tensor sizes.
    pub fn validate(&self, model: &NetworkModel) -> Result<()> {
        let numel = target_len(model, self.site, self.layer)?;
        match self.mode {
            FaultMode::Single => {
                if self.bit >= self.site.bit_width() {
                    return Err(Error::Descriptor(format!(
                        "bit {} outside {}-bit {:?}",
                        self.bit,
                        self.site.bit_width(),
                        self.site
                    )));
                }
                if self.index >= numel {
                    return Err(Error::Descriptor(format!(
                        "index {} outside layer {} target of {numel} elements",
                        self.index, self.layer
                    )));
                }
            }
            FaultMode::Rate { rate } => {
                if !(rate > 0.0 && rate <= 1.0) {
                    return Err(Error::Descriptor(format!("rate {rate} outside (0, 1]")));
                }
            }
        }
        Ok(())
    }

    /// The OFM tap realizing this fault for one inference. `stream`
    /// (usually the image index) re-samples rate-mode positions per input.
    pub fn ofm_tap(&self, stream: u64) -> Result<Tap> {
        if self.site != FaultSite::OfmInt8 {
            return Err(Error::Descriptor(format!("{:?} is not an OFM fault", self.site)));
        }
        Ok(match self.mode {
            FaultMode::Single => Tap::FlipBit {
                index: self.index,
                bit: self.bit,
            },
            FaultMode::Rate { rate } => Tap::BitFlips {
                rate,
                seed: seed::derive(self.seed, &[stream]),
            },
        })
    }
}

/// Number of elements of the tensor a fault site addresses in `layer`.
pub fn target_len(model: &NetworkModel, site: FaultSite, layer: usize) -> Result<usize> {
    if layer >= model.layers.len() {
        return Err(Error::Descriptor(format!("layer {layer} does not exist")));
    }
    match site {
        FaultSite::OfmInt8 => Ok(model.output_shapes()?[layer].iter().product()),
        FaultSite::WeightFloat32 => Ok(model.params(layer)?.weights.numel()),
        FaultSite::WeightInt8 => model
            .params(layer)?
            .quant
            .as_ref()
            .map(|q| q.weights.numel())
            .ok_or_else(|| Error::Descriptor(format!("layer {layer} has no int8 weights"))),
    }
}

/// Returns a copy of `model` with the weight fault applied. Only the
/// targeted tensor is copied; every other tensor stays shared.
pub fn apply_weight_fault(model: &NetworkModel, fault: &FaultDescriptor) -> Result<NetworkModel> {
    if !fault.site.is_weight() {
        return Err(Error::Descriptor("OFM faults are applied as inference taps".into()));
    }
    fault.validate(model)?;
    let mut out = model.clone();
    let params = out.layers[fault.layer].params.as_mut().expect("validated");
    match fault.site {
        FaultSite::WeightFloat32 => {
            let w = Arc::make_mut(&mut params.weights);
            match fault.mode {
                FaultMode::Single => w.data[fault.index] = flip_bit_f32(w.data[fault.index], fault.bit),
                FaultMode::Rate { rate } => {
                    flip_random_bits_f32(&mut w.data, rate, fault.seed);
                }
            }
        }
        FaultSite::WeightInt8 => {
            let q = params.quant.as_mut().expect("validated");
            let w: &mut QuantTensor = Arc::make_mut(&mut q.weights);
            match fault.mode {
                FaultMode::Single => w.data[fault.index] = flip_bit_i8(w.data[fault.index], fault.bit),
                FaultMode::Rate { rate } => {
                    flip_random_bits_i8(&mut w.data, rate, fault.seed);
                }
            }
        }
        FaultSite::OfmInt8 => unreachable!(),
    }
    Ok(out)
}

/// Returns a copy of `ofm` with `floor(rate * 8 * numel)` distinct bits flipped.
pub fn apply_ofm_fault(ofm: &QuantTensor, rate: f64, seed: u64) -> Result<QuantTensor> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("OFM fault rate {rate} outside (0, 1]")));
    }
    let mut out = ofm.clone();
    flip_random_bits_i8(&mut out.data, rate, seed);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::calibrated_tiny_model;

    fn quant_weights(m: &NetworkModel, l: usize) -> &QuantTensor {
        m.layers[l]
            .params
            .as_ref()
            .unwrap()
            .quant
            .as_ref()
            .unwrap()
            .weights
            .as_ref()
    }

    #[test]
    fn single_int8_fault_touches_one_weight() {
        let mut m = calibrated_tiny_model();
        Arc::make_mut(&mut m.layers[0].params.as_mut().unwrap().quant.as_mut().unwrap().weights).data[7] = 0;
        let f = FaultDescriptor::single(FaultSite::WeightInt8, 0, 7, 7);
        let faulty = apply_weight_fault(&m, &f).unwrap();
        let (g, h) = (quant_weights(&m, 0), quant_weights(&faulty, 0));
        assert_eq!(h.data[7], -128);
        assert_eq!(g.data[..7], h.data[..7]);
        assert_eq!(g.scale, h.scale);
        // Untouched tensors are still shared.
        assert!(Arc::ptr_eq(
            &m.layers[4].params.as_ref().unwrap().weights,
            &faulty.layers[4].params.as_ref().unwrap().weights
        ));
        assert!(Arc::ptr_eq(
            &m.layers[0].params.as_ref().unwrap().weights,
            &faulty.layers[0].params.as_ref().unwrap().weights
        ));
    }

    #[test]
    fn single_float_fault() {
        let m = calibrated_tiny_model();
        let f = FaultDescriptor::single(FaultSite::WeightFloat32, 4, 0, 31);
        let faulty = apply_weight_fault(&m, &f).unwrap();
        let w = &faulty.layers[4].params.as_ref().unwrap().weights;
        assert_eq!(w.data[0], -1.0);
        assert_eq!(w.data[1..], m.layers[4].params.as_ref().unwrap().weights.data[1..]);
    }

    #[test]
    fn rate_fault_counts_and_determinism() {
        let m = calibrated_tiny_model();
        // Layer 0 has 8 int8 weights = 64 bits; rate 0.25 -> 16 flips.
        let f = FaultDescriptor::rate(FaultSite::WeightInt8, 0, 0.25, 99);
        let a = apply_weight_fault(&m, &f).unwrap();
        let b = apply_weight_fault(&m, &f).unwrap();
        assert_eq!(a, b);
        let flipped: u32 = quant_weights(&m, 0)
            .data
            .iter()
            .zip(&quant_weights(&a, 0).data)
            .map(|(x, y)| (*x as u8 ^ *y as u8).count_ones())
            .sum();
        assert_eq!(flipped, 16);
    }

    #[test]
    fn descriptor_errors() {
        let m = calibrated_tiny_model();
        let bad = [
            FaultDescriptor::single(FaultSite::WeightInt8, 1, 0, 0),
            FaultDescriptor::single(FaultSite::WeightInt8, 0, 0, 8),
            FaultDescriptor::single(FaultSite::WeightFloat32, 0, 8, 0),
            FaultDescriptor::single(FaultSite::WeightFloat32, 9, 0, 0),
            FaultDescriptor::rate(FaultSite::WeightInt8, 0, 0.0, 1),
            FaultDescriptor::rate(FaultSite::WeightInt8, 0, 1.5, 1),
        ];
        for f in bad {
            assert!(apply_weight_fault(&m, &f).is_err(), "{f:?}");
        }
        assert!(FaultDescriptor::single(FaultSite::WeightFloat32, 0, 0, 31)
            .validate(&m)
            .is_ok());
        assert!(FaultDescriptor::single(FaultSite::OfmInt8, 1, 7, 7)
            .validate(&m)
            .is_ok());
        assert!(FaultDescriptor::single(FaultSite::OfmInt8, 1, 8, 0)
            .validate(&m)
            .is_err());
    }

    #[test]
    fn ofm_fault_rate() {
        let q = QuantTensor::new(vec![4], vec![1, -2, 3, 0], 0.5).unwrap();
        let all = apply_ofm_fault(&q, 1.0, 5).unwrap();
        assert_eq!(all.data, vec![!1, !-2, !3, !0]);
        let none = apply_ofm_fault(&q, 0.03, 5).unwrap();
        assert_eq!(none, q);
        assert!(apply_ofm_fault(&q, 0.0, 5).is_err());
    }

    #[test]
    fn serde_shape() {
        let f = FaultDescriptor::rate(FaultSite::OfmInt8, 0, 0.1, 42);
        let json = serde_json::to_string(&f).unwrap();
        assert!(json.contains("\"site\":\"ofm_int8\""));
        assert!(json.contains("\"mode\":\"rate\""));
        assert_eq!(serde_json::from_str::<FaultDescriptor>(&json).unwrap(), f);
    }
}
