use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::QuantTensor;

/// Bit-suppression error model applied to an int8 feature map.
///
/// Each element is selected independently with `probability`; a selected
/// element has one bit, chosen uniformly from `bit_mask`, forced to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitSuppressorConfig {
    pub bit_mask: Vec<u8>,
    pub probability: f64,
    pub seed: u64,
}

impl Default for BitSuppressorConfig {
    fn default() -> Self {
        Self {
            bit_mask: vec![6, 7],
            probability: 0.05,
            seed: 0,
        }
    }
}

impl BitSuppressorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!(
                "suppressor probability {} outside [0, 1]",
                self.probability
            )));
        }
        if self.probability > 0.0 && self.bit_mask.is_empty() {
            return Err(Error::Config("suppressor bit mask is empty".into()));
        }
        if let Some(b) = self.bit_mask.iter().find(|&&b| b > 7) {
            return Err(Error::Config(format!("suppressor bit {b} outside 0..=7")));
        }
        Ok(())
    }
}

/// Applies the suppressor in place. `stream` separates independent uses of
/// the same config (e.g. one per image); the decision for element `i`
/// depends only on `(cfg.seed, stream, i)`.
pub fn suppress_in_place(data: &mut [i8], cfg: &BitSuppressorConfig, stream: u64) {
    if cfg.probability <= 0.0 || cfg.bit_mask.is_empty() {
        return;
    }
    let base = seed::derive(cfg.seed, &[stream]);
    let len = cfg.bit_mask.len() as u64;
    for (i, v) in data.iter_mut().enumerate() {
        let h = seed::mix64(base ^ seed::mix64(i as u64));
        if seed::unit_f64(h) < cfg.probability {
            let pick = seed::mix64(h ^ 0xA5A5_A5A5_A5A5_A5A5) % len;
            let bit = cfg.bit_mask[pick as usize];
            *v = (*v as u8 & !(1u8 << bit)) as i8;
        }
    }
}

pub fn suppress_bits(values: &QuantTensor, cfg: &BitSuppressorConfig, stream: u64) -> Result<QuantTensor> {
    cfg.validate()?;
    let mut out = values.clone();
    suppress_in_place(&mut out.data, cfg, stream);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qt(data: Vec<i8>) -> QuantTensor {
        QuantTensor::new(vec![data.len()], data, 1.0).unwrap()
    }

    #[test]
    fn zero_probability_is_identity() {
        let x = qt((-128..=127).collect());
        let cfg = BitSuppressorConfig {
            probability: 0.0,
            ..Default::default()
        };
        assert_eq!(suppress_bits(&x, &cfg, 3).unwrap(), x);
    }

    #[test]
    fn clears_sign_bit() {
        let cfg = BitSuppressorConfig {
            bit_mask: vec![7],
            probability: 1.0,
            seed: 9,
        };
        assert_eq!(suppress_bits(&qt(vec![-1]), &cfg, 0).unwrap().data, vec![127]);
        assert_eq!(suppress_bits(&qt(vec![0, 0]), &cfg, 0).unwrap().data, vec![0, 0]);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = BitSuppressorConfig {
            bit_mask: vec![],
            probability: 0.5,
            seed: 0,
        };
        assert!(cfg.validate().is_err());
        let cfg = BitSuppressorConfig {
            bit_mask: vec![8],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn selection_rate_tracks_probability() {
        let x = qt(vec![-1; 20000]);
        let cfg = BitSuppressorConfig {
            bit_mask: vec![6, 7],
            probability: 0.05,
            seed: 1,
        };
        let y = suppress_bits(&x, &cfg, 0).unwrap();
        let changed = y.data.iter().filter(|&&v| v != -1).count() as f64 / 20000.0;
        assert!((changed - 0.05).abs() < 0.01, "{changed}");
        let sevens = y.data.iter().filter(|&&v| v == 127).count();
        let sixes = y.data.iter().filter(|&&v| v == -65).count();
        assert!(sevens > 0 && sixes > 0);
    }

    proptest! {
        #[test]
        fn idempotent_and_only_clears_masked_bits(
            data in proptest::collection::vec(any::<i8>(), 1..200),
            mask in proptest::collection::btree_set(0u8..8, 1..4),
            p in 0.0f64..=1.0,
            seed in any::<u64>(),
            stream in any::<u64>(),
        ) {
            let cfg = BitSuppressorConfig { bit_mask: mask.iter().copied().collect(), probability: p, seed };
            let once = suppress_bits(&qt(data.clone()), &cfg, stream).unwrap();
            let twice = suppress_bits(&once, &cfg, stream).unwrap();
            prop_assert_eq!(&once, &twice);
            let mask_bits: u8 = mask.iter().fold(0, |m, b| m | (1 << b));
            for (a, b) in data.iter().zip(&once.data) {
                let (a, b) = (*a as u8, *b as u8);
                prop_assert_eq!(a & !mask_bits, b & !mask_bits);
                prop_assert!((b & mask_bits).count_ones() <= (a & mask_bits).count_ones());
                prop_assert_eq!(b & !a, 0);
            }
        }
    }
}
