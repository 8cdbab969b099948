use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported confidence levels and their normal cut-off points `t`.
pub const CONFIDENCE_TABLE: [(f64, f64); 3] = [(0.90, 1.645), (0.95, 1.960), (0.99, 2.576)];

pub fn t_value(confidence: f64) -> Result<f64> {
    CONFIDENCE_TABLE
        .iter()
        .find(|(c, _)| (c - confidence).abs() < 1e-9)
        .map(|&(_, t)| t)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "confidence {confidence} not supported (use 0.90, 0.95 or 0.99)"
            ))
        })
}

/// Statistical fault-injection sample size for a finite population:
/// `n = ceil(N / (1 + e^2 (N - 1) / (t^2 p (1 - p))))`.
pub fn required_sample_size(population: u64, margin: f64, confidence: f64, p: f64) -> Result<u64> {
    if population == 0 {
        return Err(Error::InvalidArgument("population must be at least 1".into()));
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "margin of error {margin} outside (0, 1)"
        )));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "failure probability {p} outside (0, 1)"
        )));
    }
    let t = t_value(confidence)?;
    let big_n = population as f64;
    let n = big_n / (1.0 + margin * margin * (big_n - 1.0) / (t * t * p * (1.0 - p)));
    Ok((n.ceil() as u64).clamp(1, population))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSamplePlan {
    pub population_size: u64,
    pub margin_of_error: f64,
    pub confidence: f64,
    pub p: f64,
    pub sample_size: u64,
    pub master_seed: u64,
}

impl FaultSamplePlan {
    pub fn new(population_size: u64, margin_of_error: f64, confidence: f64, p: f64, master_seed: u64) -> Result<Self> {
        let sample_size = required_sample_size(population_size, margin_of_error, confidence, p)?;
        Ok(Self {
            population_size,
            margin_of_error,
            confidence,
            p,
            sample_size,
            master_seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Same closed form evaluated term by term as the textbook two-step
    /// form: infinite-population size n0, then the finite correction.
    fn oracle(big_n: f64, e: f64, t: f64, p: f64) -> u64 {
        let n0 = t * t * p * (1.0 - p) / (e * e);
        let n = n0 * big_n / (n0 + big_n - 1.0);
        n.ceil() as u64
    }

    #[test]
    fn million_bits_99_percent() {
        let n = required_sample_size(1_000_000, 0.01, 0.99, 0.5).unwrap();
        assert_eq!(n, oracle(1e6, 0.01, 2.576, 0.5));
        assert_eq!(n, 16319);
        assert_eq!(required_sample_size(1_000_000, 0.01, 0.95, 0.5).unwrap(), 9513);
        assert_eq!(required_sample_size(1_000_000, 0.01, 0.90, 0.5).unwrap(), 6720);
    }

    #[test]
    fn loose_margin_small_population() {
        let n = required_sample_size(100, 0.99, 0.95, 0.5).unwrap();
        assert!((1..=100).contains(&n));
        assert_eq!(required_sample_size(1, 0.01, 0.99, 0.5).unwrap(), 1);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(required_sample_size(0, 0.01, 0.99, 0.5).is_err());
        assert!(required_sample_size(10, 0.0, 0.99, 0.5).is_err());
        assert!(required_sample_size(10, 1.0, 0.99, 0.5).is_err());
        assert!(required_sample_size(10, 0.1, 0.98, 0.5).is_err());
        assert!(required_sample_size(10, 0.1, 0.99, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_monotone(big_n in 1u64..10_000_000, e1 in 0.001f64..0.5, de in 0.0f64..0.4, p in 0.01f64..0.99) {
            let e2 = (e1 + de).min(0.999);
            let n1 = required_sample_size(big_n, e1, 0.99, p).unwrap();
            let n2 = required_sample_size(big_n, e2, 0.99, p).unwrap();
            prop_assert!(n1 <= big_n && n2 <= big_n);
            prop_assert!(n1 >= n2);
            let n95 = required_sample_size(big_n, e1, 0.95, p).unwrap();
            let n90 = required_sample_size(big_n, e1, 0.90, p).unwrap();
            prop_assert!(n1 >= n95 && n95 >= n90);
        }
    }
}
