use serde::{Deserialize, Serialize};

use super::lut::MultiplierLut;
use crate::stats::CompensatedSum;

/// Normalizer for MAE% and AWCE%: full output range of an 8x8 multiplier.
pub const PERCENT_NORMALIZER: f64 = 65536.0;

/// Error statistics of a multiplier over all 65,536 operand pairs.
///
/// `ED(a, b) = lut(a, b) - a * b`. MRE skips the pairs whose exact product
/// is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierErrorReport {
    pub name: String,
    pub mae: f64,
    pub mae_pct: f64,
    pub awce: f64,
    pub awce_pct: f64,
    pub mre_pct: f64,
    pub mean_ed: f64,
    pub var_ed: f64,
    pub rms_ed: f64,
    pub pairs: usize,
    /// Pairs that contributed to MRE (exact product non-zero).
    pub mre_pairs: usize,
}

pub fn characterize(lut: &MultiplierLut) -> MultiplierErrorReport {
    // Integer sums are exact, which also makes them independent of enumeration order.
    let mut sum_ed: i64 = 0;
    let mut sum_abs: i64 = 0;
    let mut sum_sq: i128 = 0;
    let mut worst: i64 = 0;
    let mut rel = CompensatedSum::default();
    let mut mre_pairs = 0usize;
    for a in i8::MIN..=i8::MAX {
        for b in i8::MIN..=i8::MAX {
            let exact = a as i64 * b as i64;
            let ed = lut.multiply(a, b) as i64 - exact;
            sum_ed += ed;
            sum_abs += ed.abs();
            sum_sq += (ed as i128) * (ed as i128);
            worst = worst.max(ed.abs());
            if exact != 0 {
                rel.add(ed.abs() as f64 / exact.abs() as f64);
                mre_pairs += 1;
            }
        }
    }
    let n = 65536.0f64;
    let mean_ed = sum_ed as f64 / n;
    let mean_sq = sum_sq as f64 / n;
    // Population variance from exact integer moments: (n*S2 - S1^2) / n^2.
    let var_num = 65536i128 * sum_sq - (sum_ed as i128) * (sum_ed as i128);
    let var_ed = var_num as f64 / (n * n);
    let mae = sum_abs as f64 / n;
    let awce = worst as f64;
    MultiplierErrorReport {
        name: lut.name().to_owned(),
        mae,
        mae_pct: mae / PERCENT_NORMALIZER * 100.0,
        awce,
        awce_pct: awce / PERCENT_NORMALIZER * 100.0,
        mre_pct: if mre_pairs == 0 {
            0.0
        } else {
            rel.value() / mre_pairs as f64 * 100.0
        },
        mean_ed,
        var_ed,
        rms_ed: mean_sq.sqrt(),
        pairs: 65536,
        mre_pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::axmult::lut::FixtureKind;

    #[test]
    fn exact_is_all_zero() {
        let r = characterize(&MultiplierLut::exact());
        for v in [
            r.mae, r.mae_pct, r.awce, r.awce_pct, r.mre_pct, r.var_ed, r.rms_ed, r.mean_ed,
        ] {
            assert_eq!(v, 0.0);
        }
        assert_eq!(r.mre_pairs, 65536 - 511);
    }

    #[test]
    fn constant_offset() {
        let r = characterize(&MultiplierLut::fixture(FixtureKind::ProductOffset(1)).unwrap());
        assert!((r.mae - 1.0).abs() < 1e-3);
        assert!((r.awce - 1.0).abs() < 1e-3);
        assert!(r.var_ed.abs() < 1e-3);
        assert!((r.rms_ed - 1.0).abs() < 1e-3);
    }

    #[test]
    fn koenig_huygens_identity() {
        for k in [
            FixtureKind::OperandTruncate(3),
            FixtureKind::OperandTruncate(7),
            FixtureKind::ProductZeroLsb(5),
            FixtureKind::ProductOffset(-9),
        ] {
            let r = characterize(&MultiplierLut::fixture(k).unwrap());
            let lhs = r.rms_ed * r.rms_ed;
            let rhs = r.var_ed + r.mean_ed * r.mean_ed;
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0), "{k}: {lhs} vs {rhs}");
            assert!(r.mae >= 0.0 && r.awce >= r.mae && r.mre_pct >= 0.0);
        }
    }
}
