use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::CampaignConfig;
use crate::error::{Error, Result};
use crate::faults::FaultDescriptor;
use crate::metrics::{inf_float, FaultClass, MetricRecord};
use crate::qnn::ExecPath;

pub const REPORT_SCHEMA: &str = "axfi-campaign-report";
pub const REPORT_VERSION: u32 = 1;

/// Recorded in every report: the original study's image data is not
/// public, so MNIST subsets stand in for it.
pub const DATASET_NOTE: &str = "MNIST subset substitutes for the unavailable original evaluation images";

/// Outcome of one fault (or one AxC mode) on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub fault_id: u64,
    pub image: usize,
    pub label: usize,
    pub prediction: usize,
    /// `None` for AxC modes, which have no discrete fault.
    pub fault: Option<FaultDescriptor>,
    pub class: FaultClass,
    /// Golden-vs-faulty metrics at the compromised layer's OFM.
    pub metrics: MetricRecord,
    pub depth: i64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub critical: u64,
    pub non_critical: u64,
    pub masked: u64,
}

impl ClassCounts {
    pub fn add(&mut self, c: FaultClass) {
        match c {
            FaultClass::Critical => self.critical += 1,
            FaultClass::NonCritical => self.non_critical += 1,
            FaultClass::Masked => self.masked += 1,
        }
    }

    pub fn get(&self, c: FaultClass) -> u64 {
        match c {
            FaultClass::Critical => self.critical,
            FaultClass::NonCritical => self.non_critical,
            FaultClass::Masked => self.masked,
        }
    }

    pub fn total(&self) -> u64 {
        self.critical + self.non_critical + self.masked
    }
}

/// How far Masked faults travelled before vanishing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskedDepthStats {
    pub masked: u64,
    pub depth_le_0: u64,
    pub depth_le_1: u64,
    pub fraction_le_0: Option<f64>,
    pub fraction_le_1: Option<f64>,
}

impl MaskedDepthStats {
    pub fn from_records(records: &[FaultRecord]) -> Self {
        let depths: Vec<i64> = records
            .iter()
            .filter(|r| r.class == FaultClass::Masked)
            .map(|r| r.depth)
            .collect();
        let masked = depths.len() as u64;
        let le0 = depths.iter().filter(|&&d| d <= 0).count() as u64;
        let le1 = depths.iter().filter(|&&d| d <= 1).count() as u64;
        let frac = |k: u64| (masked > 0).then(|| k as f64 / masked as f64);
        Self {
            masked,
            depth_le_0: le0,
            depth_le_1: le1,
            fraction_le_0: frac(le0),
            fraction_le_1: frac(le1),
        }
    }
}

/// Error statistics of one layer at or after the compromised layer,
/// aggregated over all records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub name: String,
    pub numel: usize,
    /// Mean over records of the per-record mean normalized error.
    #[serde(with = "inf_float")]
    pub mean_normalized_error: f64,
    #[serde(with = "inf_float")]
    pub max_normalized_error: f64,
    /// Fraction of records whose OFM differs from golden beyond eps.
    pub changed_fraction: f64,
    /// Mean bitflip percentage; int8 path only.
    pub mean_bitflip_ratio: Option<f64>,
    /// Records whose golden OFM was all zero (denominator fell back to 1).
    pub degenerate_records: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub layers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub checksum: String,
    pub images: usize,
    pub note: String,
}

/// Wall-clock figures. Excluded from determinism comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub golden_seconds: f64,
    pub campaign_seconds: f64,
    pub records_per_second: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema: String,
    pub schema_version: u32,
    pub config: CampaignConfig,
    pub mode_tag: String,
    pub path: ExecPath,
    pub model: ModelInfo,
    pub dataset: DatasetInfo,
    pub compromised_layer: usize,
    pub measured_layer: usize,
    pub eps: f64,
    /// Faults (or repetitions) drawn per image group.
    pub faults_per_group: u64,
    pub golden_accuracy: f64,
    /// Mean top-1 accuracy over all records (every fault and repetition).
    pub mode_accuracy: f64,
    pub accuracy_drop: f64,
    pub class_counts: ClassCounts,
    pub masked_depth: MaskedDepthStats,
    pub layers: Vec<LayerSummary>,
    /// Per-neuron maximum over records of the normalized error at
    /// `measured_layer`.
    #[serde(with = "inf_float::seq")]
    pub neuron_peak_error: Vec<f64>,
    pub records: Vec<FaultRecord>,
    pub runtime: Option<RuntimeStats>,
}

impl CampaignReport {
    /// The report with wall-clock data removed, for reproducibility checks.
    pub fn without_runtime(&self) -> CampaignReport {
        CampaignReport {
            runtime: None,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("serializing report", e))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: CampaignReport = serde_json::from_str(s).map_err(|e| Error::json("parsing report", e))?;
        if r.schema != REPORT_SCHEMA || r.schema_version != REPORT_VERSION {
            return Err(Error::Config(format!(
                "unsupported report schema {} v{}",
                r.schema, r.schema_version
            )));
        }
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw).map_err(|e| Error::in_file(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Per-record CSV: fault id, image, class, metrics, depth.
    pub fn records_csv(&self) -> String {
        let mut out = String::from("fault_id,image,class,max_difference,psnr_db,ssim,depth\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.fault_id,
                r.image,
                r.class,
                inf_float::format(r.metrics.max_difference),
                inf_float::format(r.metrics.psnr_db),
                inf_float::format(r.metrics.ssim),
                r.depth
            );
        }
        out
    }

    /// Values of one per-record metric, optionally for one class only.
    pub fn metric_values(&self, metric: RecordMetric, class: Option<FaultClass>) -> Vec<f64> {
        if metric == RecordMetric::NeuronPeak {
            return self.neuron_peak_error.clone();
        }
        self.records
            .iter()
            .filter(|r| class.map_or(true, |c| r.class == c))
            .map(|r| match metric {
                RecordMetric::MaxDifference => r.metrics.max_difference,
                RecordMetric::Psnr => r.metrics.psnr_db,
                RecordMetric::Ssim => r.metrics.ssim,
                RecordMetric::Depth => r.depth as f64,
                RecordMetric::NeuronPeak => unreachable!(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordMetric {
    MaxDifference,
    Psnr,
    Ssim,
    Depth,
    NeuronPeak,
}

impl std::str::FromStr for RecordMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "max_difference" | "maxdiff" => RecordMetric::MaxDifference,
            "psnr" | "psnr_db" => RecordMetric::Psnr,
            "ssim" => RecordMetric::Ssim,
            "depth" => RecordMetric::Depth,
            "neuron_peak" => RecordMetric::NeuronPeak,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown metric '{s}' (max_difference, psnr, ssim, depth, neuron_peak)"
                )))
            }
        })
    }
}

/// Equal-width counts over `[lo, hi]`. Bins are right-closed, and the
/// first bin also holds `lo` itself, so `[0, 0.5, 1]` in two bins over
/// `[0, 1]` gives `[2, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
    /// Non-finite values (sentinels such as +inf PSNR, NaN).
    pub sentinel: u64,
}

impl Histogram {
    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        let right = if i + 1 == self.counts.len() {
            self.hi
        } else {
            self.lo + w * (i + 1) as f64
        };
        (self.lo + w * i as f64, right)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let (l, r) = self.bin_edges(i);
            let _ = writeln!(out, "{l},{r},{c}");
        }
        out
    }
}

/// Bins `values`. Without a range, spans the finite values (or `[0, 1]`).
pub fn histogram(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) => {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!("bad histogram range [{lo}, {hi}]")));
            }
            (lo, hi)
        }
        None => {
            let finite = values.iter().copied().filter(|v| v.is_finite());
            let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if lo > hi {
                (0.0, 1.0)
            } else if lo == hi {
                (lo, lo + 1.0)
            } else {
                (lo, hi)
            }
        }
    };
    let mut h = Histogram {
        lo,
        hi,
        counts: vec![0; bins],
        below: 0,
        above: 0,
        sentinel: 0,
    };
    let w = (hi - lo) / bins as f64;
    for &v in values {
        if !v.is_finite() {
            h.sentinel += 1;
        } else if v < lo {
            h.below += 1;
        } else if v > hi {
            h.above += 1;
        } else {
            let idx = ((v - lo) / w).ceil() as i64 - 1;
            h.counts[idx.clamp(0, bins as i64 - 1) as usize] += 1;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn histogram_examples() {
        let h = histogram(&[0.0, 0.5, 1.0], 2, Some((0.0, 1.0))).unwrap();
        assert_eq!(h.counts, vec![2, 1]);
        assert_eq!(histogram(&[], 3, Some((0.0, 1.0))).unwrap().counts, vec![0, 0, 0]);
        let inf = histogram(&[f64::INFINITY; 4], 2, Some((0.0, 1.0))).unwrap();
        assert_eq!((inf.counts.iter().sum::<u64>(), inf.sentinel), (0, 4));
        let oob = histogram(&[-1.0, 2.0, 0.3], 4, Some((0.0, 1.0))).unwrap();
        assert_eq!((oob.below, oob.above, oob.counts.iter().sum::<u64>()), (1, 1, 1));
        assert!(histogram(&[1.0], 0, None).is_err());
        assert_eq!(histogram(&[5.0, 5.0], 2, None).unwrap().counts, vec![2, 0]);
        assert_eq!(h.to_csv(), "bin_left,bin_right,count\n0,0.5,2\n0.5,1,1\n");
    }

    proptest! {
        #[test]
        fn histogram_conserves_values(values in proptest::collection::vec(prop_oneof![
            -2.0f64..3.0, Just(f64::INFINITY), Just(f64::NAN), Just(0.0), Just(1.0)], 0..200), bins in 1usize..20) {
            let h = histogram(&values, bins, Some((0.0, 1.0))).unwrap();
            let total = h.counts.iter().sum::<u64>() + h.below + h.above + h.sentinel;
            prop_assert_eq!(total, values.len() as u64);
            let in_range = values.iter().filter(|v| v.is_finite() && (0.0..=1.0).contains(*v)).count() as u64;
            prop_assert_eq!(h.counts.iter().sum::<u64>(), in_range);
        }
    }
}
