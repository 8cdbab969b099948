use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::report::CampaignReport;
use crate::error::{Error, Result};
use crate::metrics::inf_float;

/// Neurons an FI campaign and an AxC campaign would recommend protecting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectionComparison {
    pub threshold: f64,
    pub layer: usize,
    pub reference: Vec<usize>,
    pub candidate: Vec<usize>,
    /// Share of the reference set found by the candidate; 1 when the
    /// reference set is empty.
    pub recall: f64,
    /// `|R ∩ C| / |R ∪ C|`; 1 when both are empty.
    pub jaccard: f64,
    #[serde(with = "inf_float::seq")]
    pub reference_peaks: Vec<f64>,
    #[serde(with = "inf_float::seq")]
    pub candidate_peaks: Vec<f64>,
}

/// Indices whose peak normalized error exceeds `threshold`.
pub fn protection_set(peaks: &[f64], threshold: f64) -> Vec<usize> {
    peaks
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// A threshold that puts exactly the `k` largest peaks above it, or `None`
/// if ties make that impossible.
pub fn threshold_for_top_k(peaks: &[f64], k: usize) -> Option<f64> {
    if k == 0 || k > peaks.len() {
        return None;
    }
    let mut sorted: Vec<f64> = peaks.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let above = sorted[k - 1];
    let below = sorted.get(k).copied().unwrap_or(f64::NEG_INFINITY);
    if above <= below {
        return None;
    }
    Some(if below.is_finite() && above.is_finite() {
        below + (above - below) / 2.0
    } else if below.is_finite() {
        below
    } else {
        above - 1.0
    })
}

pub fn compare_sets(
    reference_peaks: &[f64],
    candidate_peaks: &[f64],
    threshold: f64,
    layer: usize,
) -> Result<ProtectionComparison> {
    if reference_peaks.len() != candidate_peaks.len() {
        return Err(Error::Comparison(format!(
            "neuron counts differ: {} vs {}",
            reference_peaks.len(),
            candidate_peaks.len()
        )));
    }
    let reference = protection_set(reference_peaks, threshold);
    let candidate = protection_set(candidate_peaks, threshold);
    let r: BTreeSet<usize> = reference.iter().copied().collect();
    let c: BTreeSet<usize> = candidate.iter().copied().collect();
    let inter = r.intersection(&c).count();
    let union = r.union(&c).count();
    Ok(ProtectionComparison {
        threshold,
        layer,
        recall: if r.is_empty() {
            1.0
        } else {
            inter as f64 / r.len() as f64
        },
        jaccard: if union == 0 { 1.0 } else { inter as f64 / union as f64 },
        reference,
        candidate,
        reference_peaks: reference_peaks.to_vec(),
        candidate_peaks: candidate_peaks.to_vec(),
    })
}

/// Compares the protection sets of two campaigns measured at the same layer.
pub fn compare_campaigns(fi: &CampaignReport, axc: &CampaignReport, threshold: f64) -> Result<ProtectionComparison> {
    if fi.measured_layer != axc.measured_layer {
        return Err(Error::Comparison(format!(
            "reports measured different layers ({} vs {})",
            fi.measured_layer, axc.measured_layer
        )));
    }
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!("threshold {threshold} is not finite")));
    }
    compare_sets(
        &fi.neuron_peak_error,
        &axc.neuron_peak_error,
        threshold,
        fi.measured_layer,
    )
}
