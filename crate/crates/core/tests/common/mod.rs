//! Paths and loaders for the checked-in MNIST fixtures and the trained model.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use axfi_core::campaign::{CampaignConfig, CampaignInputs, CampaignMode, DatasetSpec, FaultBudget, LutRef};
use axfi_core::qnn::load_model;
use axfi_core::{load_mnist_idx, Dataset, NetworkModel};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn test_images() -> PathBuf {
    fixtures().join("mnist/t10k-images-idx3-ubyte.gz")
}

pub fn test_labels() -> PathBuf {
    fixtures().join("mnist/t10k-labels-idx1-ubyte.gz")
}

pub fn model_path() -> PathBuf {
    fixtures().join("model/fixture-cnn.json")
}

pub fn model() -> NetworkModel {
    load_model(model_path()).expect("fixture model")
}

pub fn test_set() -> Dataset {
    load_mnist_idx(&test_images(), &test_labels()).expect("fixture test set")
}

/// Inputs as a campaign config would load them: `subset` images drawn with
/// `subset_seed`.
pub fn inputs(subset: usize, subset_seed: u64) -> CampaignInputs {
    let mut cfg = config(
        CampaignMode::AxMult {
            lut: LutRef("exact".into()),
        },
        0,
        None,
    );
    cfg.dataset.subset = Some(subset);
    cfg.dataset.subset_seed = subset_seed;
    CampaignInputs::load(&cfg).expect("campaign inputs")
}

pub fn config(mode: CampaignMode, layer: usize, faults: Option<FaultBudget>) -> CampaignConfig {
    CampaignConfig {
        model: model_path(),
        dataset: DatasetSpec {
            images: test_images(),
            labels: test_labels(),
            subset: None,
            subset_seed: 0,
        },
        mode,
        compromised_layer: layer,
        faults,
        master_seed: 2024,
        eps: None,
        measured_layer: None,
        output_dir: None,
    }
}
