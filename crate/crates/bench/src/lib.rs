//! Fixture loading shared by the benchmarks in `benches/`.

use std::path::{Path, PathBuf};

use axfi_core::qnn::load_model;
use axfi_core::{load_mnist_idx, Dataset, NetworkModel};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture_model() -> NetworkModel {
    load_model(fixtures().join("model/fixture-cnn.json")).expect("fixture model")
}

/// The first `n` images of the fixture test set.
pub fn fixture_images(n: usize) -> Dataset {
    let data = load_mnist_idx(
        &fixtures().join("mnist/t10k-images-idx3-ubyte.gz"),
        &fixtures().join("mnist/t10k-labels-idx1-ubyte.gz"),
    )
    .expect("fixture test set");
    data.slice(0..n.min(data.len()))
}
