//! The checked-in MNIST subset, trained model and example configs load and
//! behave as documented.

mod common;

use axfi_core::campaign::{accuracy, run_golden, CampaignConfig, CampaignInputs};
use axfi_core::dataset::file_sha256;
use axfi_core::qnn::{load_model, save_model};
use axfi_core::ExecPath;

#[test]
fn mnist_fixtures_parse_with_expected_shapes() {
    let test = common::test_set();
    assert_eq!(test.len(), 1000);
    assert!(test.images.iter().all(|t| t.shape == [1, 28, 28]));
    assert!(test
        .images
        .iter()
        .all(|t| t.data.iter().all(|&v| (0.0..=1.0).contains(&v))));
    assert!(test.labels.iter().all(|&l| l < 10));
    assert_eq!(test.checksum.len(), 64);
    let train = axfi_core::load_mnist_idx(
        &common::fixtures().join("mnist/train-images-idx3-ubyte.gz"),
        &common::fixtures().join("mnist/train-labels-idx1-ubyte.gz"),
    )
    .unwrap();
    assert_eq!(train.len(), 4000);
    assert_ne!(train.checksum, test.checksum);
}

#[test]
fn fixture_model_is_quantized_and_accurate() {
    let model = common::model();
    assert!(model.is_quantized());
    assert_eq!(model.num_classes, 10);
    let shapes = model.output_shapes().unwrap();
    assert_eq!(shapes[3], vec![16, 8, 8], "second conv has 1024 neurons");
    assert!(model.metadata.contains_key("training"));
    let test = common::test_set();
    let float = accuracy(&model, &test, ExecPath::Float).unwrap();
    let quant = accuracy(&model, &test, ExecPath::Quant).unwrap();
    assert!(float >= 0.90, "float accuracy {float}");
    assert!(quant >= 0.90, "int8 accuracy {quant}");
}

#[test]
fn example_configs_load_and_validate() {
    let dir = common::fixtures().join("configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let cfg = CampaignConfig::load(&path).unwrap();
        let inputs = CampaignInputs::load(&cfg).unwrap();
        cfg.validate(&inputs.model).unwrap();
        assert_eq!(inputs.dataset.len(), cfg.dataset.subset.unwrap());
        seen += 1;
    }
    assert!(seen >= 3);
}

#[test]
fn subsets_are_reproducible() {
    let a = common::inputs(50, 7);
    let b = common::inputs(50, 7);
    let c = common::inputs(50, 8);
    assert_eq!(a.dataset.checksum, b.dataset.checksum);
    assert_eq!(a.dataset.labels, b.dataset.labels);
    assert_ne!(a.dataset.checksum, c.dataset.checksum);
}

#[test]
fn fixture_model_round_trips_through_disk() {
    let model = common::model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.json");
    save_model(&model, &path).unwrap();
    assert_eq!(
        file_sha256(&path.with_extension("bin")).unwrap(),
        file_sha256(&common::model_path().with_extension("bin")).unwrap()
    );
    let back = load_model(&path).unwrap();
    let data = common::test_set().slice(0..20);
    for path in [ExecPath::Float, ExecPath::Quant] {
        let a = run_golden(&model, &data, path).unwrap();
        let b = run_golden(&back, &data, path).unwrap();
        assert!(a.traces.iter().zip(&b.traces).all(|(x, y)| x.bit_eq(y)));
    }
}
