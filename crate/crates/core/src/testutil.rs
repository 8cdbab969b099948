use crate::qnn::{calibrate, Layer, LayerKind, NetworkModel};
use crate::seed;
use crate::tensor::Tensor;
use rand::Rng;

pub(crate) fn tiny_model() -> NetworkModel {
    let conv = Layer::with_params(
        LayerKind::Conv2d {
            out_channels: 2,
            kernel_h: 2,
            kernel_w: 2,
            stride: 1,
            padding: 0,
        },
        Tensor::new(vec![2, 1, 2, 2], vec![0.5, -0.25, 0.125, 1.0, -1.0, 0.5, 0.25, 0.0]).unwrap(),
        Tensor::new(vec![2], vec![0.1, -0.2]).unwrap(),
    );
    let dense = Layer::with_params(
        LayerKind::Dense { out_features: 3 },
        Tensor::new(vec![3, 2], vec![1.0, -1.0, 0.5, 0.5, -0.3, 0.7]).unwrap(),
        Tensor::new(vec![3], vec![0.0, 0.1, -0.1]).unwrap(),
    );
    NetworkModel::new(
        "tiny",
        vec![1, 3, 3],
        vec![
            conv,
            Layer::new(LayerKind::Relu),
            Layer::new(LayerKind::MaxPool2d { kernel: 2, stride: 2 }),
            Layer::new(LayerKind::Flatten),
            dense,
        ],
        3,
    )
    .unwrap()
}

pub(crate) fn tiny_input(s: u64) -> Tensor {
    let mut rng = seed::rng(s, &[]);
    Tensor::new(vec![1, 3, 3], (0..9).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

pub(crate) fn calibrated_tiny_model() -> NetworkModel {
    let images: Vec<Tensor> = (0..8).map(tiny_input).collect();
    calibrate(&tiny_model(), &images).unwrap()
}
