//! Minimal float trainer for the fixture CNN.
//!
//! Mini-batch SGD with momentum on softmax cross-entropy. Per-sample
//! gradients are computed in parallel and summed in sample order, so the
//! result depends only on the seed, never on the thread count.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::qnn::{
    calibrate, conv_geometry, forward, forward_float, ExecPath, Layer, LayerKind, MultPlan, NetworkModel, Taps,
};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    /// Images used to calibrate activation scales after training.
    pub calibration_images: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            seed: 1,
            learning_rate: 0.02,
            momentum: 0.9,
            batch_size: 32,
            calibration_images: 256,
        }
    }
}

/// Two conv/ReLU/pool stages and one dense classifier. For a 28x28 input
/// the second convolution has 16x8x8 = 1024 output neurons.
pub fn fixture_architecture(input_shape: &[usize], num_classes: usize, seed: u64) -> Result<NetworkModel> {
    let [c, _, _] = input_shape else {
        return Err(Error::Shape(format!("expected [C,H,W] input, got {input_shape:?}")));
    };
    let conv = |out, inp| {
        (
            LayerKind::Conv2d {
                out_channels: out,
                kernel_h: 5,
                kernel_w: 5,
                stride: 1,
                padding: 0,
            },
            vec![out, inp, 5, 5],
        )
    };
    let pool = LayerKind::MaxPool2d { kernel: 2, stride: 2 };
    let mut layers = vec![];
    let (k1, s1) = conv(8, *c);
    let (k2, s2) = conv(16, 8);
    layers.push(init_layer(k1, s1, seed, 0));
    layers.push(Layer::new(LayerKind::Relu));
    layers.push(Layer::new(pool));
    layers.push(init_layer(k2, s2, seed, 3));
    layers.push(Layer::new(LayerKind::Relu));
    layers.push(Layer::new(pool));
    layers.push(Layer::new(LayerKind::Flatten));
    // Placeholder dense shape; fixed below once the flatten size is known.
    let probe = NetworkModel {
        name: String::new(),
        input_shape: input_shape.to_vec(),
        layers: layers.clone(),
        num_classes,
        input_scale: None,
        metadata: Default::default(),
    };
    let flat: usize = probe.output_shapes()?.last().unwrap().iter().product();
    layers.push(init_layer(
        LayerKind::Dense {
            out_features: num_classes,
        },
        vec![num_classes, flat],
        seed,
        7,
    ));
    NetworkModel::new("fixture-cnn", input_shape.to_vec(), layers, num_classes)
}

/// He-uniform weights, zero bias.
fn init_layer(kind: LayerKind, shape: Vec<usize>, seed: u64, index: u64) -> Layer {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    let mut rng = seed::rng(seed, &[0x1417, index]);
    let n: usize = shape.iter().product();
    let w = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    let out = shape[0];
    Layer::with_params(kind, Tensor { shape, data: w }, Tensor::zeros(vec![out]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub quant_test_accuracy: f64,
}

/// Trains the fixture CNN on `train`, calibrates and quantizes it, and
/// stores the summary in the model metadata.
pub fn train_fixture_model(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<(NetworkModel, TrainSummary)> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let num_classes = train.labels.iter().chain(&test.labels).max().unwrap() + 1;
    let mut model = fixture_architecture(&train.images[0].shape, num_classes.max(2), cfg.seed)?;
    let mut velocity: Vec<Option<(Vec<f32>, Vec<f32>)>> = model
        .layers
        .iter()
        .map(|l| {
            l.params
                .as_ref()
                .map(|p| (vec![0.0; p.weights.numel()], vec![0.0; p.bias.numel()]))
        })
        .collect();

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::rng(cfg.seed, &[0x5EED, epoch as u64]));
        let mut total = 0.0f64;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let grads = batch
                .par_iter()
                .map(|&i| sample_gradient(&model, &train.images[i], train.labels[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut sum = zero_grads(&model);
            let mut loss = 0.0f64;
            for g in &grads {
                loss += g.loss;
                for (acc, (gw, gb)) in sum.iter_mut().zip(&g.layers) {
                    if let Some((aw, ab)) = acc {
                        aw.iter_mut().zip(gw).for_each(|(a, b)| *a += b);
                        ab.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
                    }
                }
            }
            let mean_loss = loss / batch.len() as f64;
            if !mean_loss.is_finite() {
                return Err(Error::Divergence {
                    seed: cfg.seed,
                    epoch,
                    step,
                    loss: mean_loss as f32,
                });
            }
            total += loss;
            let scale = cfg.learning_rate / batch.len() as f32;
            for ((layer, vel), g) in model.layers.iter_mut().zip(&mut velocity).zip(&sum) {
                let (Some(p), Some((vw, vb)), Some((gw, gb))) = (layer.params.as_mut(), vel.as_mut(), g) else {
                    continue;
                };
                let w = Arc::make_mut(&mut p.weights);
                for ((x, v), g) in w.data.iter_mut().zip(vw.iter_mut()).zip(gw) {
                    *v = cfg.momentum * *v - scale * g;
                    *x += *v;
                }
                let b = Arc::make_mut(&mut p.bias);
                for ((x, v), g) in b.data.iter_mut().zip(vb.iter_mut()).zip(gb) {
                    *v = cfg.momentum * *v - scale * g;
                    *x += *v;
                }
            }
        }
        epoch_loss.push(total / train.len() as f64);
    }

    let calib: Vec<Tensor> = train
        .images
        .iter()
        .take(cfg.calibration_images.max(1))
        .cloned()
        .collect();
    let mut model = calibrate(&model, &calib)?;
    let summary = TrainSummary {
        epoch_loss,
        train_accuracy: accuracy(&model, train, ExecPath::Float)?,
        test_accuracy: accuracy(&model, test, ExecPath::Float)?,
        quant_test_accuracy: accuracy(&model, test, ExecPath::Quant)?,
    };
    model.metadata.insert(
        "training".into(),
        json!({
            "config": cfg,
            "train_dataset": {"name": train.name, "checksum": train.checksum, "images": train.len()},
            "test_dataset": {"name": test.name, "checksum": test.checksum, "images": test.len()},
            "epoch_loss": summary.epoch_loss,
            "train_accuracy": summary.train_accuracy,
            "test_accuracy": summary.test_accuracy,
            "quant_test_accuracy": summary.quant_test_accuracy,
        }),
    );
    Ok((model, summary))
}

/// Top-1 accuracy of `model` on `dataset`.
pub fn accuracy(model: &NetworkModel, dataset: &Dataset, path: ExecPath) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let correct = dataset
        .images
        .par_iter()
        .zip(&dataset.labels)
        .map(|(img, &label)| {
            forward(model, img, path, &MultPlan::exact(), &Taps::none()).map(|t| (t.prediction == label) as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / dataset.len() as f64)
}

type LayerGrads = Option<(Vec<f32>, Vec<f32>)>;

struct SampleGradient {
    loss: f64,
    layers: Vec<(Vec<f32>, Vec<f32>)>,
}

fn zero_grads(model: &NetworkModel) -> Vec<LayerGrads> {
    model
        .layers
        .iter()
        .map(|l| {
            l.params
                .as_ref()
                .map(|p| (vec![0.0; p.weights.numel()], vec![0.0; p.bias.numel()]))
        })
        .collect()
}

fn sample_gradient(model: &NetworkModel, input: &Tensor, label: usize) -> Result<SampleGradient> {
    let outs = forward_float(model, input)?;
    let in_shapes = model.input_shapes()?;
    let logits = &outs.last().unwrap().data;

    // Softmax cross-entropy.
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) as f64).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() - (logits[label] - max) as f64;
    let mut delta: Vec<f32> = exps.iter().map(|e| (e / z) as f32).collect();
    delta[label] -= 1.0;

    let mut layers = vec![(Vec::new(), Vec::new()); model.layers.len()];
    for l in (0..model.layers.len()).rev() {
        let x: &[f32] = if l == 0 { &input.data } else { &outs[l - 1].data };
        let need_dx = l > 0;
        let layer = &model.layers[l];
        delta = match layer.kind {
            LayerKind::Dense { .. } => {
                let p = layer.params.as_ref().unwrap();
                let n_in = x.len();
                let mut gw = vec![0.0f32; p.weights.numel()];
                let mut dx = vec![0.0f32; if need_dx { n_in } else { 0 }];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &p.weights.data[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        gw[o * n_in + i] = d * x[i];
                        if need_dx {
                            dx[i] += d * row[i];
                        }
                    }
                }
                layers[l] = (gw, delta.clone());
                dx
            }
            LayerKind::Conv2d { .. } => {
                let p = layer.params.as_ref().unwrap();
                let g = conv_geometry(&layer.kind, &in_shapes[l]).unwrap();
                let (oh, ow) = (g.out_h(), g.out_w());
                let kk = g.kernel_h * g.kernel_w;
                let mut gw = vec![0.0f32; p.weights.numel()];
                let mut gb = vec![0.0f32; g.out_channels];
                let mut dx = vec![0.0f32; if need_dx { x.len() } else { 0 }];
                for oc in 0..g.out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let d = delta[(oc * oh + oy) * ow + ox];
                            if d == 0.0 {
                                continue;
                            }
                            gb[oc] += d;
                            for ic in 0..g.in_channels {
                                let wbase = (oc * g.in_channels + ic) * kk;
                                let xbase = ic * g.in_h * g.in_w;
                                for ky in 0..g.kernel_h {
                                    let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                                    for kx in 0..g.kernel_w {
                                        let Some(ix) = g.source(ox, kx, g.in_w) else { continue };
                                        let xi = xbase + iy * g.in_w + ix;
                                        let wi = wbase + ky * g.kernel_w + kx;
                                        gw[wi] += d * x[xi];
                                        if need_dx {
                                            dx[xi] += d * p.weights.data[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                layers[l] = (gw, gb);
                dx
            }
            LayerKind::Relu => delta
                .iter()
                .zip(x)
                .map(|(&d, &v)| if v > 0.0 { d } else { 0.0 })
                .collect(),
            LayerKind::MaxPool2d { kernel, stride } => {
                let [c, h, w] = in_shapes[l][..] else { unreachable!() };
                let oh = (h - kernel) / stride + 1;
                let ow = (w - kernel) / stride + 1;
                let mut dx = vec![0.0f32; x.len()];
                for ch in 0..c {
                    let base = ch * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            // First maximum in scan order, as in the forward kernel.
                            let mut best = base + oy * stride * w + ox * stride;
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let i = base + (oy * stride + ky) * w + ox * stride + kx;
                                    if x[i] > x[best] {
                                        best = i;
                                    }
                                }
                            }
                            dx[best] += delta[(ch * oh + oy) * ow + ox];
                        }
                    }
                }
                dx
            }
            LayerKind::Flatten => delta,
        };
    }
    Ok(SampleGradient { loss, layers })
}
