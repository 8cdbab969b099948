use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::kernels::ConvGeometry;
use crate::error::{Error, Result};
use crate::tensor::{symmetric_scale, QuantTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Dense {
        out_features: usize,
    },
    Relu,
    Flatten,
}

impl LayerKind {
    pub fn has_weights(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Dense { .. })
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv",
            LayerKind::MaxPool2d { .. } => "pool",
            LayerKind::Dense { .. } => "fc",
            LayerKind::Relu => "relu",
            LayerKind::Flatten => "flatten",
        }
    }
}

/// Quantized view of a layer's weights plus its calibrated output scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantParams {
    pub weights: Arc<QuantTensor>,
    pub output_scale: Option<f32>,
}

/// Weights of a multiplying layer. Tensors sit behind `Arc` so faulty model
/// variants only copy the tensor they modify.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Arc<Tensor>,
    pub bias: Arc<Tensor>,
    pub quant: Option<QuantParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub params: Option<LayerParams>,
}

impl Layer {
    pub fn new(kind: LayerKind) -> Self {
        Self { kind, params: None }
    }

    pub fn with_params(kind: LayerKind, weights: Tensor, bias: Tensor) -> Self {
        Self {
            kind,
            params: Some(LayerParams {
                weights: Arc::new(weights),
                bias: Arc::new(bias),
                quant: None,
            }),
        }
    }

    pub fn name(&self, index: usize) -> String {
        format!("{}{}", self.kind.short_name(), index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub name: String,
    /// `[C, H, W]` of one input image.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub num_classes: usize,
    /// Activation scale of the quantized input; set by calibration.
    pub input_scale: Option<f32>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl NetworkModel {
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
        num_classes: usize,
    ) -> Result<Self> {
        let model = Self {
            name: name.into(),
            input_shape,
            layers,
            num_classes,
            input_scale: None,
            metadata: BTreeMap::new(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks that shapes chain through every layer and that weights match.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.output_shapes()?;
        let last = shapes
            .last()
            .ok_or_else(|| Error::Config("model has no layers".into()))?;
        if last.iter().product::<usize>() != self.num_classes {
            return Err(Error::Config(format!(
                "final layer produces {last:?}, expected {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Output shape of every layer, in order.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer_output_shape(i, layer, &shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Input shape seen by each layer.
    pub fn input_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let outs = self.output_shapes()?;
        let mut ins = Vec::with_capacity(outs.len());
        ins.push(self.input_shape.clone());
        ins.extend(outs.into_iter().take(self.layers.len().saturating_sub(1)));
        Ok(ins)
    }

    pub fn weighted_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.params.is_some())
            .map(|(i, _)| i)
    }

    pub fn params(&self, layer: usize) -> Result<&LayerParams> {
        self.layers
            .get(layer)
            .ok_or_else(|| Error::Config(format!("layer {layer} does not exist")))?
            .params
            .as_ref()
            .ok_or_else(|| Error::Descriptor(format!("layer {layer} has no weights")))
    }

    /// Activation scale at the input of each layer (quant path).
    pub fn activation_scales(&self) -> Result<Vec<f32>> {
        let mut scale = self
            .input_scale
            .ok_or_else(|| Error::Config("model has no input scale; calibrate it first".into()))?;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            out.push(scale);
            if let Some(p) = &layer.params {
                scale = p
                    .quant
                    .as_ref()
                    .and_then(|q| q.output_scale)
                    .ok_or_else(|| Error::Config(format!("layer {i} is not calibrated")))?;
            }
        }
        Ok(out)
    }

    pub fn is_quantized(&self) -> bool {
        self.input_scale.is_some()
            && self.layers.iter().all(|l| {
                l.params
                    .as_ref()
                    .map_or(true, |p| p.quant.as_ref().is_some_and(|q| q.output_scale.is_some()))
            })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .map(|p| p.weights.numel() + p.bias.numel())
            .sum()
    }
}

pub(crate) fn conv_geometry(kind: &LayerKind, in_shape: &[usize]) -> Option<ConvGeometry> {
    match (*kind, in_shape) {
        (
            LayerKind::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            },
            &[c, h, w],
        ) => Some(ConvGeometry {
            in_channels: c,
            in_h: h,
            in_w: w,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
        }),
        _ => None,
    }
}

fn layer_output_shape(i: usize, layer: &Layer, shape: &[usize]) -> Result<Vec<usize>> {
    let err = |msg: String| Err(Error::Config(format!("layer {i} ({}): {msg}", layer.kind.short_name())));
    let expect_params = layer.kind.has_weights();
    if expect_params != layer.params.is_some() {
        return err(if expect_params {
            "missing weights".into()
        } else {
            "unexpected weights".into()
        });
    }
    match layer.kind {
        LayerKind::Conv2d {
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
        } => {
            let &[c, h, w] = shape else {
                return err(format!("expects [C, H, W] input, got {shape:?}"));
            };
            if stride == 0 || kernel_h == 0 || kernel_w == 0 {
                return err("zero stride or kernel".into());
            }
            if h + 2 * padding < kernel_h || w + 2 * padding < kernel_w {
                return err(format!(
                    "kernel {kernel_h}x{kernel_w} larger than padded input {shape:?}"
                ));
            }
            let p = layer.params.as_ref().unwrap();
            let want = [out_channels, c, kernel_h, kernel_w];
            if p.weights.shape != want {
                return err(format!("weights {:?}, expected {want:?}", p.weights.shape));
            }
            if p.bias.shape != [out_channels] {
                return err(format!("bias {:?}, expected [{out_channels}]", p.bias.shape));
            }
            let g = conv_geometry(&layer.kind, shape).unwrap();
            check_quant(i, p)?;
            Ok(vec![out_channels, g.out_h(), g.out_w()])
        }
        LayerKind::MaxPool2d { kernel, stride } => {
            let &[c, h, w] = shape else {
                return err(format!("expects [C, H, W] input, got {shape:?}"));
            };
            if kernel == 0 || stride == 0 || kernel > h || kernel > w {
                return err(format!("pool {kernel}/{stride} does not fit {shape:?}"));
            }
            Ok(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
        }
        LayerKind::Dense { out_features } => {
            let &[n_in] = shape else {
                return err(format!("expects flat input, got {shape:?}"));
            };
            let p = layer.params.as_ref().unwrap();
            if p.weights.shape != [out_features, n_in] {
                return err(format!(
                    "weights {:?}, expected [{out_features}, {n_in}]",
                    p.weights.shape
                ));
            }
            if p.bias.shape != [out_features] {
                return err(format!("bias {:?}, expected [{out_features}]", p.bias.shape));
            }
            check_quant(i, p)?;
            Ok(vec![out_features])
        }
        LayerKind::Relu => Ok(shape.to_vec()),
        LayerKind::Flatten => Ok(vec![shape.iter().product()]),
    }
}

fn check_quant(i: usize, p: &LayerParams) -> Result<()> {
    if let Some(q) = &p.quant {
        if q.weights.shape != p.weights.shape {
            return Err(Error::Config(format!(
                "layer {i}: quantized weights {:?} do not match float weights {:?}",
                q.weights.shape, p.weights.shape
            )));
        }
    }
    Ok(())
}

/// Post-training symmetric per-tensor weight quantization (`max|w| / 127`).
///
/// Existing calibrated output scales are kept, so applying this twice is a
/// no-op.
pub fn quantize_model(model: &NetworkModel) -> Result<NetworkModel> {
    let mut out = model.clone();
    for (i, layer) in out.layers.iter_mut().enumerate() {
        let Some(p) = layer.params.as_mut() else { continue };
        if !p.weights.is_finite() || !p.bias.is_finite() {
            return Err(Error::InvalidArgument(format!("layer {i} has non-finite weights")));
        }
        let scale = symmetric_scale(&p.weights.data);
        let q = QuantTensor::quantize(&p.weights, scale)?;
        let output_scale = p.quant.as_ref().and_then(|q| q.output_scale);
        p.quant = Some(QuantParams {
            weights: Arc::new(q),
            output_scale,
        });
    }
    Ok(out)
}

/// Sets activation scales from float-path statistics: the input scale is
/// `max|x| / 127` over the calibration images and each multiplying layer's
/// output scale is `max|ofm| / 127`. Quantizes weights if needed.
pub fn calibrate(model: &NetworkModel, images: &[Tensor]) -> Result<NetworkModel> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = if model
        .layers
        .iter()
        .all(|l| l.params.as_ref().map_or(true, |p| p.quant.is_some()))
    {
        model.clone()
    } else {
        quantize_model(model)?
    };
    let mut input_max = 0.0f32;
    let mut layer_max = vec![0.0f32; model.layers.len()];
    for img in images {
        input_max = img.data.iter().fold(input_max, |m, v| m.max(v.abs()));
        let trace = super::forward::forward_float(model, img)?;
        for (l, ofm) in trace.iter().enumerate() {
            layer_max[l] = ofm.data.iter().fold(layer_max[l], |m, v| m.max(v.abs()));
        }
    }
    let to_scale = |m: f32| if m > 0.0 { m / 127.0 } else { 1.0 };
    out.input_scale = Some(to_scale(input_max));
    for (l, layer) in out.layers.iter_mut().enumerate() {
        if let Some(q) = layer.params.as_mut().and_then(|p| p.quant.as_mut()) {
            q.output_scale = Some(to_scale(layer_max[l]));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::tiny_model;

    #[test]
    fn shapes_chain() {
        let m = tiny_model();
        assert_eq!(
            m.output_shapes().unwrap(),
            vec![vec![2, 2, 2], vec![2, 2, 2], vec![2, 1, 1], vec![2], vec![3]]
        );
        assert_eq!(m.weighted_layers().collect::<Vec<_>>(), vec![0, 4]);
    }

    #[test]
    fn bad_chain_is_config_error() {
        let mut m = tiny_model();
        m.layers.swap(3, 4);
        assert!(matches!(m.validate(), Err(Error::Config(_))));
        let mut m = tiny_model();
        m.layers[1].params = m.layers[0].params.clone();
        assert!(m.validate().is_err());
    }

    #[test]
    fn quantize_is_idempotent() {
        let m = tiny_model();
        let q1 = quantize_model(&m).unwrap();
        let q2 = quantize_model(&q1).unwrap();
        assert_eq!(q1, q2);
        let q = q1.layers[0].params.as_ref().unwrap().quant.as_ref().unwrap();
        assert_eq!(q.weights.scale, 1.0 / 127.0);
        assert_eq!(q.weights.data, vec![64, -32, 16, 127, -127, 64, 32, 0]);
    }

    #[test]
    fn all_zero_weights_get_unit_scale() {
        let mut m = tiny_model();
        let p = m.layers[0].params.as_mut().unwrap();
        p.weights = Arc::new(Tensor::zeros(vec![2, 1, 2, 2]));
        let q = quantize_model(&m).unwrap();
        let qp = q.layers[0].params.as_ref().unwrap().quant.as_ref().unwrap();
        assert_eq!(qp.weights.scale, 1.0);
        assert!(qp.weights.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn calibration_sets_every_scale() {
        let m = tiny_model();
        let img = Tensor::new(vec![1, 3, 3], vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1, 0.9, 0.3, 0.6]).unwrap();
        let q = calibrate(&m, &[img]).unwrap();
        assert!(q.is_quantized());
        let scales = q.activation_scales().unwrap();
        assert_eq!(scales.len(), 5);
        assert_eq!(scales[0], 1.0 / 127.0);
        assert!(calibrate(&m, &[]).is_err());
    }
}
