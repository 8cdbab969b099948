use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::kernels::{self, quantize_bias, requant_multiplier};
use super::model::{conv_geometry, LayerKind, NetworkModel};
use crate::axmult::{suppress_in_place, BitSuppressorConfig, MultiplierLut, NativeMultiplier};
use crate::error::{Error, Result};
use crate::faults;
use crate::tensor::{argmax, QuantTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecPath {
    Float,
    Quant,
}

/// Which multiplier each multiplying layer uses. Layers without an entry
/// use native integer multiplication.
#[derive(Debug, Clone, Default)]
pub struct MultPlan {
    luts: BTreeMap<usize, Arc<MultiplierLut>>,
}

impl MultPlan {
    pub fn exact() -> Self {
        Self::default()
    }

    /// One approximate unit deployed in every multiplying layer.
    pub fn uniform(model: &NetworkModel, lut: Arc<MultiplierLut>) -> Self {
        let luts = model.weighted_layers().map(|l| (l, lut.clone())).collect();
        Self { luts }
    }

    pub fn with_layer(mut self, layer: usize, lut: Arc<MultiplierLut>) -> Self {
        self.luts.insert(layer, lut);
        self
    }

    pub fn get(&self, layer: usize) -> Option<&MultiplierLut> {
        self.luts.get(&layer).map(Arc::as_ref)
    }

    pub fn is_exact(&self) -> bool {
        self.luts.is_empty()
    }

    pub fn first_layer(&self) -> Option<usize> {
        self.luts.keys().next().copied()
    }
}

/// A perturbation applied to a layer's output right after it is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tap", rename_all = "snake_case")]
pub enum Tap {
    /// Flip one bit of one element (int8 or f32 depending on the path).
    FlipBit { index: usize, bit: u32 },
    /// Flip `floor(rate * bits)` distinct bits of the int8 map.
    BitFlips { rate: f64, seed: u64 },
    /// Bit suppressor; `stream` separates independent applications.
    Suppress { cfg: BitSuppressorConfig, stream: u64 },
}

#[derive(Debug, Clone, Default)]
pub struct Taps {
    by_layer: BTreeMap<usize, Vec<Tap>>,
}

impl Taps {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn at(layer: usize, tap: Tap) -> Self {
        Self::default().with(layer, tap)
    }

    pub fn with(mut self, layer: usize, tap: Tap) -> Self {
        self.by_layer.entry(layer).or_default().push(tap);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.by_layer.is_empty()
    }

    pub fn first_layer(&self) -> Option<usize> {
        self.by_layer.keys().next().copied()
    }
}

/// Output feature map of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "path", rename_all = "snake_case")]
pub enum Ofm {
    Float(Tensor),
    Quant(QuantTensor),
}

impl Ofm {
    pub fn shape(&self) -> &[usize] {
        match self {
            Ofm::Float(t) => &t.shape,
            Ofm::Quant(q) => &q.shape,
        }
    }

    pub fn numel(&self) -> usize {
        match self {
            Ofm::Float(t) => t.numel(),
            Ofm::Quant(q) => q.numel(),
        }
    }

    /// Real-valued view (dequantized on the quant path).
    pub fn to_tensor(&self) -> Tensor {
        match self {
            Ofm::Float(t) => t.clone(),
            Ofm::Quant(q) => q.dequantize(),
        }
    }

    pub fn as_quant(&self) -> Option<&QuantTensor> {
        match self {
            Ofm::Quant(q) => Some(q),
            Ofm::Float(_) => None,
        }
    }

    pub fn as_float(&self) -> Option<&Tensor> {
        match self {
            Ofm::Float(t) => Some(t),
            Ofm::Quant(_) => None,
        }
    }

    /// Bitwise equality of the stored representation.
    pub fn bit_eq(&self, other: &Ofm) -> bool {
        match (self, other) {
            (Ofm::Float(a), Ofm::Float(b)) => a.bit_eq(b),
            (Ofm::Quant(a), Ofm::Quant(b)) => a == b,
            _ => false,
        }
    }
}

/// Every layer's output for one input, plus the final logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub ofms: Vec<Ofm>,
    pub logits: Vec<f32>,
    pub prediction: usize,
}

impl LayerTrace {
    fn from_ofms(ofms: Vec<Ofm>) -> Self {
        let logits = ofms.last().map(|o| o.to_tensor().data).unwrap_or_default();
        let prediction = argmax(&logits);
        Self {
            ofms,
            logits,
            prediction,
        }
    }

    pub fn bit_eq(&self, other: &LayerTrace) -> bool {
        self.ofms.len() == other.ofms.len() && self.ofms.iter().zip(&other.ofms).all(|(a, b)| a.bit_eq(b))
    }
}

/// Runs `model` on one `[C, H, W]` input.
pub fn forward(
    model: &NetworkModel,
    input: &Tensor,
    path: ExecPath,
    plan: &MultPlan,
    taps: &Taps,
) -> Result<LayerTrace> {
    Engine::prepare(model, path, plan, taps)?.run_full(input, None)
}

/// Like [`forward`] but reuses `golden`'s outputs for every layer before
/// `start`. Only valid when those layers carry no approximation or taps and
/// `golden` came from the same model, input and path.
pub fn forward_from(
    model: &NetworkModel,
    golden: &LayerTrace,
    start: usize,
    input: &Tensor,
    path: ExecPath,
    plan: &MultPlan,
    taps: &Taps,
) -> Result<LayerTrace> {
    let engine = Engine::prepare(model, path, plan, taps)?;
    if plan.first_layer().is_some_and(|l| l < start) || taps.first_layer().is_some_and(|l| l < start) {
        return Err(Error::Config(format!(
            "cannot resume at layer {start}: earlier layers are perturbed"
        )));
    }
    if golden.ofms.len() != model.layers.len() {
        return Err(Error::Shape("golden trace does not match model".into()));
    }
    if start == 0 {
        return engine.run_full(input, None);
    }
    let mut ofms: Vec<Ofm> = golden.ofms[..start].to_vec();
    let x = ofms.last().unwrap().clone();
    engine.run_layers(x, start, &mut ofms, None)?;
    Ok(LayerTrace::from_ofms(ofms))
}

/// Forward pass that also returns the wall time spent in each layer.
pub fn forward_timed(
    model: &NetworkModel,
    input: &Tensor,
    path: ExecPath,
    plan: &MultPlan,
) -> Result<(LayerTrace, Vec<Duration>)> {
    let taps = Taps::none();
    let engine = Engine::prepare(model, path, plan, &taps)?;
    let mut times = Vec::with_capacity(model.layers.len());
    let trace = engine.run_full(input, Some(&mut times))?;
    Ok((trace, times))
}

/// Float-path outputs of every layer, without the trace wrapper.
pub fn forward_float(model: &NetworkModel, input: &Tensor) -> Result<Vec<Tensor>> {
    let trace = forward(model, input, ExecPath::Float, &MultPlan::exact(), &Taps::none())?;
    Ok(trace
        .ofms
        .into_iter()
        .map(|o| match o {
            Ofm::Float(t) => t,
            Ofm::Quant(q) => q.dequantize(),
        })
        .collect())
}

struct Engine<'a> {
    model: &'a NetworkModel,
    path: ExecPath,
    plan: &'a MultPlan,
    taps: &'a Taps,
    in_shapes: Vec<Vec<usize>>,
    scales: Vec<f32>,
}

impl<'a> Engine<'a> {
    fn prepare(model: &'a NetworkModel, path: ExecPath, plan: &'a MultPlan, taps: &'a Taps) -> Result<Self> {
        let in_shapes = model.input_shapes()?;
        let out_shapes = model.output_shapes()?;
        for &l in plan.luts.keys() {
            if !model.layers.get(l).is_some_and(|x| x.kind.has_weights()) {
                return Err(Error::Config(format!(
                    "multiplier plan targets non-multiplying layer {l}"
                )));
            }
        }
        if path == ExecPath::Float && !plan.is_exact() {
            return Err(Error::Config("approximate multipliers need the quantized path".into()));
        }
        for (&l, list) in &taps.by_layer {
            let Some(shape) = out_shapes.get(l) else {
                return Err(Error::Config(format!("tap on missing layer {l}")));
            };
            let numel: usize = shape.iter().product();
            for tap in list {
                match tap {
                    Tap::FlipBit { index, bit } => {
                        let width = if path == ExecPath::Quant { 8 } else { 32 };
                        if *index >= numel || *bit >= width {
                            return Err(Error::Descriptor(format!(
                                "OFM bit ({index}, {bit}) outside layer {l} ({numel} x {width} bits)"
                            )));
                        }
                    }
                    Tap::BitFlips { rate, .. } => {
                        if path != ExecPath::Quant {
                            return Err(Error::Config("rate OFM faults need the quantized path".into()));
                        }
                        if !(*rate > 0.0 && *rate <= 1.0) {
                            return Err(Error::Config(format!("OFM fault rate {rate} outside (0, 1]")));
                        }
                    }
                    Tap::Suppress { cfg, .. } => {
                        if path != ExecPath::Quant {
                            return Err(Error::Config("bit suppression needs the quantized path".into()));
                        }
                        cfg.validate()?;
                    }
                }
            }
        }
        let scales = match path {
            ExecPath::Quant => model.activation_scales()?,
            ExecPath::Float => Vec::new(),
        };
        Ok(Self {
            model,
            path,
            plan,
            taps,
            in_shapes,
            scales,
        })
    }

    fn run_full(&self, input: &Tensor, timings: Option<&mut Vec<Duration>>) -> Result<LayerTrace> {
        if input.shape != self.model.input_shape {
            return Err(Error::Shape(format!(
                "input shape {:?}, model expects {:?}",
                input.shape, self.model.input_shape
            )));
        }
        let x = match self.path {
            ExecPath::Float => Ofm::Float(input.clone()),
            ExecPath::Quant => {
                if !input.is_finite() {
                    return Err(Error::NonFiniteInput(format!(
                        "{} non-finite input values",
                        input.data.iter().filter(|v| !v.is_finite()).count()
                    )));
                }
                Ofm::Quant(QuantTensor::quantize(input, self.scales[0])?)
            }
        };
        let mut ofms = Vec::with_capacity(self.model.layers.len());
        self.run_layers(x, 0, &mut ofms, timings)?;
        Ok(LayerTrace::from_ofms(ofms))
    }

    fn run_layers(
        &self,
        mut x: Ofm,
        start: usize,
        ofms: &mut Vec<Ofm>,
        mut timings: Option<&mut Vec<Duration>>,
    ) -> Result<()> {
        for l in start..self.model.layers.len() {
            let t0 = Instant::now();
            let mut y = match &x {
                Ofm::Float(t) => Ofm::Float(self.step_float(l, t)),
                Ofm::Quant(q) => Ofm::Quant(self.step_quant(l, q)?),
            };
            if let Some(t) = timings.as_deref_mut() {
                t.push(t0.elapsed());
            }
            if let Some(list) = self.taps.by_layer.get(&l) {
                for tap in list {
                    apply_tap(&mut y, tap);
                }
            }
            ofms.push(y.clone());
            x = y;
        }
        Ok(())
    }

    fn step_float(&self, l: usize, x: &Tensor) -> Tensor {
        let layer = &self.model.layers[l];
        let in_shape = &self.in_shapes[l];
        match layer.kind {
            LayerKind::Conv2d { .. } => {
                let g = conv_geometry(&layer.kind, in_shape).expect("validated");
                let p = layer.params.as_ref().expect("validated");
                Tensor {
                    shape: vec![g.out_channels, g.out_h(), g.out_w()],
                    data: kernels::conv2d_f32(&g, &x.data, &p.weights.data, &p.bias.data),
                }
            }
            LayerKind::Dense { out_features } => {
                let p = layer.params.as_ref().expect("validated");
                Tensor {
                    shape: vec![out_features],
                    data: kernels::dense_f32(&x.data, &p.weights.data, &p.bias.data),
                }
            }
            LayerKind::MaxPool2d { kernel, stride } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                Tensor {
                    shape: vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1],
                    data: kernels::maxpool2d(&x.data, c, h, w, kernel, stride),
                }
            }
            LayerKind::Relu => Tensor {
                shape: x.shape.clone(),
                data: x.data.iter().map(|&v| kernels::relu_f32(v)).collect(),
            },
            LayerKind::Flatten => Tensor {
                shape: vec![x.numel()],
                data: x.data.clone(),
            },
        }
    }

    fn step_quant(&self, l: usize, x: &QuantTensor) -> Result<QuantTensor> {
        let layer = &self.model.layers[l];
        let in_shape = &self.in_shapes[l];
        let scale_in = self.scales[l];
        let mult = self.plan.get(l);
        Ok(match layer.kind {
            LayerKind::Conv2d { .. } | LayerKind::Dense { .. } => {
                let p = layer.params.as_ref().expect("validated");
                let q = p
                    .quant
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("layer {l} is not quantized")))?;
                let scale_out = q
                    .output_scale
                    .ok_or_else(|| Error::Config(format!("layer {l} is not calibrated")))?;
                let m = requant_multiplier(scale_in, q.weights.scale, scale_out);
                let bias = quantize_bias(&p.bias.data, scale_in, q.weights.scale);
                let w = &q.weights.data;
                let (shape, data) = match layer.kind {
                    LayerKind::Conv2d { .. } => {
                        let g = conv_geometry(&layer.kind, in_shape).expect("validated");
                        let data = match mult {
                            Some(lut) => kernels::conv2d_i8(&g, &x.data, w, &bias, m, lut),
                            None => kernels::conv2d_i8(&g, &x.data, w, &bias, m, &NativeMultiplier),
                        };
                        (vec![g.out_channels, g.out_h(), g.out_w()], data)
                    }
                    _ => {
                        let data = match mult {
                            Some(lut) => kernels::dense_i8(&x.data, w, &bias, m, lut),
                            None => kernels::dense_i8(&x.data, w, &bias, m, &NativeMultiplier),
                        };
                        (vec![bias.len()], data)
                    }
                };
                QuantTensor {
                    shape,
                    data,
                    scale: scale_out,
                }
            }
            LayerKind::MaxPool2d { kernel, stride } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                QuantTensor {
                    shape: vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1],
                    data: kernels::maxpool2d(&x.data, c, h, w, kernel, stride),
                    scale: x.scale,
                }
            }
            LayerKind::Relu => QuantTensor {
                shape: x.shape.clone(),
                data: x.data.iter().map(|&v| kernels::relu_i8(v)).collect(),
                scale: x.scale,
            },
            LayerKind::Flatten => QuantTensor {
                shape: vec![x.numel()],
                data: x.data.clone(),
                scale: x.scale,
            },
        })
    }
}

fn apply_tap(y: &mut Ofm, tap: &Tap) {
    match (y, tap) {
        (Ofm::Quant(q), Tap::FlipBit { index, bit }) => {
            q.data[*index] = faults::flip_bit_i8(q.data[*index], *bit);
        }
        (Ofm::Float(t), Tap::FlipBit { index, bit }) => {
            t.data[*index] = faults::flip_bit_f32(t.data[*index], *bit);
        }
        (Ofm::Quant(q), Tap::BitFlips { rate, seed }) => {
            faults::flip_random_bits_i8(&mut q.data, *rate, *seed);
        }
        (Ofm::Quant(q), Tap::Suppress { cfg, stream }) => {
            suppress_in_place(&mut q.data, cfg, *stream);
        }
        // Rejected in Engine::prepare.
        (Ofm::Float(_), _) => unreachable!("quant-only tap on float path"),
    }
}
