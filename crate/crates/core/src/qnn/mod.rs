//! Float and int8 CNN inference with a pluggable multiplier per layer and
//! full per-layer traces.

mod forward;
pub mod kernels;
mod manifest;
mod model;

pub use forward::{
    forward, forward_float, forward_from, forward_timed, ExecPath, LayerTrace, MultPlan, Ofm, Tap, Taps,
};
pub use manifest::{
    from_manifest, load_model, save_model, to_manifest, BlobRef, Dtype, LayerEntry, ModelManifest, QuantEntry,
};
pub(crate) use model::conv_geometry;
pub use model::{calibrate, quantize_model, Layer, LayerKind, LayerParams, NetworkModel, QuantParams};
