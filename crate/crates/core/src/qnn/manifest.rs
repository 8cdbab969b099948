//! Model manifest (JSON) plus little-endian weight blob.
//!
//! Tensors are concatenated in manifest order: for each multiplying layer,
//! float weights, float bias, then (if quantized) int8 weights. Every entry
//! records its byte offset and length in the blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::{Layer, LayerKind, LayerParams, NetworkModel, QuantParams};
use crate::error::{Error, Result};
use crate::tensor::{QuantTensor, Tensor};

pub const MANIFEST_FORMAT: &str = "axfi-model";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    I8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::I8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobRef {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantEntry {
    pub weight_scale: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_scale: Option<f32>,
    pub weights: BlobRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_scale: Option<f32>,
    pub weights_file: String,
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

struct BlobWriter(Vec<u8>);

impl BlobWriter {
    fn f32s(&mut self, t: &Tensor) -> BlobRef {
        let offset = self.0.len();
        for v in &t.data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        BlobRef {
            dtype: Dtype::F32,
            shape: t.shape.clone(),
            offset,
            length: self.0.len() - offset,
        }
    }

    fn i8s(&mut self, t: &QuantTensor) -> BlobRef {
        let offset = self.0.len();
        self.0.extend(t.data.iter().map(|&v| v as u8));
        BlobRef {
            dtype: Dtype::I8,
            shape: t.shape.clone(),
            offset,
            length: t.data.len(),
        }
    }
}

/// Builds the manifest and blob for `model`; `weights_file` is recorded verbatim.
pub fn to_manifest(model: &NetworkModel, weights_file: &str) -> (ModelManifest, Vec<u8>) {
    let mut blob = BlobWriter(Vec::new());
    let layers = model
        .layers
        .iter()
        .map(|layer| {
            let mut entry = LayerEntry {
                kind: layer.kind,
                weights: None,
                bias: None,
                quant: None,
            };
            if let Some(p) = &layer.params {
                entry.weights = Some(blob.f32s(&p.weights));
                entry.bias = Some(blob.f32s(&p.bias));
                entry.quant = p.quant.as_ref().map(|q| QuantEntry {
                    weight_scale: q.weights.scale,
                    output_scale: q.output_scale,
                    weights: blob.i8s(&q.weights),
                });
            }
            entry
        })
        .collect();
    let manifest = ModelManifest {
        format: MANIFEST_FORMAT.to_owned(),
        version: MANIFEST_VERSION,
        name: model.name.clone(),
        input_shape: model.input_shape.clone(),
        num_classes: model.num_classes,
        input_scale: model.input_scale,
        weights_file: weights_file.to_owned(),
        layers,
        metadata: model.metadata.clone(),
    };
    (manifest, blob.0)
}

fn slice<'a>(blob: &'a [u8], r: &BlobRef, want: Dtype, what: &str) -> Result<&'a [u8]> {
    if r.dtype != want {
        return Err(Error::Config(format!("{what}: dtype {:?}, expected {want:?}", r.dtype)));
    }
    let numel: usize = r.shape.iter().product();
    if r.length != numel * want.size() {
        return Err(Error::Config(format!(
            "{what}: length {} bytes does not match shape {:?}",
            r.length, r.shape
        )));
    }
    blob.get(r.offset..r.offset + r.length).ok_or_else(|| {
        Error::Config(format!(
            "{what}: bytes {}..{} outside weight blob of {} bytes",
            r.offset,
            r.offset + r.length,
            blob.len()
        ))
    })
}

fn read_f32(blob: &[u8], r: &BlobRef, what: &str) -> Result<Tensor> {
    let bytes = slice(blob, r, Dtype::F32, what)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(r.shape.clone(), data)
}

/// Rebuilds a model from a manifest and its blob, checking every invariant.
pub fn from_manifest(manifest: &ModelManifest, blob: &[u8]) -> Result<NetworkModel> {
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(Error::Config(format!(
            "unsupported manifest {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, e) in manifest.layers.iter().enumerate() {
        let params = match (&e.weights, &e.bias) {
            (Some(w), Some(b)) => {
                let weights = read_f32(blob, w, &format!("layer {i} weights"))?;
                let bias = read_f32(blob, b, &format!("layer {i} bias"))?;
                let quant = match &e.quant {
                    None => None,
                    Some(q) => {
                        let bytes = slice(blob, &q.weights, Dtype::I8, &format!("layer {i} int8 weights"))?;
                        let qt = QuantTensor::new(
                            q.weights.shape.clone(),
                            bytes.iter().map(|&b| b as i8).collect(),
                            q.weight_scale,
                        )?;
                        if QuantTensor::quantize(&weights, q.weight_scale)? != qt {
                            return Err(Error::Config(format!(
                                "layer {i}: int8 weights are not the quantization of the float weights"
                            )));
                        }
                        Some(QuantParams {
                            weights: Arc::new(qt),
                            output_scale: q.output_scale,
                        })
                    }
                };
                Some(LayerParams {
                    weights: Arc::new(weights),
                    bias: Arc::new(bias),
                    quant,
                })
            }
            (None, None) => None,
            _ => return Err(Error::Config(format!("layer {i}: weights and bias must come together"))),
        };
        layers.push(Layer { kind: e.kind, params });
    }
    let mut model = NetworkModel::new(
        manifest.name.clone(),
        manifest.input_shape.clone(),
        layers,
        manifest.num_classes,
    )?;
    model.input_scale = manifest.input_scale;
    model.metadata = manifest.metadata.clone();
    Ok(model)
}

/// Writes `<path>` (manifest) and a sibling `.bin` blob.
pub fn save_model(model: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let blob_path = path.with_extension("bin");
    let blob_name = blob_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::InvalidArgument(format!("bad model path {}", path.display())))?;
    let (manifest, blob) = to_manifest(model, &blob_name);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json("model manifest", e))?;
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: ModelManifest =
        serde_json::from_slice(&raw).map_err(|e| Error::json(path.display().to_string(), e))?;
    let blob_path: PathBuf = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.weights_file);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    from_manifest(&manifest, &blob).map_err(|e| Error::in_file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{calibrated_tiny_model, tiny_model};

    #[test]
    fn round_trip_float_and_quant() {
        for model in [tiny_model(), calibrated_tiny_model()] {
            let (m, blob) = to_manifest(&model, "w.bin");
            assert_eq!(from_manifest(&m, &blob).unwrap(), model);
        }
    }

    #[test]
    fn offsets_are_contiguous() {
        let (m, blob) = to_manifest(&calibrated_tiny_model(), "w.bin");
        let mut next = 0;
        for e in &m.layers {
            for r in [&e.weights, &e.bias]
                .into_iter()
                .flatten()
                .chain(e.quant.as_ref().map(|q| &q.weights))
            {
                assert_eq!(r.offset, next);
                next += r.length;
            }
        }
        assert_eq!(next, blob.len());
    }

    #[test]
    fn detects_corruption() {
        let (m, blob) = to_manifest(&calibrated_tiny_model(), "w.bin");
        assert!(from_manifest(&m, &blob[..blob.len() - 1]).is_err());

        let mut bad = blob.clone();
        let q = m.layers[0].quant.as_ref().unwrap().weights.offset;
        bad[q] ^= 1;
        assert!(from_manifest(&m, &bad).is_err());

        let mut m2 = m.clone();
        m2.layers[0].weights.as_mut().unwrap().length -= 4;
        assert!(from_manifest(&m2, &blob).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.json");
        let model = calibrated_tiny_model();
        save_model(&model, &path).unwrap();
        assert!(dir.path().join("tiny.bin").exists());
        assert_eq!(load_model(&path).unwrap(), model);
    }
}
