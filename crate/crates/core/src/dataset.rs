//! Labeled image datasets and the IDX (MNIST) file format.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use sha2::{Digest, Sha256};

use crate::error::{Error, IdxError, Result};
use crate::faults::IndexPermutation;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `[C, H, W]` tensors with values in `[0, 1]`.
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    /// Hex SHA-256 over the decoded image and label payloads.
    pub checksum: String,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(IdxError::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            }
            .into());
        }
        if let Some(first) = images.first() {
            if let Some(bad) = images.iter().position(|t| t.shape != first.shape) {
                return Err(Error::Shape(format!(
                    "image {bad} has shape {:?}, expected {:?}",
                    images[bad].shape, first.shape
                )));
            }
        }
        let checksum = content_checksum(&images, &labels);
        Ok(Self {
            name: name.into(),
            images,
            labels,
            checksum,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l >= num_classes) {
            Some(i) => Err(Error::Shape(format!(
                "label {} of image {i} is not below {num_classes} classes",
                self.labels[i]
            ))),
            None => Ok(()),
        }
    }

    /// The first `n` images of a seeded permutation, kept in file order.
    /// `n >= len` returns the whole dataset.
    pub fn subset(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let perm = IndexPermutation::new(self.len() as u64, seed);
        let mut idx: Vec<usize> = (0..n as u64).map(|k| perm.apply(k) as usize).collect();
        idx.sort_unstable();
        self.select(&idx, format!("{}[subset {n} seed {seed}]", self.name))
    }

    /// Images `range` in file order.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        let end = range.end.min(self.len());
        let start = range.start.min(end);
        let idx: Vec<usize> = (start..end).collect();
        self.select(&idx, format!("{}[{start}..{end}]", self.name))
    }

    fn select(&self, idx: &[usize], name: String) -> Dataset {
        let images: Vec<Tensor> = idx.iter().map(|&i| self.images[i].clone()).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        let checksum = content_checksum(&images, &labels);
        Dataset {
            name,
            images,
            labels,
            checksum,
        }
    }
}

fn content_checksum(images: &[Tensor], labels: &[usize]) -> String {
    let mut h = Sha256::new();
    for t in images {
        for v in &t.data {
            h.update(v.to_le_bytes());
        }
    }
    for &l in labels {
        h.update((l as u64).to_le_bytes());
    }
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// SHA-256 of a file's raw bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Reads a file, transparently gunzipping `*.gz`.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn header(bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, IdxError> {
    let need = 4 + 4 * dims;
    if bytes.len() < 4 {
        return Err(IdxError::ShortHeader { len: bytes.len() });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(IdxError::BadMagic { expected: magic, found });
    }
    if bytes.len() < need {
        return Err(IdxError::ShortHeader { len: bytes.len() });
    }
    Ok((0..dims).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect())
}

fn payload(bytes: &[u8], offset: usize, expected: usize) -> Result<&[u8], IdxError> {
    let found = bytes.len() - offset;
    if found < expected {
        return Err(IdxError::Truncated { expected, found });
    }
    // Trailing bytes are tolerated like other IDX readers, but never counted.
    Ok(&bytes[offset..offset + expected])
}

/// Parses an IDX image file into `[1, rows, cols]` tensors scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Tensor>, IdxError> {
    let dims = header(bytes, IDX_IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let px = rows * cols;
    let body = payload(bytes, 16, count * px)?;
    Ok(body
        .chunks_exact(px.max(1))
        .take(count)
        .map(|c| Tensor {
            shape: vec![1, rows, cols],
            data: c.iter().map(|&b| b as f32 / 255.0).collect(),
        })
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, IdxError> {
    let count = header(bytes, IDX_LABELS_MAGIC, 1)?[0];
    Ok(payload(bytes, 8, count)?.iter().map(|&b| b as usize).collect())
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_idx_images(&read_maybe_gz(images_path)?).map_err(|e| Error::in_file(images_path, e.into()))?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?).map_err(|e| Error::in_file(labels_path, e.into()))?;
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, images, labels)
}

/// Encodes `[1, rows, cols]` images (values in `[0, 1]`) as an IDX image file.
pub fn encode_idx_images(images: &[Tensor]) -> Result<Vec<u8>> {
    let (rows, cols) = match images.first() {
        Some(t) if t.shape.len() == 3 && t.shape[0] == 1 => (t.shape[1], t.shape[2]),
        Some(t) => return Err(Error::Shape(format!("IDX images must be [1,H,W], got {:?}", t.shape))),
        None => (0, 0),
    };
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IDX_IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for t in images {
        if t.shape != [1, rows, cols] {
            return Err(Error::Shape(format!("mixed image shapes {:?}", t.shape)));
        }
        out.extend(t.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} does not fit a byte")))?);
    }
    Ok(out)
}
