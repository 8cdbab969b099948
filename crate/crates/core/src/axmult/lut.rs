use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, LutError, Result};

/// Number of operand pairs of an 8x8 multiplier.
pub const LUT_ENTRIES: usize = 256 * 256;
/// File magic of the binary LUT format.
pub const LUT_MAGIC: [u8; 8] = *b"AXLUT\x00\x01\x00";

/// A signed 8x8 multiplier as seen by the convolution and dense kernels.
///
/// The first operand is the activation, the second the weight.
pub trait Multiply: Sync {
    fn mul(&self, a: i8, b: i8) -> i32;
}

/// Plain integer multiplication.
#[derive(Debug, Clone, Copy, Default)]
pub struct NativeMultiplier;

impl Multiply for NativeMultiplier {
    #[inline(always)]
    fn mul(&self, a: i8, b: i8) -> i32 {
        a as i32 * b as i32
    }
}

#[inline(always)]
pub fn lut_index(a: i8, b: i8) -> usize {
    ((a as i32 + 128) as usize) << 8 | (b as i32 + 128) as usize
}

/// Behavioral model of an 8x8 signed multiplier.
///
/// Entry for operands `(a, b)` lives at `(a + 128) * 256 + (b + 128)`.
#[derive(Clone, PartialEq, Eq)]
pub struct MultiplierLut {
    name: String,
    table: Box<[i16]>,
}

impl std::fmt::Debug for MultiplierLut {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultiplierLut")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

impl Multiply for MultiplierLut {
    #[inline(always)]
    fn mul(&self, a: i8, b: i8) -> i32 {
        self.table[lut_index(a, b)] as i32
    }
}

/// Parametric stand-ins for real approximate circuits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum FixtureKind {
    /// Clear the `k` low bits of each operand, then multiply exactly.
    OperandTruncate(u32),
    /// Add a constant to every exact product, saturating at 16 bits.
    ProductOffset(i32),
    /// Clear the `k` low bits of the exact product.
    ProductZeroLsb(u32),
}

impl std::fmt::Display for FixtureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FixtureKind::OperandTruncate(k) => write!(f, "operand_truncate({k})"),
            FixtureKind::ProductOffset(c) => write!(f, "product_offset({c:+})"),
            FixtureKind::ProductZeroLsb(k) => write!(f, "product_zero_lsb({k})"),
        }
    }
}

impl std::str::FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognized fixture multiplier '{s}'"));
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let arg = rest.strip_suffix(')').ok_or_else(bad)?.trim();
        match name.trim() {
            "operand_truncate" => Ok(FixtureKind::OperandTruncate(arg.parse().map_err(|_| bad())?)),
            "product_offset" => Ok(FixtureKind::ProductOffset(
                arg.trim_start_matches('+').parse().map_err(|_| bad())?,
            )),
            "product_zero_lsb" => Ok(FixtureKind::ProductZeroLsb(arg.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    name: String,
    #[serde(default)]
    provenance: Option<String>,
}

impl MultiplierLut {
    /// Builds a table from `(a, b) -> product` in offset-128 row-major order.
    pub fn from_entries(name: impl Into<String>, entries: &[i32]) -> Result<Self> {
        if entries.len() != LUT_ENTRIES {
            return Err(LutError::Truncated {
                declared: LUT_ENTRIES,
                found: entries.len(),
            }
            .into());
        }
        let table = entries
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                i16::try_from(v).map_err(|_| LutError::OutOfRange {
                    index,
                    offset: LUT_MAGIC.len() + 4 * index,
                    value: v as i64,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            name: name.into(),
            table: table.into_boxed_slice(),
        })
    }

    fn from_fn(name: impl Into<String>, f: impl Fn(i32, i32) -> i32) -> Self {
        let mut table = Vec::with_capacity(LUT_ENTRIES);
        for a in -128..=127 {
            for b in -128..=127 {
                let p = f(a, b).clamp(i16::MIN as i32, i16::MAX as i32);
                table.push(p as i16);
            }
        }
        Self {
            name: name.into(),
            table: table.into_boxed_slice(),
        }
    }

    pub fn exact() -> Self {
        Self::from_fn("exact", |a, b| a * b)
    }

    pub fn fixture(kind: FixtureKind) -> Result<Self> {
        let check_k = |k: u32| {
            if k > 7 {
                Err(Error::InvalidArgument(format!(
                    "fixture bit count must be in 0..=7, got {k}"
                )))
            } else {
                Ok(k)
            }
        };
        let name = kind.to_string();
        Ok(match kind {
            FixtureKind::OperandTruncate(k) => {
                let k = check_k(k)?;
                Self::from_fn(name, move |a, b| ((a >> k) << k) * ((b >> k) << k))
            }
            FixtureKind::ProductOffset(c) => {
                if c.unsigned_abs() > u16::MAX as u32 {
                    return Err(Error::InvalidArgument(format!(
                        "product offset must be within +-65535, got {c}"
                    )));
                }
                Self::from_fn(name, move |a, b| a * b + c)
            }
            FixtureKind::ProductZeroLsb(k) => {
                let k = check_k(k)?;
                let mask = !((1i32 << k) - 1);
                Self::from_fn(name, move |a, b| (a * b) & mask)
            }
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Table lookup, sign-extended to accumulator width.
    #[inline]
    pub fn multiply(&self, a: i8, b: i8) -> i32 {
        self.mul(a, b)
    }

    pub fn entries(&self) -> impl Iterator<Item = i32> + '_ {
        self.table.iter().map(|&v| v as i32)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(LUT_MAGIC.len() + 4 * LUT_ENTRIES);
        out.extend_from_slice(&LUT_MAGIC);
        for v in self.entries() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(name: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        if let Some(offset) = (0..LUT_MAGIC.len()).find(|&i| bytes.get(i) != Some(&LUT_MAGIC[i])) {
            return Err(LutError::BadMagic { offset }.into());
        }
        let payload = &bytes[LUT_MAGIC.len()..];
        let found = payload.len() / 4;
        if found < LUT_ENTRIES {
            return Err(LutError::Truncated {
                declared: LUT_ENTRIES,
                found,
            }
            .into());
        }
        if payload.len() > 4 * LUT_ENTRIES {
            return Err(LutError::TrailingBytes {
                declared: LUT_ENTRIES,
                extra: payload.len() - 4 * LUT_ENTRIES,
            }
            .into());
        }
        let entries: Vec<i32> = payload
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_entries(name, &entries)
    }

    /// Loads a LUT file and, if present, its `<file>.json` sidecar for the name.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let name = match fs::read(sidecar_path(path)) {
            Ok(raw) => {
                let sidecar: Sidecar = serde_json::from_slice(&raw)
                    .map_err(|e| Error::json(sidecar_path(path).display().to_string(), e))?;
                sidecar.name
            }
            Err(_) => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "unnamed".to_owned()),
        };
        Self::from_bytes(name, &bytes).map_err(|e| Error::in_file(path, e))
    }

    /// Writes the binary table plus a JSON sidecar carrying the name.
    pub fn save(&self, path: impl AsRef<Path>, provenance: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let sidecar = Sidecar {
            name: self.name.clone(),
            provenance: provenance.map(str::to_owned),
        };
        let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| Error::json("LUT sidecar", e))?;
        let side = sidecar_path(path);
        fs::write(&side, json).map_err(|e| Error::io(side, e))
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
