//! Behavioral multiplier models: exact and approximate 8x8 lookup tables,
//! their error characterization, and the bit-suppressor error model.

mod characterize;
mod lut;
mod suppress;

pub use characterize::{characterize, MultiplierErrorReport, PERCENT_NORMALIZER};
pub use lut::{
    lut_index, sidecar_path, FixtureKind, MultiplierLut, Multiply, NativeMultiplier, LUT_ENTRIES, LUT_MAGIC,
};
pub use suppress::{suppress_bits, suppress_in_place, BitSuppressorConfig};
