//! Approximate-multiplier emulation and fault-injection workbench for
//! quantized CNNs.
//!
//! The crate is organized bottom-up: [`tensor`] and [`qnn`] run float and
//! int8 inference with a per-layer multiplier hook, [`axmult`] supplies
//! lookup-table multipliers and the bit suppressor, [`faults`] describes and
//! samples bit flips, [`metrics`] compares golden and faulty traces, and
//! [`campaign`] ties them into reproducible experiments.

pub mod axmult;
pub mod campaign;
pub mod dataset;
pub mod error;
pub mod faults;
pub mod metrics;
pub mod qnn;
pub mod seed;
pub mod stats;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use axmult::{characterize, BitSuppressorConfig, FixtureKind, MultiplierErrorReport, MultiplierLut};
pub use dataset::{load_mnist_idx, Dataset};
pub use error::{Error, IdxError, LutError, Result};
pub use faults::{FaultDescriptor, FaultMode, FaultSite};
pub use metrics::{FaultClass, MetricRecord, SsimConstants};
pub use qnn::{ExecPath, LayerTrace, MultPlan, NetworkModel};
pub use tensor::{QuantTensor, Tensor};
