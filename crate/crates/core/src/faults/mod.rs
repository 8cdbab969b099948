//! Bit-flip fault models, seeded fault sampling and statistical sample sizing.

mod bitflip;
mod descriptor;
mod sample_size;
mod sampling;

pub use bitflip::{
    flip_bit_f32, flip_bit_i8, flip_random_bits_f32, flip_random_bits_i8, rate_flip_count, rate_flip_positions,
};
pub use descriptor::{apply_ofm_fault, apply_weight_fault, target_len, FaultDescriptor, FaultMode, FaultSite};
pub use sample_size::{required_sample_size, t_value, FaultSamplePlan, CONFIDENCE_TABLE};
pub use sampling::{sample_single_faults, FaultPopulation, IndexPermutation};
