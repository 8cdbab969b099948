use rand::seq::index;

use crate::seed;

/// XOR of the IEEE-754 pattern at `bit` (31 = sign). Non-finite results are returned as-is.
#[inline]
pub fn flip_bit_f32(x: f32, bit: u32) -> f32 {
    debug_assert!(bit < 32);
    f32::from_bits(x.to_bits() ^ (1u32 << bit))
}

/// Two's-complement XOR at `bit` (7 = sign).
#[inline]
pub fn flip_bit_i8(x: i8, bit: u32) -> i8 {
    debug_assert!(bit < 8);
    (x as u8 ^ (1u8 << bit)) as i8
}

/// Number of flips for a rate over `total_bits` bits, floored. Products a
/// few ulps below an integer (`0.29 * 100`) count as that integer.
pub fn rate_flip_count(rate: f64, total_bits: usize) -> usize {
    let x = rate * total_bits as f64;
    ((x + x.abs() * 1e-12).floor() as usize).min(total_bits)
}

/// Distinct bit positions in `[0, total_bits)`, sampled uniformly without replacement.
pub fn rate_flip_positions(total_bits: usize, rate: f64, seed: u64) -> Vec<usize> {
    let count = rate_flip_count(rate, total_bits);
    if count == 0 {
        return Vec::new();
    }
    let mut rng = seed::rng(seed, &[total_bits as u64]);
    let mut picks = index::sample(&mut rng, total_bits, count).into_vec();
    picks.sort_unstable();
    picks
}

/// Flips `floor(rate * 8 * len)` distinct bits of an int8 buffer in place;
/// bit position `p` addresses element `p / 8`, bit `p % 8`.
pub fn flip_random_bits_i8(data: &mut [i8], rate: f64, seed: u64) -> usize {
    let positions = rate_flip_positions(data.len() * 8, rate, seed);
    for &p in &positions {
        data[p / 8] = flip_bit_i8(data[p / 8], (p % 8) as u32);
    }
    positions.len()
}

/// Same as [`flip_random_bits_i8`] for f32 buffers (32 bits per element).
pub fn flip_random_bits_f32(data: &mut [f32], rate: f64, seed: u64) -> usize {
    let positions = rate_flip_positions(data.len() * 32, rate, seed);
    for &p in &positions {
        data[p / 32] = flip_bit_f32(data[p / 32], (p % 32) as u32);
    }
    positions.len()
}
