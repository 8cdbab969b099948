use serde::{Deserialize, Serialize};

use super::descriptor::{target_len, FaultDescriptor, FaultSite};
use crate::error::{Error, Result};
use crate::qnn::NetworkModel;
use crate::seed;

/// All single-bit fault locations of one site kind, enumerated as
/// `(layer, index, bit)` in layer order, then element, then bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultPopulation {
    pub site: FaultSite,
    /// `(layer, elements)` for every layer in the population.
    pub segments: Vec<(usize, usize)>,
}

impl FaultPopulation {
    /// Population over `layers`, or every eligible layer when `None`.
    pub fn new(model: &NetworkModel, site: FaultSite, layers: Option<&[usize]>) -> Result<Self> {
        let candidates: Vec<usize> = match layers {
            Some(ls) => ls.to_vec(),
            None if site.is_weight() => model.weighted_layers().collect(),
            None => (0..model.layers.len()).collect(),
        };
        let segments = candidates
            .into_iter()
            .map(|l| Ok((l, target_len(model, site, l)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { site, segments })
    }

    pub fn total_bits(&self) -> u64 {
        let w = self.site.bit_width() as u64;
        self.segments.iter().map(|&(_, n)| n as u64 * w).sum()
    }

    /// Maps a population position to its descriptor.
    pub fn locate(&self, mut pos: u64) -> FaultDescriptor {
        let w = self.site.bit_width() as u64;
        for &(layer, n) in &self.segments {
            let bits = n as u64 * w;
            if pos < bits {
                return FaultDescriptor::single(self.site, layer, (pos / w) as usize, (pos % w) as u32);
            }
            pos -= bits;
        }
        panic!("population position out of range");
    }
}

/// Keyed pseudo-random permutation of `[0, n)`: a balanced Feistel network
/// over the next even power of two, with cycle walking.
#[derive(Debug, Clone, Copy)]
pub struct IndexPermutation {
    n: u64,
    half_bits: u32,
    key: u64,
}

impl IndexPermutation {
    const ROUNDS: u64 = 6;

    pub fn new(n: u64, key: u64) -> Self {
        let bits = 64 - n.saturating_sub(1).leading_zeros();
        let half_bits = bits.div_ceil(2).max(1);
        Self { n, half_bits, key }
    }

    fn round(&self, x: u64) -> u64 {
        let mask = (1u64 << self.half_bits) - 1;
        let (mut l, mut r) = (x >> self.half_bits, x & mask);
        for i in 0..Self::ROUNDS {
            let f = seed::mix64(r ^ seed::derive(self.key, &[i])) & mask;
            (l, r) = (r, l ^ f);
        }
        (l << self.half_bits) | r
    }

    pub fn apply(&self, k: u64) -> u64 {
        assert!(k < self.n, "index {k} outside permutation of {}", self.n);
        let mut x = self.round(k);
        while x >= self.n {
            x = self.round(x);
        }
        x
    }
}

/// `n` distinct single-bit faults drawn uniformly without replacement.
///
/// Fault `k` depends only on `(master_seed, k)`, so any prefix of the list
/// is stable and entries can be generated in parallel.
pub fn sample_single_faults(
    model: &NetworkModel,
    site: FaultSite,
    layers: Option<&[usize]>,
    n: u64,
    master_seed: u64,
) -> Result<Vec<FaultDescriptor>> {
    let pop = FaultPopulation::new(model, site, layers)?;
    let total = pop.total_bits();
    if n > total {
        return Err(Error::InvalidArgument(format!(
            "requested {n} faults but the population has {total} bits"
        )));
    }
    let perm = IndexPermutation::new(total, master_seed);
    Ok((0..n).map(|k| pop.locate(perm.apply(k))).collect())
}
