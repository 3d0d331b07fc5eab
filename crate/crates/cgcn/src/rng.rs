//! Deterministic seed derivation.
//!
//! Every stochastic choice in the crate (landmark sampling, dataset splits,
//! frozen readouts, random initializations) draws from a ChaCha stream whose
//! seed is derived from the run's master seed plus a purpose tag, so distinct
//! uses never share a stream and identical (config, seed) runs are bit-for-bit
//! reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; a solid cheap mixer for seed derivation.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a tag path.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = mix(master ^ 0xc6a4_a793_5bd1_e995);
    for &t in tags {
        state = mix(state ^ mix(t));
    }
    state
}

/// A seeded RNG for the given purpose path.
pub fn stream(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

/// Purpose tags for the derivation paths used across the crate.
pub mod tag {
    pub const LANDMARKS: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const HIDDEN_READOUT: u64 = 3;
    pub const FILTER_INIT: u64 = 4;
    pub const BATCH_SHUFFLE: u64 = 5;
    pub const SYNTHETIC_TASK: u64 = 6;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_deterministic_and_tag_sensitive() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }

    #[test]
    fn streams_reproduce() {
        let a: u64 = stream(42, &[tag::SPLIT]).random();
        let b: u64 = stream(42, &[tag::SPLIT]).random();
        assert_eq!(a, b);
    }
}
