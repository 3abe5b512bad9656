//! Seeding helpers. Every runner owns a [`SimRng`] built from a `u64`, so a
//! run is a pure function of its parameters and that seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index` in an ensemble rooted at `base_seed`.
pub fn replicate_seed(base_seed: u64, index: u64) -> u64 {
    mix64(mix64(base_seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Derive an independent sub-stream seed (e.g. environment vs. events).
pub fn substream(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> =
            (0..10_000).map(|i| replicate_seed(7, i)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(replicate_seed(7, 0), replicate_seed(8, 0));
    }
}
