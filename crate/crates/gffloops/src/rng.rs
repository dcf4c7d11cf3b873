//! Counter-based seed splitting and hashed uniforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replica `index` under `master`; independent of how many replicas run.
pub fn replica_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Derived seed for a named sub-stream of one replica.
pub fn substream(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_mul(0xd6e8_feb8_6659_fd93)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in (0, 1) determined by `(seed, key, slot)`.
#[inline]
pub fn hashed_uniform(seed: u64, key: u64, slot: u64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(key.wrapping_mul(4).wrapping_add(slot)));
    ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}
