//! Stream derivation for reproducible parallel sampling.
//!
//! Every stochastic routine draws from a `ChaCha8Rng` whose seed is a pure
//! function of (base seed, tag, indices). Work items never share a generator,
//! so the output does not depend on how rayon schedules them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Mixes a base seed, a string tag and a list of indices into a child seed.
pub fn derive_seed(base: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ fnv1a(tag));
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

/// A generator for one work item.
pub fn stream(base: u64, tag: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, parts))
}
