//! Reproducible random streams.
//!
//! Every Monte Carlo sample draws from its own generator, keyed by
//! `(seed, stream)`, so results do not depend on how work is scheduled. The
//! key selects a ChaCha stream, which seeds a fast xoshiro generator.
//! Per-edge uniforms come from a stateless counter hash instead, so that the
//! same edge sees the same uniform at every level of a coupled run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Stream = Xoshiro256PlusPlus;

/// Independent generator for stream `stream` of run `seed`.
pub fn stream(seed: u64, stream: u64) -> Stream {
    let mut keyed = ChaCha8Rng::seed_from_u64(seed);
    keyed.set_stream(stream);
    Xoshiro256PlusPlus::from_seed(keyed.random())
}

/// Child seed `derive(seed, key)`, for keyed sub-streams.
pub fn derive(seed: u64, key: u64) -> u64 {
    mix(mix(seed ^ 0x5851_f42d_4c95_7f2d).wrapping_add(key))
}

#[inline]
fn mix(mut z: u64) -> u64 {
    // SplitMix64 finalizer.
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in `(0, 1)` determined by `(seed, a, b)`.
#[inline]
pub fn hash_uniform(seed: u64, a: u64, b: u64) -> f64 {
    let h = mix(mix(mix(seed ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(a)).wrapping_add(b));
    ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}
