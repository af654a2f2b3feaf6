//! Deterministic seed derivation.
//!
//! Every random purpose in an experiment (model init, batch shuffling, trigger
//! patterns, poison-index selection, ...) draws from its own stream derived
//! from the master seed. Streams never share state, so enabling or disabling
//! one consumer cannot perturb another — a no-op attack leaves every other
//! stream bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Values are arbitrary but fixed; changing one changes every
/// derived stream.
pub mod tags {
    pub const MODEL_INIT: u64 = 0x01;
    pub const SHUFFLE: u64 = 0x02;
    pub const TRIGGER_PATTERN: u64 = 0x03;
    pub const POISON_SELECT: u64 = 0x04;
    pub const SWAP_DONOR: u64 = 0x05;
    pub const DP_NOISE: u64 = 0x06;
    pub const DATA: u64 = 0x07;
    pub const TEST_TRIGGER: u64 = 0x08;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and up to two indices into a fresh
/// 64-bit seed.
pub fn derive_seed(base: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut state = base;
    let mut out = splitmix64(&mut state);
    state ^= tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    out ^= splitmix64(&mut state);
    state ^= a.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    out ^= splitmix64(&mut state);
    state ^= b.wrapping_mul(0x1656_67B1_9E37_79F9);
    out ^= splitmix64(&mut state);
    out
}

/// A ChaCha stream for the given purpose.
pub fn stream(base: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, a, b))
}
