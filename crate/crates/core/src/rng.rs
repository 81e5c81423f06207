//! Deterministic seed derivation.
//!
//! Every stochastic stage gets its own ChaCha stream keyed by a mix of the
//! run seed and a small tuple of stream identifiers, so results never depend
//! on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with stream identifiers into a new seed.
pub fn derive(seed: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(splitmix(seed), |acc, &s| splitmix(acc ^ splitmix(s)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags keep derived seeds for different stages apart.
pub mod stream {
    pub const GUIDING: u64 = 1;
    pub const POLICY: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const INIT: u64 = 4;
    pub const ROLLOUT: u64 = 5;
}
