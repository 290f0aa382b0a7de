//! Seeded random streams.
//!
//! Every consumer draws from its own ChaCha stream keyed by a 64-bit seed and
//! a stream id, so work split across threads produces the same values as a
//! sequential run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream ids used across the engine. Keeping them in one place avoids two
/// consumers sharing a stream by accident.
pub mod streams {
    pub const TARGET: u64 = 1;
    pub const AGENT: u64 = 2;
    pub const SYNTHETIC: u64 = 3;
    pub const SYMBOLS: u64 = 4;
    pub const DATASET: u64 = 5;
}

pub fn stream(seed: u64, stream_id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// SplitMix64 finalizer; derives independent child seeds from a parent seed
/// and a list of indices.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut acc = mix(seed ^ 0x9e37_79b9_7f4a_7c15);
    for &p in parts {
        acc = mix(acc ^ mix(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    acc
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
