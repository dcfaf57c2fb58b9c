//! Deterministic random streams.
//!
//! Every random quantity in a simulation is drawn from a stream addressed by
//! a base seed and a path of integer tags (replicate id, stage, purpose).
//! Streams with distinct paths are statistically independent, and a stream
//! depends on nothing but its address, so results do not change with the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Tags naming what a stream is used for.
pub mod purpose {
    pub const DATA: u64 = 0x4441_5441;
    pub const MCMC: u64 = 0x4d43_4d43;
    pub const NORMALIZER: u64 = 0x4e4f_524d;
    pub const JITTER: u64 = 0x4a49_5454;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the stream at `path` below `seed`.
pub fn stream(seed: u64, path: &[u64]) -> SimRng {
    let mut key = splitmix64(seed);
    for &tag in path {
        key = splitmix64(key ^ splitmix64(tag.wrapping_add(0x6a09_e667_f3bc_c909)));
    }
    ChaCha8Rng::seed_from_u64(key)
}
