//! Seeded random streams.
//!
//! Every stochastic routine takes a `u64` seed and draws from ChaCha8
//! (`rand_chacha`). Independent work items (subjects, bootstrap replicates,
//! simulation replications) get their own stream: the ChaCha key comes from
//! the master seed and the 64-bit stream id selects a disjoint keystream, so
//! results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TvcmRng = ChaCha8Rng;

/// Generator for stream `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> TvcmRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Root generator of a seed (stream 0).
pub fn root(seed: u64) -> TvcmRng {
    stream(seed, 0)
}

/// Derive a child seed from a parent seed and a tag (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
