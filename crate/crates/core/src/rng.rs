//! Seeded random streams.
//!
//! All randomness in a run flows from one root seed. Independent consumers
//! (synthesis, training, each rollout) take a named sub-stream so that adding
//! or reordering consumers never perturbs the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Derives the seed of sub-stream `(name, index)` from `root`.
pub fn substream_seed(root: u64, name: &str, index: u64) -> u64 {
    // FNV-1a over the name, then two rounds of splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(root ^ h) ^ index)
}

pub fn substream(root: u64, name: &str, index: u64) -> SimRng {
    seeded(substream_seed(root, name, index))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
