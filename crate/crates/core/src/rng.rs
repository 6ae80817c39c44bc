//! Seeded random streams.
//!
//! Every stochastic component takes an explicit [`SimRng`]. Independent streams
//! are derived from a master seed and a label so adding a consumer never shifts
//! the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for `(seed, label)`, stable across platforms and releases.
pub fn derive(seed: u64, label: &str) -> SimRng {
    seeded(mix(seed, label))
}

pub fn mix(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, folded into the seed with a splitmix finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
