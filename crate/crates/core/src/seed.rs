//! Named RNG sub-streams derived from a single root seed.
//!
//! Every stage draws from its own stream (`"generation"`, `"init/..."`,
//! `"dropout/..."`, `"shuffle/..."`) so any stage can be rerun in isolation
//! and still see exactly the numbers it saw inside a full pipeline run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a sub-seed from `root` and a stream label.
pub fn derive(root: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed with the root.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(root ^ splitmix64(h))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(root: u64, label: &str) -> Rng {
    rng(derive(root, label))
}
