//! Seed derivation.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] whose seed is
//! derived from a root seed, a textual label and an index:
//!
//! ```text
//! stream(seed, label, index) = ChaCha8(splitmix64(seed ^ fnv1a(label)) ^ splitmix64(index))
//! ```
//!
//! Latent cycle `k` of a trajectory uses `stream(seed, "cycle", k)`, so
//! growing `K` never re-draws earlier cycles. Fleet agents, training epochs
//! and evaluation seeds use their own labels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives a child seed from `(seed, label, index)`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a(label)) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Generator for the labelled sub-stream `(seed, label, index)`.
pub fn stream(seed: u64, label: &str, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label, index))
}
