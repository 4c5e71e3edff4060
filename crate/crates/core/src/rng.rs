//! Deterministic seed derivation. Every random draw in a run comes from a
//! ChaCha stream keyed by `(base seed, purpose, index)`, so episodes can be
//! regenerated independently and in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purposes get disjoint seed streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Train = 2,
    Validation = 3,
    Evaluation = 4,
    Sampling = 5,
    Plot = 6,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(base: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream as u64) ^ index)
}

pub fn stream_rng(base: u64, stream: Stream, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(base, stream, index))
}
