//! Seed derivation for reproducible, order-independent generation.
//!
//! Every pair (and every independent stream inside a pair) gets its own
//! ChaCha8 generator seeded from `split_seed(parent, stream)`. Because the
//! derivation depends only on the two integers, the output of pair `i` does not
//! depend on how many pairs were generated before it or on which thread ran it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PairRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed of child stream `stream` from `parent`.
///
/// `split_seed(p, s) = mix64(mix64(p) + (s + 1) * GOLDEN_GAMMA)` with wrapping
/// arithmetic. Distinct streams of the same parent never share the input to
/// the outer mix.
pub fn split_seed(parent: u64, stream: u64) -> u64 {
    mix64(mix64(parent).wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn rng_from_seed(seed: u64) -> PairRng {
    ChaCha8Rng::seed_from_u64(seed)
}
