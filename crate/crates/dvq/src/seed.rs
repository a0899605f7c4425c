//! Deterministic seed derivation.
//!
//! Every run takes one base seed; everything else (per-repetition data seeds,
//! codebook init seeds, per-step minibatch seeds) is derived from it with a
//! fixed SplitMix64 scheme, so a run is reproducible from a single integer
//! and independent sub-streams never alias.
//!
//! Scheme: `derive_seed(base, index)` = SplitMix64 finalizer applied to
//! `base + (index + 1) * GOLDEN` (wrapping arithmetic). The `+ 1` keeps
//! `derive_seed(s, 0) != s` even for `base = 0`.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function (Steele, Lea, Flood 2014). Bijective on u64.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the `index`-th child seed of `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix(base.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// The crate-standard generator: ChaCha8 gives identical streams on every
/// platform and word size, unlike the default `StdRng` whose algorithm is
/// allowed to change between releases.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
