//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`Stream`], a ChaCha8
//! generator, so results are reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Opens a stream for `(seed, label)`. Distinct labels give independent
/// streams for the same master seed.
pub fn stream(seed: u64, label: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}

/// SplitMix64 mix of a seed with a stream label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream labels used by the library.
pub mod labels {
    pub const BASIS: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN_DATA: u64 = 3;
    pub const TEST_DATA: u64 = 4;
    pub const GRAD_CHECK: u64 = 5;
}
