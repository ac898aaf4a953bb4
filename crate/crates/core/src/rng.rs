//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from `(seed, stream, index)`, so independent parts of a run do not
//! share state and reordering one does not perturb another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream) ^ index)
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}

/// Named streams.
pub mod stream {
    pub const APPEARANCE: u64 = 1;
    pub const LAYOUT: u64 = 2;
    pub const RENDER: u64 = 3;
    pub const DISTRACTOR: u64 = 4;
    pub const GENERIC: u64 = 5;
    pub const SAMPLER: u64 = 6;
    pub const AUGMENT: u64 = 7;
    pub const INIT: u64 = 8;
    pub const TRAIN: u64 = 9;
}
