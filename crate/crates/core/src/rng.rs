//! Seeded random streams.
//!
//! Every random component draws from its own ChaCha stream keyed by a
//! `(seed, stream)` pair so that adding a consumer never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named sub-stream identifiers.
pub mod streams {
    pub const SAMPLING: u64 = 1;
    pub const MULTISTART: u64 = 2;
    pub const KMEANS: u64 = 3;
    pub const EXPERIMENT: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const INSTANCE: u64 = 6;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream for the `index`-th independent trial of a component.
pub fn trial_stream(seed: u64, component: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(component);
    rng
}
