//! Fixtures shared by the criterion benches.

use sinkbary_core::measure::{sample_empirical, Domain, Sampler};
use sinkbary_core::{rng, DiscreteMeasure};

/// `n` uniform atoms in the unit square.
pub fn uniform_cloud(n: usize, seed: u64) -> DiscreteMeasure {
    let sampler = Sampler::UniformBox(Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]).expect("box"));
    sample_empirical(&sampler, n, &mut rng::stream(seed, rng::streams::SAMPLING)).expect("sample")
}
