//! Seeded random streams. Sample `i` of a batch always uses `base + i`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeedRng = ChaCha8Rng;

pub fn stream(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal(rng: &mut SeedRng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}
