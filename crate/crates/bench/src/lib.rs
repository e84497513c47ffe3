//! Fixtures shared by the kernel benchmarks.

use dacp::{Shape4, WeightTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded weights drawn uniformly from `[-1, 1)`.
pub fn weights(kh: usize, kw: usize, c: usize, n: usize, seed: u64) -> WeightTensor {
    let shape = Shape4::new(kh, kw, c, n).expect("non-zero dims");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..shape.len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    WeightTensor::from_vec(shape, values).expect("finite weights")
}
