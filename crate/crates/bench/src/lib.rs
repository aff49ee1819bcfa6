//! Shared input generators for the benchmarks.

use rand_distr::{Distribution, StandardNormal};
use signkit::rng;
use signkit::tensor::Tensor;

/// Standard-normal tensor of the given shape.
pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "bench-input", 0);
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    Tensor::from_vec(shape, data).expect("shape matches length")
}
