//! Shared fixtures for the benchmarks.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nestbox_core::{Architecture, Heads, IntervalTensor, Matrix, Network, ParamBox};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Interval tensor of the given shape with random centers and radii below
/// `max_radius`.
pub fn random_interval(rng: &mut ChaCha8Rng, shape: &[usize], max_radius: f64) -> IntervalTensor {
    let c = ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0));
    let r = ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(0.0..max_radius));
    IntervalTensor::new(&c - &r, &c + &r).expect("lower <= upper")
}

/// Inputs in `[0, 1]` like scaled pixels.
pub fn pixels(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0))
}

/// The split-MNIST network, 784 -> 400 -> 400 -> 10, with a box of radius
/// `radius` around its initial weights.
pub fn mnist_mlp(radius: f64) -> (Network, ParamBox) {
    let arch = Architecture::mlp(784, &[400, 400], 10, Heads::Shared);
    let (net, params) = Network::initialize(arch, 0).expect("valid architecture");
    let b = ParamBox::around(params, radius).expect("finite radius");
    (net, b)
}
