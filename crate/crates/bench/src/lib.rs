//! Fixtures shared by the kernel benchmarks.

use tenmi_core::sim::{gen_study1, Missingness};
use tenmi_core::tensor::DenseTensor;
use tenmi_core::{MaskedTensor, RngStream};

pub use tenmi_core::nalgebra::DMatrix;

/// Standard normal tensor.
pub fn random_tensor(dims: &[usize], seed: u64) -> DenseTensor {
    let mut rng = RngStream::new(seed, 0);
    DenseTensor::from_fn(dims.to_vec(), |_| rng.std_normal()).expect("valid dims")
}

/// One standard normal factor per mode.
pub fn random_factors(dims: &[usize], rank: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = RngStream::new(seed, 1);
    dims.iter()
        .map(|&d| DMatrix::from_fn(d, rank, |_, _| rng.std_normal()))
        .collect()
}

/// Rank-3 data with i.i.d. noise and 20% entries missing.
pub fn masked_problem(dims: &[usize], seed: u64) -> MaskedTensor {
    gen_study1(dims, 1.0, Missingness::Entry { p: 0.2 }, seed)
        .expect("valid design")
        .observed
}
