//! Seeded random streams and the exact samplers used by the Gibbs engines.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::CholeskyFactor;

/// A reproducible random stream identified by `(seed, stream)`.
///
/// Backed by a counter-based ChaCha generator; distinct stream ids select
/// disjoint keystreams, so chains never share draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random::<f64>(&mut self.rng)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        rand::Rng::random_range(&mut self.rng, 0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a path of tags, e.g.
/// `(seed, [rank, fold])`.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn std_normal_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> DMatrix<f64> {
    // Column-major fill keeps the draw order fixed for a given shape.
    DMatrix::from_fn(rows, cols, |_, _| rng.std_normal())
}

/// `mean + L z` with `z` i.i.d. standard normal.
pub fn sample_mvn(
    mean: &DVector<f64>,
    cov_chol: &CholeskyFactor,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    if mean.len() != cov_chol.dim() {
        return Err(Error::Shape(format!(
            "mean of length {} with {}-dim covariance",
            mean.len(),
            cov_chol.dim()
        )));
    }
    let z = DVector::from_fn(mean.len(), |_, _| rng.std_normal());
    Ok(mean + cov_chol.l() * z)
}

/// `M + L_row Z L_col^T`; `vec` of the draw has covariance
/// `(L_col L_col^T) ⊗ (L_row L_row^T)`.
pub fn sample_matrix_normal(
    mean: &DMatrix<f64>,
    row_cov_chol: &CholeskyFactor,
    col_cov_chol: &CholeskyFactor,
    rng: &mut RngStream,
) -> Result<DMatrix<f64>> {
    let (p, q) = mean.shape();
    if row_cov_chol.dim() != p || col_cov_chol.dim() != q {
        return Err(Error::Shape(format!(
            "{p}x{q} mean with {}x{} row and {}x{} column covariance",
            row_cov_chol.dim(),
            row_cov_chol.dim(),
            col_cov_chol.dim(),
            col_cov_chol.dim()
        )));
    }
    let z = std_normal_matrix(p, q, rng);
    Ok(mean + row_cov_chol.l() * z * col_cov_chol.l().transpose())
}

/// Inverse-gamma with density ∝ `x^{-shape-1} exp(-rate/x)`.
pub fn sample_inverse_gamma(shape: f64, rate: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "inverse-gamma needs shape > 0 and rate > 0, got ({shape}, {rate})"
        )));
    }
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::InvalidParameter(format!("gamma: {e}")))?;
    // Gamma draws can underflow to zero for tiny shapes; keep the support.
    let x: f64 = g.sample(rng);
    Ok(1.0 / x.max(f64::MIN_POSITIVE))
}

/// Inverse-Wishart `IW(scale, dof)` by the Bartlett decomposition.
///
/// With `scale = C C^T` and Bartlett factor `A` (lower triangular,
/// `A_ii^2 ~ χ²(dof - i)`, `A_ij ~ N(0,1)` below the diagonal), the draw is
/// `X X^T` with `X = C A^{-T}`. Mean is `scale / (dof - p - 1)`.
pub fn sample_inverse_wishart(
    scale: &DMatrix<f64>,
    dof: f64,
    rng: &mut RngStream,
) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if !scale.is_square() || p == 0 {
        return Err(Error::Shape("inverse-wishart scale must be square".into()));
    }
    if !(dof > p as f64 - 1.0) {
        return Err(Error::InvalidParameter(format!(
            "inverse-wishart dof {dof} must exceed p - 1 = {}",
            p - 1
        )));
    }
    let c = nalgebra::Cholesky::new((scale + scale.transpose()) * 0.5).ok_or_else(|| {
        Error::NotPositiveDefinite {
            context: "inverse-wishart scale".into(),
        }
    })?;
    let c = c.unpack();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(dof - i as f64)
            .map_err(|e| Error::InvalidParameter(format!("chi-square: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt().max(f64::MIN_POSITIVE);
        for j in 0..i {
            a[(i, j)] = rng.std_normal();
        }
    }
    // X = C A^{-T}  <=>  A X^T = C^T
    let xt = a
        .solve_lower_triangular(&c.transpose())
        .expect("bartlett factor has positive diagonal");
    let x = xt.transpose();
    let w = &x * x.transpose();
    Ok((&w + w.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 0);
        let xa: Vec<f64> = (0..10).map(|_| a.std_normal()).collect();
        let xb: Vec<f64> = (0..10).map(|_| b.std_normal()).collect();
        assert_eq!(xa, xb);
        let mut c = RngStream::new(42, 1);
        let xc: Vec<f64> = (0..10).map(|_| c.std_normal()).collect();
        assert_ne!(xa, xc);
    }

    #[test]
    fn streams_uncorrelated() {
        let n = 100_000;
        let mut a = RngStream::new(7, 0);
        let mut b = RngStream::new(7, 1);
        let xs: Vec<(f64, f64)> = (0..n).map(|_| (a.std_normal(), b.std_normal())).collect();
        let corr = xs.iter().map(|(x, y)| x * y).sum::<f64>() / n as f64;
        assert!(corr.abs() < 0.01, "lag-0 cross-correlation {corr}");
    }

    #[test]
    fn derive_seed_distinguishes_paths() {
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_eq!(derive_seed(1, &[2, 3]), derive_seed(1, &[2, 3]));
    }

    #[test]
    fn mvn_zero_covariance_returns_mean() {
        let mean = DVector::from_vec(vec![1.5, -2.0]);
        let mut rng = RngStream::new(3, 0);
        let x = sample_mvn(&mean, &CholeskyFactor::zeros(2), &mut rng).unwrap();
        assert_eq!(x, mean);
    }

    #[test]
    fn mvn_dimension_mismatch() {
        let mut rng = RngStream::new(3, 0);
        let r = sample_mvn(&DVector::zeros(3), &CholeskyFactor::zeros(2), &mut rng);
        assert!(r.is_err());
    }

    #[test]
    fn matrix_normal_zero_covariance() {
        let m = DMatrix::from_fn(2, 3, |i, j| (i + j) as f64);
        let mut rng = RngStream::new(5, 0);
        let x = sample_matrix_normal(
            &m,
            &CholeskyFactor::zeros(2),
            &CholeskyFactor::zeros(3),
            &mut rng,
        )
        .unwrap();
        assert_eq!(x, m);
    }

    #[test]
    fn inverse_gamma_rejects_bad_params() {
        let mut rng = RngStream::new(1, 0);
        assert!(sample_inverse_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_inverse_gamma(1.0, -1.0, &mut rng).is_err());
        assert!(sample_inverse_gamma(1.0, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn inverse_wishart_rejects_small_dof() {
        let mut rng = RngStream::new(1, 0);
        let s = DMatrix::identity(3, 3);
        assert!(sample_inverse_wishart(&s, 1.5, &mut rng).is_err());
        assert!(sample_inverse_wishart(&s, 2.5, &mut rng).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(sample_inverse_wishart(&bad, 5.0, &mut rng).is_err());
    }

    #[test]
    fn inverse_wishart_draws_are_pd() {
        let mut rng = RngStream::new(11, 0);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        for _ in 0..200 {
            let w = sample_inverse_wishart(&s, 4.0, &mut rng).unwrap();
            assert_eq!(w, w.transpose());
            assert!(nalgebra::Cholesky::new(w).is_some());
        }
    }
}
