//! Dense kernels shared by the samplers: jittered Cholesky, SVD
//! pseudo-inverse and symmetric matrix roots.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// First jitter tried, relative to `trace / p`.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter allowed, relative to `trace / p`.
pub const JITTER_CAP: f64 = 1e-4;

/// Lower-triangular `L` with `A + jitter I = L L^T`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    /// Factors a symmetric matrix, adding diagonal jitter that grows
    /// tenfold from `1e-10 * trace/p` up to `1e-4 * trace/p` when the
    /// plain factorization fails.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        Self::with_context(a, "cholesky")
    }

    pub fn with_context(a: &DMatrix<f64>, context: &str) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape(format!(
                "cholesky of {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(context.to_string()));
        }
        let p = a.nrows();
        if p == 0 {
            return Ok(Self {
                l: DMatrix::zeros(0, 0),
                jitter: 0.0,
            });
        }
        // Symmetrize to avoid failing on round-off asymmetry.
        let sym = (a + a.transpose()) * 0.5;
        if let Some(c) = Cholesky::new(sym.clone()) {
            return Ok(Self {
                l: c.unpack(),
                jitter: 0.0,
            });
        }
        let scale = sym.trace() / p as f64;
        if scale <= 0.0 || !scale.is_finite() {
            return Err(Error::NotPositiveDefinite {
                context: context.to_string(),
            });
        }
        let mut rel = JITTER_START;
        while rel <= JITTER_CAP * (1.0 + 1e-9) {
            let jitter = rel * scale;
            let mut b = sym.clone();
            for i in 0..p {
                b[(i, i)] += jitter;
            }
            if let Some(c) = Cholesky::new(b) {
                return Ok(Self {
                    l: c.unpack(),
                    jitter,
                });
            }
            rel *= 10.0;
        }
        Err(Error::NotPositiveDefinite {
            context: context.to_string(),
        })
    }

    /// Wraps a lower-triangular factor without checking it. A zero matrix
    /// stands for a degenerate (point-mass) covariance.
    pub fn from_lower(l: DMatrix<f64>) -> Self {
        Self { l, jitter: 0.0 }
    }

    pub fn zeros(p: usize) -> Self {
        Self::from_lower(DMatrix::zeros(p, p))
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `L L^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    /// Solves `(L L^T) X = B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .l
            .solve_lower_triangular(b)
            .expect("cholesky factor has positive diagonal");
        self.l
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has positive diagonal")
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .l
            .solve_lower_triangular(b)
            .expect("cholesky factor has positive diagonal");
        self.l
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has positive diagonal")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve(&DMatrix::identity(self.dim(), self.dim()))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Moore-Penrose pseudo-inverse. Singular values below `rel_tol * σ_max`
/// are treated as zero; `None` uses `ε · max(m, n) · σ_max`.
pub fn pseudo_inverse(a: &DMatrix<f64>, rel_tol: Option<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rel = rel_tol.unwrap_or(f64::EPSILON * m.max(n) as f64);
    let cutoff = rel * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(n, m);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += (vt.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    out
}

/// Symmetric `A^{power}` through the eigendecomposition; eigenvalues are
/// floored at `1e-12 * λ_max` before the power is applied.
pub fn sym_power(a: &DMatrix<f64>, power: f64) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.max().max(0.0);
    let floor = 1e-12 * lmax;
    let d = eig.eigenvalues.map(|l| l.max(floor).powf(power));
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Inverse of a symmetric positive (semi-)definite matrix: Cholesky with
/// jitter when possible, otherwise the pseudo-inverse. The flag is true
/// when jitter or the pseudo-inverse was needed.
pub fn spd_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    match CholeskyFactor::new(a) {
        Ok(c) => {
            let flagged = c.jitter() > 0.0;
            (c.inverse(), flagged)
        }
        Err(_) => (pseudo_inverse(a, None), true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn penrose(a: &DMatrix<f64>, p: &DMatrix<f64>) {
        assert_relative_eq!(a * p * a, a.clone(), epsilon = 1e-8);
        assert_relative_eq!(p * a * p, p.clone(), epsilon = 1e-8);
        let ap = a * p;
        let pa = p * a;
        assert_relative_eq!(ap.transpose(), ap, epsilon = 1e-8);
        assert_relative_eq!(pa.transpose(), pa, epsilon = 1e-8);
    }

    #[test]
    fn pinv_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let p = pseudo_inverse(&a, None);
        assert_relative_eq!(
            p,
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25])),
            epsilon = 1e-14
        );
    }

    #[test]
    fn pinv_rank_deficient() {
        let a = DMatrix::from_element(2, 2, 1.0);
        let p = pseudo_inverse(&a, None);
        assert_relative_eq!(p, DMatrix::from_element(2, 2, 0.25), epsilon = 1e-12);
        penrose(&a, &p);
    }

    #[test]
    fn pinv_rectangular_penrose() {
        let a = DMatrix::from_fn(5, 3, |i, j| ((i * 3 + j * 7) % 5) as f64 - 1.7 + 0.1 * i as f64);
        let p = pseudo_inverse(&a, None);
        penrose(&a, &p);
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[4., 2., 0.6, 2., 5., 1., 0.6, 1., 3.]);
        let c = CholeskyFactor::new(&a).unwrap();
        assert_eq!(c.jitter(), 0.0);
        let err = (c.reconstruct() - &a).norm() / a.norm();
        assert!(err < 1e-12);
        for i in 0..3 {
            assert!(c.l()[(i, i)] > 0.0);
            for j in i + 1..3 {
                assert_eq!(c.l()[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn cholesky_jitter_rescues_semidefinite() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        let c = CholeskyFactor::new(&a).unwrap();
        assert!(c.jitter() > 0.0);
        let err = (c.reconstruct() - &a).norm() / a.norm();
        assert!(err <= 1e-4);
    }

    #[test]
    fn cholesky_fails_past_cap() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            CholeskyFactor::new(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn sym_power_roundtrip() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let h = sym_power(&a, -0.5);
        assert_relative_eq!(&h * &a * &h, DMatrix::identity(2, 2), epsilon = 1e-12);
    }
}
