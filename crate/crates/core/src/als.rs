//! Alternating least squares for the CP model and the EM imputation loop
//! built on it. Both serve as the frequentist comparator and as a
//! starting point for the samplers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::pseudo_inverse;
use crate::random::{std_normal_matrix, RngStream};
use crate::tensor::{
    center_observed, cp_reconstruct, gram_hadamard, khatri_rao_chain, matricize, CpModel,
    DenseTensor, MaskedTensor,
};

/// Starting point for ALS.
#[derive(Clone, Debug, Default)]
pub enum AlsInit {
    /// Factor entries i.i.d. standard normal.
    #[default]
    RandomNormal,
    Given(CpModel),
}

#[derive(Clone, Debug)]
pub struct AlsConfig {
    pub rank: usize,
    pub max_iter: usize,
    /// Stop when the relative change of the residual sum of squares falls
    /// below this.
    pub rel_tol: f64,
    pub init: AlsInit,
}

impl AlsConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            max_iter: 500,
            rel_tol: 1e-8,
            init: AlsInit::RandomNormal,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidRank {
                rank: 0,
                reason: "rank must be at least 1".into(),
            });
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("rel_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AlsFit {
    /// Normalized model: unit-norm columns, scales in `lambda`.
    pub model: CpModel,
    /// Residual sum of squares after each sweep.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl AlsFit {
    pub fn sweeps(&self) -> usize {
        self.trace.len()
    }
}

/// Rejects ranks that exceed the column count of any matricization.
pub fn check_rank(dims: &[usize], rank: usize) -> Result<()> {
    if rank == 0 {
        return Err(Error::InvalidRank {
            rank,
            reason: "rank must be at least 1".into(),
        });
    }
    let total: usize = dims.iter().product();
    for (n, &d) in dims.iter().enumerate() {
        let cols = total / d;
        if rank > cols {
            return Err(Error::InvalidRank {
                rank,
                reason: format!("exceeds the {cols} columns of the mode-{} matricization", n + 1),
            });
        }
    }
    Ok(())
}

pub fn random_model(dims: &[usize], rank: usize, rng: &mut RngStream) -> CpModel {
    let factors = dims
        .iter()
        .map(|&d| std_normal_matrix(d, rank, rng))
        .collect();
    CpModel::new(factors).expect("random factors are finite")
}

fn ssr(t: &DenseTensor, m: &CpModel) -> f64 {
    let rec = cp_reconstruct(m);
    t.data()
        .iter()
        .zip(rec.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Fits a rank-R CP model to a fully observed tensor.
///
/// Each sweep solves `U^n = X_(n) A_(n) [⊛_{k≠n} U^kᵀU^k]^†` for every mode
/// and moves the column norms into `lambda`.
pub fn als_fit(t: &DenseTensor, cfg: &AlsConfig, rng: &mut RngStream) -> Result<AlsFit> {
    cfg.validate()?;
    check_rank(t.dims(), cfg.rank)?;
    if t.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ALS input tensor".into()));
    }
    let order = t.order();
    let model = match &cfg.init {
        AlsInit::RandomNormal => random_model(t.dims(), cfg.rank, rng),
        AlsInit::Given(m) => {
            if m.dims() != t.dims() || m.rank() != cfg.rank {
                return Err(Error::Shape(format!(
                    "initial model {:?} rank {} does not match tensor {:?} rank {}",
                    m.dims(),
                    m.rank(),
                    t.dims(),
                    cfg.rank
                )));
            }
            m.clone()
        }
    };
    let model = model.normalized();
    let mut factors: Vec<DMatrix<f64>> = model.factors().to_vec();
    let mut lambda: DVector<f64> = model.lambda().clone();
    let unfolded: Vec<DMatrix<f64>> = (0..order)
        .map(|n| matricize(t, n))
        .collect::<Result<_>>()?;
    let norm2 = t.data().iter().map(|v| v * v).sum::<f64>();

    let mut trace = Vec::with_capacity(cfg.max_iter);
    let mut converged = false;
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        for n in 0..order {
            let design = khatri_rao_chain(&factors, Some(n))?;
            let gram = gram_hadamard(&factors, n);
            let mut u = &unfolded[n] * design * pseudo_inverse(&gram, None);
            for r in 0..cfg.rank {
                let norm = u.column(r).norm();
                lambda[r] = norm;
                if norm > 0.0 {
                    u.column_mut(r).unscale_mut(norm);
                }
            }
            factors[n] = u;
        }
        let current = CpModel::with_weights(factors.clone(), lambda.clone())?;
        let s = ssr(t, &current);
        trace.push(s);
        if s <= 1e-28 * norm2.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        if prev.is_finite() && (prev - s).abs() <= cfg.rel_tol * prev.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        prev = s;
    }
    Ok(AlsFit {
        model: CpModel::with_weights(factors, lambda)?,
        trace,
        converged,
    })
}

#[derive(Clone, Debug)]
pub struct EmConfig {
    pub als: AlsConfig,
    pub max_iter: usize,
    /// Relative ℓ2 change of the imputed entries that ends the loop.
    pub tol: f64,
}

impl EmConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            als: AlsConfig::new(rank),
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmFit {
    /// Fitted model on the centered scale.
    pub model: CpModel,
    /// Completed tensor on the data scale; observed entries are untouched.
    pub completed: DenseTensor,
    /// Mean removed before fitting.
    pub mean: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl EmFit {
    /// Imputed values in the order of `MaskedTensor::missing`.
    pub fn imputed(&self, t: &MaskedTensor) -> Vec<f64> {
        t.missing().iter().map(|&m| self.completed.data()[m]).collect()
    }
}

/// EM imputation: alternate an ALS fit of the completed tensor with
/// overwriting the missing entries by the reconstruction.
///
/// The data are centered on the observed mean and missing entries start
/// at zero on that scale. Non-convergence is reported through
/// `EmFit::converged`.
pub fn em_impute(t: &MaskedTensor, cfg: &EmConfig, rng: &mut RngStream) -> Result<EmFit> {
    cfg.als.validate()?;
    if cfg.max_iter == 0 {
        return Err(Error::InvalidParameter("EM max_iter must be at least 1".into()));
    }
    let (centered, centering) = center_observed(t)?;
    let missing = centered.missing().to_vec();
    let mut imputed = vec![0.0; missing.len()];
    let mut work = centered.completed_with(&imputed);

    let mut als_cfg = cfg.als.clone();
    let mut model = None;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        if let Some(m) = model.take() {
            als_cfg.init = AlsInit::Given(m);
        }
        let fit = als_fit(&work, &als_cfg, rng)?;
        if missing.is_empty() {
            model = Some(fit.model);
            converged = fit.converged;
            break;
        }
        let rec = cp_reconstruct(&fit.model);
        let next: Vec<f64> = missing.iter().map(|&m| rec.data()[m]).collect();
        let diff = next
            .iter()
            .zip(&imputed)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        imputed = next;
        work = centered.completed_with(&imputed);
        model = Some(fit.model);
        if diff <= cfg.tol * scale.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    let model = model.expect("at least one EM iteration ran");
    let completed = centering.restore(&work);
    Ok(EmFit {
        model,
        completed,
        mean: centering.mean,
        iterations,
        converged,
    })
}
