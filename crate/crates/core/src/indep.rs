//! Gibbs sampler for the CP model with i.i.d. `N(0, σ²)` residuals and
//! flat/Jeffreys priors, imputing missing entries from the posterior
//! predictive at every sweep.
//!
//! Given the other factors, the rows of `U^n` are conditionally i.i.d.
//! `N(G⁻¹ A_(n)ᵀ x_i, σ² G⁻¹)` with `G = A_(n)ᵀ A_(n)`, so one factorization
//! of `G` per mode serves all rows. `σ²` is drawn from
//! `IG(∏ I_n / 2, ‖X − X̂‖²_F / 2)` on the completed tensor.

use nalgebra::DMatrix;

use crate::als::{check_rank, em_impute, random_model, EmConfig};
use crate::draws::{run_chains, ChainSampler, InitStrategy, McmcConfig, RunOutput};
use crate::error::Result;
use crate::linalg::{spd_inverse, sym_power, CholeskyFactor};
use crate::random::{sample_inverse_gamma, std_normal_matrix, RngStream};
use crate::tensor::{
    center_observed, cp_reconstruct, gram_hadamard, khatri_rao_chain, matricize, CpModel,
    DenseTensor, MaskedTensor,
};

/// Smallest inverse-gamma rate used when the residual is exactly zero.
const RATE_FLOOR: f64 = 1e-150;

/// Draws `U` with rows `N(M_i, scale · G⁻¹)` where `M = B G⁻¹`.
/// Returns the draw and whether `G` needed jitter or a pseudo-inverse.
pub(crate) fn draw_factor_rows(
    b: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    row_chol: Option<&CholeskyFactor>,
    scale: f64,
    rng: &mut RngStream,
) -> Result<(DMatrix<f64>, bool)> {
    let (ginv, mut flagged) = spd_inverse(gram);
    let mean = b * &ginv;
    // A vanishing design (e.g. all-zero factors) leaves a singular G⁻¹;
    // its symmetric square root still gives L Lᵀ = G⁻¹.
    let col = match CholeskyFactor::new(&ginv) {
        Ok(c) => {
            flagged |= c.jitter() > 0.0;
            c.l().clone()
        }
        Err(_) => {
            flagged = true;
            sym_power(&ginv, 0.5)
        }
    };
    let z = std_normal_matrix(b.nrows(), b.ncols(), rng);
    let noise = match row_chol {
        Some(rc) => rc.l() * z * col.transpose(),
        None => z * col.transpose(),
    };
    Ok((mean + noise * scale.sqrt(), flagged))
}

/// One chain of the independent-error sampler.
#[derive(Clone, Debug)]
pub struct IndepChainState {
    data: MaskedTensor,
    model: CpModel,
    sigma2: f64,
    completed: DenseTensor,
    low_rank: DenseTensor,
    imputed: Vec<f64>,
    iteration: usize,
    rng: RngStream,
    singular_sweeps: usize,
}

fn residual_ss(x: &DenseTensor, fit: &DenseTensor) -> f64 {
    x.data()
        .iter()
        .zip(fit.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn draw_sigma2(x: &DenseTensor, fit: &DenseTensor, rng: &mut RngStream) -> Result<f64> {
    let shape = x.len() as f64 / 2.0;
    let rate = (residual_ss(x, fit) / 2.0).max(RATE_FLOOR);
    sample_inverse_gamma(shape, rate, rng)
}

pub(crate) fn initial_model(
    data: &MaskedTensor,
    rank: usize,
    strategy: InitStrategy,
    rng: &mut RngStream,
) -> Result<CpModel> {
    let mut model = match strategy {
        InitStrategy::Random => random_model(data.dims(), rank, rng),
        InitStrategy::Em => em_impute(data, &EmConfig::new(rank), rng)?
            .model
            .absorb_weights(),
    };
    model.balance();
    Ok(model)
}

/// Initializes a chain on centered data: missing entries start at zero,
/// factors come from `strategy` and `σ²` from its inverse-gamma
/// conditional given those factors.
pub fn init_indep(
    data: &MaskedTensor,
    rank: usize,
    strategy: InitStrategy,
    mut rng: RngStream,
) -> Result<IndepChainState> {
    check_rank(data.dims(), rank)?;
    let model = initial_model(data, rank, strategy, &mut rng)?;
    let imputed = vec![0.0; data.missing().len()];
    let completed = data.completed_with(&imputed);
    let low_rank = cp_reconstruct(&model);
    let sigma2 = draw_sigma2(&completed, &low_rank, &mut rng)?;
    Ok(IndepChainState {
        data: data.clone(),
        model,
        sigma2,
        completed,
        low_rank,
        imputed,
        iteration: 0,
        rng,
        singular_sweeps: 0,
    })
}

impl IndepChainState {
    pub fn model(&self) -> &CpModel {
        &self.model
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn completed(&self) -> &DenseTensor {
        &self.completed
    }

    pub fn low_rank(&self) -> &DenseTensor {
        &self.low_rank
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Draws the rows of `U^n` from their full conditional.
    pub fn sample_factor(&mut self, n: usize) -> Result<()> {
        let factors = self.model.factors();
        let design = khatri_rao_chain(factors, Some(n))?;
        let gram = gram_hadamard(factors, n);
        let b = matricize(&self.completed, n)? * design;
        let (u, flagged) = draw_factor_rows(&b, &gram, None, self.sigma2, &mut self.rng)?;
        self.model.factors_mut()[n] = u;
        if flagged {
            self.singular_sweeps += 1;
        }
        Ok(())
    }

    /// Redraws `σ²` given the current factors and completed tensor.
    pub fn resample_sigma2(&mut self) -> Result<()> {
        self.sigma2 = draw_sigma2(&self.completed, &self.low_rank, &mut self.rng)?;
        Ok(())
    }

    /// One sweep: every factor, then `σ²`, then the missing entries.
    pub fn step(&mut self) -> Result<()> {
        for n in 0..self.model.factors().len() {
            self.sample_factor(n)?;
        }
        self.model.balance();
        self.low_rank = cp_reconstruct(&self.model);
        self.resample_sigma2()?;
        let sd = self.sigma2.sqrt();
        for (k, &m) in self.data.missing().iter().enumerate() {
            let v = self.low_rank.data()[m] + sd * self.rng.std_normal();
            self.imputed[k] = v;
            self.completed.data_mut()[m] = v;
        }
        self.iteration += 1;
        Ok(())
    }
}

impl ChainSampler for IndepChainState {
    fn step(&mut self) -> Result<()> {
        IndepChainState::step(self)
    }

    fn imputed(&self) -> &[f64] {
        &self.imputed
    }

    fn low_rank_at_missing(&self) -> Vec<f64> {
        self.data
            .missing()
            .iter()
            .map(|&m| self.low_rank.data()[m])
            .collect()
    }

    fn monitored(&self) -> Vec<(String, f64)> {
        vec![("sigma2".to_string(), self.sigma2)]
    }

    fn singular_sweeps(&self) -> usize {
        self.singular_sweeps
    }
}

/// Runs the independent-error sampler. Chain `c` uses stream `c` of
/// `cfg.seed`; outputs are on the data scale.
pub fn run_indep(t: &MaskedTensor, rank: usize, cfg: &McmcConfig) -> Result<RunOutput> {
    cfg.validate()?;
    check_rank(t.dims(), rank)?;
    let (centered, centering) = center_observed(t)?;
    run_chains(t.dims(), t.missing(), &centering, cfg, |c| {
        init_indep(&centered, rank, cfg.init, RngStream::new(cfg.seed, c as u64))
    })
}
