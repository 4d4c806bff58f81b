//! Gibbs sampler for the CP model with tensor-normal residuals,
//! `vec(E) ~ N(0, c · Σ_N ⊗ … ⊗ Σ_1)`.
//!
//! Each mode is either pinned to the identity or carries a dense `Σ_n`
//! with an inverse-Wishart update. Missing entries are drawn from their
//! Gaussian conditional given the observed entries, block by block: two
//! entries that differ in an identity-mode coordinate are conditionally
//! independent, so blocks are keyed by the identity-mode coordinates.
//!
//! The scalar `c` is sampled (inverse-gamma, Jeffreys prior) only when every
//! mode is identity, which makes that configuration the independent-error
//! model; otherwise `c = 1` and the `Σ_n` carry the scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::als::check_rank;
use crate::draws::{run_chains, ChainSampler, InitStrategy, McmcConfig, RunOutput};
use crate::error::{Error, Result};
use crate::indep::{draw_factor_rows, initial_model};
use crate::linalg::{spd_inverse, sym_power, CholeskyFactor};
use crate::random::{sample_inverse_gamma, sample_inverse_wishart, RngStream};
use crate::tensor::{
    center_observed, cp_reconstruct, khatri_rao_chain, matricize, mode_product, multi_index,
    CpModel, DenseTensor, MaskedTensor,
};

/// Largest conditional block handled densely when no mode is identity.
pub const DENSE_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModePolicy {
    Identity,
    Wishart,
}

/// Mode 1 identity, every other mode inverse-Wishart.
pub fn default_policies(order: usize) -> Vec<ModePolicy> {
    (0..order)
        .map(|n| {
            if n == 0 {
                ModePolicy::Identity
            } else {
                ModePolicy::Wishart
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparableCovariance {
    dims: Vec<usize>,
    policies: Vec<ModePolicy>,
    /// `None` for identity modes.
    sigmas: Vec<Option<DMatrix<f64>>>,
    scale: f64,
}

impl SeparableCovariance {
    /// Every `Σ_n = I`, scale 1.
    pub fn identity(dims: &[usize], policies: &[ModePolicy]) -> Result<Self> {
        if dims.len() != policies.len() {
            return Err(Error::Shape(format!(
                "{} mode policies for an order-{} tensor",
                policies.len(),
                dims.len()
            )));
        }
        let sigmas = dims
            .iter()
            .zip(policies)
            .map(|(&d, p)| match p {
                ModePolicy::Identity => None,
                ModePolicy::Wishart => Some(DMatrix::identity(d, d)),
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            policies: policies.to_vec(),
            sigmas,
            scale: 1.0,
        })
    }

    /// Builds a covariance from explicit per-mode matrices (`None` =
    /// identity). Each matrix must be symmetric positive definite.
    pub fn from_parts(
        dims: &[usize],
        sigmas: Vec<Option<DMatrix<f64>>>,
        scale: f64,
    ) -> Result<Self> {
        if dims.len() != sigmas.len() {
            return Err(Error::Shape("one covariance entry per mode".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale {scale}")));
        }
        let mut policies = Vec::with_capacity(dims.len());
        for (n, (s, &d)) in sigmas.iter().zip(dims).enumerate() {
            match s {
                None => policies.push(ModePolicy::Identity),
                Some(m) => {
                    if m.shape() != (d, d) {
                        return Err(Error::Shape(format!(
                            "mode {} covariance is {}x{}, expected {d}x{d}",
                            n + 1,
                            m.nrows(),
                            m.ncols()
                        )));
                    }
                    if (m - m.transpose()).amax() > 1e-10 * m.amax().max(1.0)
                        || nalgebra::Cholesky::new(m.clone()).is_none()
                    {
                        return Err(Error::NotPositiveDefinite {
                            context: format!("mode {} covariance", n + 1),
                        });
                    }
                    policies.push(ModePolicy::Wishart);
                }
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            policies,
            sigmas,
            scale,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn policies(&self) -> &[ModePolicy] {
        &self.policies
    }

    pub fn sigma(&self, n: usize) -> Option<&DMatrix<f64>> {
        self.sigmas[n].as_ref()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn all_identity(&self) -> bool {
        self.sigmas.iter().all(Option::is_none)
    }

    /// Covariance between entries at multi-indices `a` and `b`.
    pub fn element(&self, a: &[usize], b: &[usize]) -> f64 {
        let mut v = self.scale;
        for (n, s) in self.sigmas.iter().enumerate() {
            match s {
                Some(m) => v *= m[(a[n], b[n])],
                None if a[n] != b[n] => return 0.0,
                None => {}
            }
        }
        v
    }

    /// Dense covariance of the vectorized tensor (mode 1 fastest).
    pub fn dense(&self, cap: usize) -> Result<DMatrix<f64>> {
        let len: usize = self.dims.iter().product();
        if len > cap {
            return Err(Error::ConditionalTooLarge { size: len, cap });
        }
        let idx: Vec<Vec<usize>> = (0..len).map(|l| multi_index(&self.dims, l)).collect();
        Ok(DMatrix::from_fn(len, len, |i, j| self.element(&idx[i], &idx[j])))
    }

    /// `Σ_n^{-1/2}` for each non-identity mode.
    pub fn whiteners(&self) -> Vec<Option<DMatrix<f64>>> {
        self.sigmas
            .iter()
            .map(|s| s.as_ref().map(|m| sym_power(m, -0.5)))
            .collect()
    }
}

/// Applies `Σ_{-n}^{-1/2}` on the right of the mode-`n` matricization and
/// of the Khatri-Rao design, one mode at a time. Returns `(Ã, X̃)`.
pub fn whiten_mode(
    t: &DenseTensor,
    factors: &[DMatrix<f64>],
    n: usize,
    cov: &SeparableCovariance,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    whiten_with(t, factors, n, &cov.whiteners())
}

fn whiten_with(
    t: &DenseTensor,
    factors: &[DMatrix<f64>],
    n: usize,
    w: &[Option<DMatrix<f64>>],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut x = None::<DenseTensor>;
    let mut wf: Vec<DMatrix<f64>> = Vec::with_capacity(factors.len());
    for (k, f) in factors.iter().enumerate() {
        match (&w[k], k != n) {
            (Some(wk), true) => {
                let src = x.as_ref().unwrap_or(t);
                x = Some(mode_product(src, k, wk)?);
                wf.push(wk * f);
            }
            _ => wf.push(f.clone()),
        }
    }
    let a = khatri_rao_chain(&wf, Some(n))?;
    let xm = matricize(x.as_ref().unwrap_or(t), n)?;
    Ok((a, xm))
}

/// Draws `Σ_n ~ IW(I + R Rᵀ, I_n + 2 + I_{-n})` where `R = X̃ − Û Ãᵀ` is the
/// whitened residual at the conditional-mean factor `Û = X̃ Ã (ÃᵀÃ)⁻¹`.
pub fn sample_sigma_mode(
    a_tilde: &DMatrix<f64>,
    x_tilde: &DMatrix<f64>,
    rng: &mut RngStream,
) -> Result<DMatrix<f64>> {
    let (i_n, i_rest) = x_tilde.shape();
    let (ginv, _) = spd_inverse(&(a_tilde.transpose() * a_tilde));
    let u_hat = x_tilde * a_tilde * ginv;
    let r = x_tilde - u_hat * a_tilde.transpose();
    let scale = DMatrix::identity(i_n, i_n) + &r * r.transpose();
    sample_inverse_wishart(&scale, (i_n + 2 + i_rest) as f64, rng)
}

/// Entries sharing all identity-mode coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Block {
    pub missing: Vec<usize>,
    pub observed: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalPlan {
    dims: Vec<usize>,
    blocks: Vec<Block>,
}

impl ConditionalPlan {
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
}

/// Groups entries into conditionally independent blocks. Without an
/// identity mode the whole tensor is one block and must fit in `cap`.
pub fn build_conditional_plan(
    t: &MaskedTensor,
    policies: &[ModePolicy],
    cap: usize,
) -> Result<ConditionalPlan> {
    let dims = t.dims();
    if policies.len() != dims.len() {
        return Err(Error::Shape(format!(
            "{} mode policies for an order-{} tensor",
            policies.len(),
            dims.len()
        )));
    }
    let id_modes: Vec<usize> = (0..dims.len())
        .filter(|&n| policies[n] == ModePolicy::Identity)
        .collect();
    if id_modes.is_empty() && t.len() > cap {
        return Err(Error::ConditionalTooLarge {
            size: t.len(),
            cap,
        });
    }
    let n_blocks: usize = id_modes.iter().map(|&n| dims[n]).product();
    let mut blocks = vec![Block::default(); n_blocks];
    for lin in 0..t.len() {
        let idx = multi_index(dims, lin);
        let mut key = 0;
        for &n in id_modes.iter().rev() {
            key = key * dims[n] + idx[n];
        }
        if t.is_observed(lin) {
            blocks[key].observed.push(lin);
        } else {
            blocks[key].missing.push(lin);
        }
    }
    Ok(ConditionalPlan {
        dims: dims.to_vec(),
        blocks,
    })
}

fn cov_matrix(
    cov: &SeparableCovariance,
    rows: &[Vec<usize>],
    cols: &[Vec<usize>],
) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| cov.element(&rows[i], &cols[j]))
}

/// Conditional mean and covariance of a block's missing entries given its
/// observed entries, around the mean tensor `mean`. `values` supplies the
/// observed data (other positions are ignored).
pub fn conditional_moments(
    block: &Block,
    cov: &SeparableCovariance,
    mean: &[f64],
    values: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let dims = cov.dims();
    let mi: Vec<Vec<usize>> = block.missing.iter().map(|&l| multi_index(dims, l)).collect();
    let oi: Vec<Vec<usize>> = block.observed.iter().map(|&l| multi_index(dims, l)).collect();
    let mu_m = DVector::from_iterator(mi.len(), block.missing.iter().map(|&l| mean[l]));
    let s11 = cov_matrix(cov, &mi, &mi);
    if oi.is_empty() {
        return Ok((mu_m, s11));
    }
    let s22 = cov_matrix(cov, &oi, &oi);
    let s21 = cov_matrix(cov, &oi, &mi);
    let c22 = CholeskyFactor::with_context(&s22, "observed block covariance")?;
    let dev = DVector::from_iterator(oi.len(), block.observed.iter().map(|&l| values[l] - mean[l]));
    let k = c22.solve(&s21);
    let mu = mu_m + k.transpose() * dev;
    let s = s11 - s21.transpose() * k;
    Ok((mu, (&s + s.transpose()) * 0.5))
}

/// One chain of the separable-covariance sampler.
#[derive(Clone, Debug)]
pub struct SepChainState {
    data: MaskedTensor,
    model: CpModel,
    cov: SeparableCovariance,
    whiteners: Vec<Option<DMatrix<f64>>>,
    plan: ConditionalPlan,
    completed: DenseTensor,
    low_rank: DenseTensor,
    imputed: Vec<f64>,
    iteration: usize,
    rng: RngStream,
    singular_sweeps: usize,
}

/// Initializes a chain on centered data: missing entries at zero, every
/// `Σ_n = I`, and the scale drawn from its conditional when all modes are
/// identity.
pub fn init_sep(
    data: &MaskedTensor,
    rank: usize,
    policies: &[ModePolicy],
    strategy: InitStrategy,
    mut rng: RngStream,
) -> Result<SepChainState> {
    check_rank(data.dims(), rank)?;
    let cov = SeparableCovariance::identity(data.dims(), policies)?;
    let plan = build_conditional_plan(data, policies, DENSE_CAP)?;
    let model = initial_model(data, rank, strategy, &mut rng)?;
    let imputed = vec![0.0; data.missing().len()];
    let completed = data.completed_with(&imputed);
    let low_rank = cp_reconstruct(&model);
    let whiteners = cov.whiteners();
    let mut s = SepChainState {
        data: data.clone(),
        model,
        cov,
        whiteners,
        plan,
        completed,
        low_rank,
        imputed,
        iteration: 0,
        rng,
        singular_sweeps: 0,
    };
    if s.cov.all_identity() {
        s.resample_scale()?;
    }
    Ok(s)
}

impl SepChainState {
    pub fn model(&self) -> &CpModel {
        &self.model
    }

    pub fn covariance(&self) -> &SeparableCovariance {
        &self.cov
    }

    pub fn completed(&self) -> &DenseTensor {
        &self.completed
    }

    pub fn low_rank(&self) -> &DenseTensor {
        &self.low_rank
    }

    pub fn plan(&self) -> &ConditionalPlan {
        &self.plan
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Replaces the covariance (policies must match the chain's).
    pub fn set_covariance(&mut self, cov: SeparableCovariance) -> Result<()> {
        if cov.policies() != self.cov.policies() || cov.dims() != self.cov.dims() {
            return Err(Error::Shape("covariance policies differ from the chain".into()));
        }
        self.whiteners = cov.whiteners();
        self.cov = cov;
        Ok(())
    }

    pub fn whitened(&self, n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        whiten_with(&self.completed, self.model.factors(), n, &self.whiteners)
    }

    /// Draws `Σ_n` given everything else. No-op for identity modes.
    pub fn sample_sigma(&mut self, n: usize) -> Result<()> {
        if self.cov.policies[n] == ModePolicy::Identity {
            return Ok(());
        }
        let (a, x) = self.whitened(n)?;
        let s = sample_sigma_mode(&a, &x, &mut self.rng)?;
        self.whiteners[n] = Some(sym_power(&s, -0.5));
        self.cov.sigmas[n] = Some(s);
        Ok(())
    }

    /// Draws `U^n ~ MN(X̃ Ã G⁻¹, c Σ_n, G⁻¹)`.
    pub fn sample_factor(&mut self, n: usize) -> Result<()> {
        let (a, x) = self.whitened(n)?;
        let gram = a.transpose() * &a;
        let b = x * a;
        let row = match &self.cov.sigmas[n] {
            Some(s) => Some(CholeskyFactor::with_context(s, "mode covariance")?),
            None => None,
        };
        let (u, flagged) =
            draw_factor_rows(&b, &gram, row.as_ref(), self.cov.scale, &mut self.rng)?;
        self.model.factors_mut()[n] = u;
        if flagged {
            self.singular_sweeps += 1;
        }
        Ok(())
    }

    /// Draws the scalar scale from `IG(∏ I_n / 2, ‖X − X̂‖²/2)`; only
    /// meaningful when every mode is identity.
    pub fn resample_scale(&mut self) -> Result<()> {
        let ssr: f64 = self
            .completed
            .data()
            .iter()
            .zip(self.low_rank.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.cov.scale = sample_inverse_gamma(
            self.completed.len() as f64 / 2.0,
            (ssr / 2.0).max(1e-150),
            &mut self.rng,
        )?;
        Ok(())
    }

    /// Redraws every missing entry from its block conditional.
    pub fn predictive_impute(&mut self) -> Result<()> {
        let mean = self.low_rank.data();
        let values = self.completed.data();
        let mut updates: Vec<(usize, f64)> = Vec::with_capacity(self.imputed.len());
        for (b, block) in self.plan.blocks.iter().enumerate() {
            if block.missing.is_empty() {
                continue;
            }
            let (mu, s) = conditional_moments(block, &self.cov, mean, values)?;
            let chol = CholeskyFactor::new(&s).map_err(|_| Error::ConditionalNotPd { block: b })?;
            let z = DVector::from_fn(mu.len(), |_, _| self.rng.std_normal());
            let draw = mu + chol.l() * z;
            updates.extend(block.missing.iter().copied().zip(draw.iter().copied()));
        }
        for (lin, v) in updates {
            self.completed.data_mut()[lin] = v;
        }
        for (k, &m) in self.data.missing().iter().enumerate() {
            self.imputed[k] = self.completed.data()[m];
        }
        Ok(())
    }

    /// One sweep: per mode `Σ_n` (if sampled) then `U^n`; then the scale
    /// when all modes are identity; then the missing entries.
    pub fn step(&mut self) -> Result<()> {
        for n in 0..self.model.factors().len() {
            self.sample_sigma(n)?;
            self.sample_factor(n)?;
        }
        self.model.balance();
        self.low_rank = cp_reconstruct(&self.model);
        if self.cov.all_identity() {
            self.resample_scale()?;
        }
        self.predictive_impute()?;
        self.iteration += 1;
        Ok(())
    }
}

impl ChainSampler for SepChainState {
    fn step(&mut self) -> Result<()> {
        SepChainState::step(self)
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
        if self.cov.all_identity() {
            return vec![("scale".to_string(), self.cov.scale)];
        }
        self.cov
            .sigmas
            .iter()
            .enumerate()
            .filter_map(|(n, s)| {
                s.as_ref().map(|m| {
                    let logdet = CholeskyFactor::new(m).map_or(f64::NAN, |c| c.log_det());
                    (format!("logdet_sigma{}", n + 1), logdet)
                })
            })
            .collect()
    }

    fn singular_sweeps(&self) -> usize {
        self.singular_sweeps
    }

    fn extras(&self) -> Vec<f64> {
        let mut out = vec![self.cov.scale];
        for m in self.cov.sigmas.iter().flatten() {
            out.extend_from_slice(m.as_slice());
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SepOutput {
    pub run: RunOutput,
    /// Posterior mean of each sampled `Σ_n` (`None` for identity modes).
    pub sigma_mean: Vec<Option<DMatrix<f64>>>,
    /// Posterior mean of the scalar scale (1 unless all modes are identity).
    pub scale_mean: f64,
}

/// Runs the separable-covariance sampler. Chain `c` uses stream `c` of
/// `cfg.seed`; outputs are on the data scale.
pub fn run_sep(
    t: &MaskedTensor,
    rank: usize,
    cfg: &McmcConfig,
    policies: &[ModePolicy],
) -> Result<SepOutput> {
    cfg.validate()?;
    check_rank(t.dims(), rank)?;
    build_conditional_plan(t, policies, DENSE_CAP)?;
    let (centered, centering) = center_observed(t)?;
    let run = run_chains(t.dims(), t.missing(), &centering, cfg, |c| {
        init_sep(
            &centered,
            rank,
            policies,
            cfg.init,
            RngStream::new(cfg.seed, c as u64),
        )
    })?;
    let mut it = run.extras_mean.iter().copied();
    let scale_mean = it.next().unwrap_or(1.0);
    let sigma_mean = t
        .dims()
        .iter()
        .zip(policies)
        .map(|(&d, p)| match p {
            ModePolicy::Identity => None,
            ModePolicy::Wishart => Some(DMatrix::from_iterator(d, d, it.by_ref().take(d * d))),
        })
        .collect();
    Ok(SepOutput {
        run,
        sigma_mean,
        scale_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kronecker;
    use approx::assert_relative_eq;

    fn random_pd(d: usize, rng: &mut RngStream) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.std_normal());
        &m * m.transpose() + DMatrix::identity(d, d) * 0.5
    }

    #[test]
    fn identity_whitening_is_noop() {
        let mut rng = RngStream::new(1, 0);
        let t = DenseTensor::from_fn(vec![3, 4, 2], |_| rng.std_normal()).unwrap();
        let f: Vec<_> = [3, 4, 2]
            .iter()
            .map(|&d| DMatrix::from_fn(d, 2, |_, _| rng.std_normal()))
            .collect();
        let cov = SeparableCovariance::identity(&[3, 4, 2], &[ModePolicy::Identity; 3]).unwrap();
        for n in 0..3 {
            let (a, x) = whiten_mode(&t, &f, n, &cov).unwrap();
            assert_eq!(a, khatri_rao_chain(&f, Some(n)).unwrap());
            assert_eq!(x, matricize(&t, n).unwrap());
        }
    }

    #[test]
    fn whitening_matches_dense_kronecker() {
        let mut rng = RngStream::new(2, 0);
        let dims = [3, 2, 4];
        let t = DenseTensor::from_fn(dims.to_vec(), |_| rng.std_normal()).unwrap();
        let f: Vec<_> = dims
            .iter()
            .map(|&d| DMatrix::from_fn(d, 2, |_, _| rng.std_normal()))
            .collect();
        let sig: Vec<_> = dims.iter().map(|&d| Some(random_pd(d, &mut rng))).collect();
        let cov = SeparableCovariance::from_parts(&dims, sig.clone(), 1.0).unwrap();
        for n in 0..3 {
            let others: Vec<usize> = (0..3).rev().filter(|&k| k != n).collect();
            let s_rest = kronecker(
                sig[others[0]].as_ref().unwrap(),
                sig[others[1]].as_ref().unwrap(),
            );
            let w = sym_power(&s_rest, -0.5);
            let (a, x) = whiten_mode(&t, &f, n, &cov).unwrap();
            let a_dense = &w * khatri_rao_chain(&f, Some(n)).unwrap();
            let x_dense = matricize(&t, n).unwrap() * &w;
            assert_relative_eq!(a, a_dense, epsilon = 1e-10);
            assert_relative_eq!(x, x_dense, epsilon = 1e-10);
        }
    }

    #[test]
    fn plan_blocks_by_identity_coordinates() {
        let dims = vec![3, 2, 2];
        let t = MaskedTensor::new(dims.clone(), vec![0.0; 12], &[0, 4, 11]).unwrap();
        let p = [ModePolicy::Identity, ModePolicy::Wishart, ModePolicy::Wishart];
        let plan = build_conditional_plan(&t, &p, DENSE_CAP).unwrap();
        assert_eq!(plan.blocks().len(), 3);
        for b in plan.blocks() {
            let key = multi_index(&dims, b.observed.first().copied().unwrap_or(b.missing[0]))[0];
            for &l in b.missing.iter().chain(&b.observed) {
                assert_eq!(multi_index(&dims, l)[0], key);
            }
        }
        let all = build_conditional_plan(&t, &[ModePolicy::Identity; 3], DENSE_CAP).unwrap();
        assert_eq!(all.blocks().len(), 12);
    }

    #[test]
    fn plan_too_large_without_identity() {
        let t = MaskedTensor::new(vec![4, 4, 4], vec![0.0; 64], &[1]).unwrap();
        let err = build_conditional_plan(&t, &[ModePolicy::Wishart; 3], 32).unwrap_err();
        assert!(matches!(err, Error::ConditionalTooLarge { size: 64, cap: 32 }));
    }

    #[test]
    fn correlated_pair_follows_partner() {
        let dims = [1, 2];
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.999, 0.999, 1.0]);
        let cov = SeparableCovariance::from_parts(&dims, vec![None, Some(s)], 1.0).unwrap();
        let block = Block {
            missing: vec![1],
            observed: vec![0],
        };
        let mean = [0.5, -0.2];
        let values = [2.5, f64::NAN];
        let (mu, var) = conditional_moments(&block, &cov, &mean, &values).unwrap();
        assert_relative_eq!(mu[0], -0.2 + 0.999 * 2.0, epsilon = 1e-12);
        assert_relative_eq!(var[(0, 0)], 1.0 - 0.999 * 0.999, epsilon = 1e-12);
    }

    #[test]
    fn sampled_sigmas_stay_pd() {
        let mut rng = RngStream::new(4, 0);
        let dense = DenseTensor::from_fn(vec![4, 3, 3], |_| rng.std_normal()).unwrap();
        let t = MaskedTensor::mask(&dense, &[0, 5, 13, 30]).unwrap();
        let (c, _) = center_observed(&t).unwrap();
        let mut s = init_sep(
            &c,
            2,
            &default_policies(3),
            InitStrategy::Random,
            RngStream::new(9, 0),
        )
        .unwrap();
        for _ in 0..10 {
            s.step().unwrap();
            for n in 1..3 {
                let m = s.covariance().sigma(n).unwrap();
                assert_eq!(m, &m.transpose());
                assert!(nalgebra::Cholesky::new(m.clone()).is_some());
            }
            for i in t.observed_indices() {
                assert_eq!(s.completed().data()[i], c.raw()[i]);
            }
        }
    }

    #[test]
    fn run_is_deterministic() {
        let mut rng = RngStream::new(6, 0);
        let dense = DenseTensor::from_fn(vec![3, 3, 3], |_| rng.std_normal()).unwrap();
        let t = MaskedTensor::mask(&dense, &[2, 8, 19]).unwrap();
        let cfg = McmcConfig::new(20, 10, 2, 77);
        let a = run_sep(&t, 1, &cfg, &default_policies(3)).unwrap();
        let b = run_sep(&t, 1, &cfg, &default_policies(3)).unwrap();
        assert_eq!(a.run.draws, b.run.draws);
        assert_eq!(a.sigma_mean, b.sigma_mean);
        assert_eq!(a.scale_mean, 1.0);
    }
}
