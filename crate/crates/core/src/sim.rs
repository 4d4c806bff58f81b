//! Synthetic designs with known truth, missingness generators and the
//! accuracy/calibration metrics used to compare engines.
//!
//! All three designs draw a rank-3 CP signal with standard normal factors.
//! Design 1 adds i.i.d. `N(0, σ²)` noise; design 2 adds tensor-normal noise
//! with `Σ_1 = 0.5 I` and `Σ_2, Σ_3 = M Mᵀ` for random sign matrices `M`;
//! design 3 uses a compound-symmetric `Σ_2` and identity elsewhere.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{em_impute, EmConfig};
use crate::draws::{summarize, EntrySummary, ImputationDraws, McmcConfig};
use crate::error::{Error, Result};
use crate::indep::run_indep;
use crate::linalg::CholeskyFactor;
use crate::random::{derive_seed, RngStream};
use crate::separable::{default_policies, run_sep, SeparableCovariance};
use crate::tensor::{cp_reconstruct, mode_product, multi_index, strides, CpModel, DenseTensor, MaskedTensor};

const TAG_FACTORS: u64 = 1;
const TAG_COV: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_MASK: u64 = 4;
const TAG_BETA: u64 = 5;
const TAG_FIT: u64 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Missingness {
    /// Each entry missing independently with probability `p`.
    Entry { p: f64 },
    /// Each mode-`mode` fiber (0-based) missing with probability `p`.
    Fiber { mode: usize, p: f64 },
}

impl Missingness {
    pub fn probability(&self) -> f64 {
        match *self {
            Missingness::Entry { p } | Missingness::Fiber { p, .. } => p,
        }
    }

    /// Linear offsets of missing entries, ascending. At least one entry is
    /// always left observed.
    pub fn draw(&self, dims: &[usize], rng: &mut RngStream) -> Result<Vec<usize>> {
        let p = self.probability();
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "missing probability must be in (0, 1), got {p}"
            )));
        }
        let len: usize = dims.iter().product();
        let mut out = match *self {
            Missingness::Entry { .. } => (0..len).filter(|_| rng.uniform() < p).collect(),
            Missingness::Fiber { mode, .. } => {
                if mode >= dims.len() {
                    return Err(Error::ModeOutOfRange {
                        mode,
                        order: dims.len(),
                    });
                }
                let stride = strides(dims)[mode];
                let mut out = Vec::new();
                for lin in 0..len {
                    if multi_index(dims, lin)[mode] == 0 && rng.uniform() < p {
                        out.extend((0..dims[mode]).map(|j| lin + j * stride));
                    }
                }
                out.sort_unstable();
                out
            }
        };
        if out.len() == len {
            // Keep one entry (a whole fiber for fiber missingness) observed.
            let keep: Vec<usize> = match *self {
                Missingness::Entry { .. } => vec![0],
                Missingness::Fiber { mode, .. } => {
                    let stride = strides(dims)[mode];
                    (0..dims[mode]).map(|j| j * stride).collect()
                }
            };
            out.retain(|l| !keep.contains(l));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Study {
    /// Independent noise.
    #[serde(rename = "1")]
    One,
    /// Separable noise with random `Σ_2, Σ_3`.
    #[serde(rename = "2")]
    Two,
    /// Compound-symmetric `Σ_2`.
    #[serde(rename = "3")]
    Three,
}

impl Study {
    pub fn from_number(n: u32) -> Result<Self> {
        match n {
            1 => Ok(Study::One),
            2 => Ok(Study::Two),
            3 => Ok(Study::Three),
            _ => Err(Error::InvalidParameter(format!("unknown study {n}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub study: Study,
    pub dims: Vec<usize>,
    pub rank: usize,
    pub missing: Missingness,
    /// Noise sd for study 1.
    pub sigma: f64,
    pub seed: u64,
}

impl SimDesign {
    pub fn new(study: Study, dims: Vec<usize>, missing: Missingness, seed: u64) -> Self {
        Self {
            study,
            dims,
            rank: 3,
            missing,
            sigma: 1.0,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// A generated data set.
#[derive(Clone, Debug)]
pub struct SimData {
    /// Complete tensor: signal plus noise.
    pub truth: DenseTensor,
    /// Noise-free low-rank signal.
    pub signal: DenseTensor,
    pub observed: MaskedTensor,
    /// Noise covariance (`None` for i.i.d. noise).
    pub covariance: Option<SeparableCovariance>,
}

/// Draws `E` with `vec(E) ~ N(0, c · Σ_N ⊗ … ⊗ Σ_1)`.
pub fn sample_tensor_normal(cov: &SeparableCovariance, rng: &mut RngStream) -> Result<DenseTensor> {
    let dims = cov.dims().to_vec();
    let mut e = DenseTensor::from_fn(dims, |_| rng.std_normal())?;
    for n in 0..cov.dims().len() {
        if let Some(s) = cov.sigma(n) {
            let l = CholeskyFactor::with_context(s, "noise covariance")?;
            e = mode_product(&e, n, l.l())?;
        }
    }
    let sd = cov.scale().sqrt();
    e.data_mut().iter_mut().for_each(|v| *v *= sd);
    Ok(e)
}

/// `M Mᵀ` where `M` has 0.9 on the diagonal and independent ±0.3 elsewhere.
pub fn random_sign_covariance(d: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            0.9
        } else if rng.uniform() < 0.5 {
            0.3
        } else {
            -0.3
        }
    });
    let s = &m * m.transpose();
    (&s + s.transpose()) * 0.5
}

/// Unit diagonal, constant off-diagonal `rho`.
pub fn compound_symmetry(d: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho })
}

fn true_covariance(design: &SimDesign, rng: &mut RngStream) -> Result<Option<SeparableCovariance>> {
    let d = &design.dims;
    match design.study {
        Study::One => Ok(None),
        Study::Two => {
            if d.len() != 3 {
                return Err(Error::Shape("design 2 needs a 3-way tensor".into()));
            }
            let s1 = DMatrix::from_diagonal_element(d[0], d[0], 0.5);
            let s2 = random_sign_covariance(d[1], rng);
            let s3 = random_sign_covariance(d[2], rng);
            SeparableCovariance::from_parts(d, vec![Some(s1), Some(s2), Some(s3)], 1.0).map(Some)
        }
        Study::Three => {
            if d.len() != 3 {
                return Err(Error::Shape("design 3 needs a 3-way tensor".into()));
            }
            let s2 = compound_symmetry(d[1], 0.15);
            SeparableCovariance::from_parts(d, vec![None, Some(s2), None], 1.0).map(Some)
        }
    }
}

/// Generates truth, noise and mask for `design`. Each ingredient uses its
/// own stream derived from the seed.
pub fn generate(design: &SimDesign) -> Result<SimData> {
    if design.rank == 0 {
        return Err(Error::InvalidRank {
            rank: 0,
            reason: "rank must be at least 1".into(),
        });
    }
    let stream = |tag| RngStream::new(derive_seed(design.seed, &[tag]), 0);
    let mut rf = stream(TAG_FACTORS);
    let factors: Vec<DMatrix<f64>> = design
        .dims
        .iter()
        .map(|&d| DMatrix::from_fn(d, design.rank, |_, _| rf.std_normal()))
        .collect();
    let signal = cp_reconstruct(&CpModel::new(factors)?);
    let covariance = true_covariance(design, &mut stream(TAG_COV))?;
    let mut rn = stream(TAG_NOISE);
    let noise = match &covariance {
        Some(c) => sample_tensor_normal(c, &mut rn)?,
        None => {
            let s = design.sigma;
            DenseTensor::from_fn(design.dims.clone(), |_| s * rn.std_normal())?
        }
    };
    let truth = DenseTensor::new(
        design.dims.clone(),
        signal
            .data()
            .iter()
            .zip(noise.data())
            .map(|(a, b)| a + b)
            .collect(),
    )?;
    let missing = design.missing.draw(&design.dims, &mut stream(TAG_MASK))?;
    let observed = MaskedTensor::mask(&truth, &missing)?;
    Ok(SimData {
        truth,
        signal,
        observed,
        covariance,
    })
}

pub fn gen_study1(dims: &[usize], sigma: f64, missing: Missingness, seed: u64) -> Result<SimData> {
    let mut d = SimDesign::new(Study::One, dims.to_vec(), missing, seed);
    d.sigma = sigma;
    generate(&d)
}

pub fn gen_study2(dims: &[usize], missing: Missingness, seed: u64) -> Result<SimData> {
    generate(&SimDesign::new(Study::Two, dims.to_vec(), missing, seed))
}

pub fn gen_study3(dims: &[usize], missing: Missingness, seed: u64) -> Result<SimData> {
    generate(&SimDesign::new(Study::Three, dims.to_vec(), missing, seed))
}

/// Random linear functionals of fibers along `mode`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberFunctional {
    pub mode: usize,
    pub betas: Vec<DVector<f64>>,
}

impl FiberFunctional {
    /// `count` coefficient vectors with i.i.d. standard normal entries.
    pub fn new(mode: usize, len: usize, count: usize, seed: u64) -> Self {
        let mut rng = RngStream::new(derive_seed(seed, &[TAG_BETA]), 0);
        let betas = (0..count)
            .map(|_| DVector::from_fn(len, |_, _| rng.std_normal()))
            .collect();
        Self { mode, betas }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalMetrics {
    /// Fibers containing at least one missing entry.
    pub n_fibers: usize,
    /// Mean over coefficients of the mean squared error over fibers.
    pub mse: f64,
    /// Mean over coefficients of the fraction of fibers covered.
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_missing: usize,
    /// Median over missing entries of the squared error of the point
    /// estimate.
    pub median_se: f64,
    pub mean_se: f64,
    /// `Σ (x̂ − x)² / Σ x²` over missing entries.
    pub relative_mse: f64,
    /// Fraction of 95% intervals containing the truth; `None` when every
    /// interval has zero width.
    pub coverage: Option<f64>,
    pub functional: Option<FunctionalMetrics>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Error metrics for point estimates at `missing` (no intervals).
pub fn point_metrics(truth: &DenseTensor, missing: &[usize], estimate: &[f64]) -> Result<Metrics> {
    if missing.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "{} estimates for {} missing entries",
            estimate.len(),
            missing.len()
        )));
    }
    if missing.is_empty() {
        return Err(Error::InvalidParameter("no missing entries to evaluate".into()));
    }
    if let Some(&m) = missing.iter().find(|&&m| m >= truth.len()) {
        return Err(Error::Shape(format!("missing offset {m} outside the tensor")));
    }
    let mut se: Vec<f64> = missing
        .iter()
        .zip(estimate)
        .map(|(&m, e)| (e - truth.data()[m]).powi(2))
        .collect();
    let total: f64 = se.iter().sum();
    let norm: f64 = missing.iter().map(|&m| truth.data()[m].powi(2)).sum();
    Ok(Metrics {
        n_missing: missing.len(),
        mean_se: total / se.len() as f64,
        relative_mse: total / norm.max(f64::MIN_POSITIVE),
        median_se: median(&mut se),
        coverage: None,
        functional: None,
    })
}

fn interval_coverage(truth: &[f64], s: &[EntrySummary]) -> Option<f64> {
    if s.iter().all(|e| e.q975 == e.q025) {
        return None;
    }
    let hit = truth
        .iter()
        .zip(s)
        .filter(|(t, e)| e.q025 <= **t && **t <= e.q975)
        .count();
    Some(hit as f64 / truth.len() as f64)
}

/// Entrywise MSE and coverage of the posterior draws, and fiber-functional
/// metrics when `functional` is given. The point estimate is the posterior
/// mean of the draws; observed entries of a fiber are taken from `truth`.
pub fn evaluate_run(
    truth: &DenseTensor,
    draws: &ImputationDraws,
    functional: Option<&FiberFunctional>,
) -> Result<Metrics> {
    if draws.dims != truth.dims() {
        return Err(Error::Shape(format!(
            "draws for dims {:?}, truth has {:?}",
            draws.dims,
            truth.dims()
        )));
    }
    if draws.n_draws() == 0 {
        return Err(Error::InvalidParameter("no retained draws".into()));
    }
    let mut m = point_metrics(truth, &draws.missing, &draws.posterior_mean())?;
    let t_miss: Vec<f64> = draws.missing.iter().map(|&l| truth.data()[l]).collect();
    m.coverage = interval_coverage(&t_miss, &draws.summaries());
    if let Some(f) = functional {
        m.functional = Some(functional_metrics(truth, draws, f)?);
    }
    Ok(m)
}

fn functional_metrics(
    truth: &DenseTensor,
    draws: &ImputationDraws,
    f: &FiberFunctional,
) -> Result<FunctionalMetrics> {
    let dims = truth.dims();
    if f.mode >= dims.len() {
        return Err(Error::ModeOutOfRange {
            mode: f.mode,
            order: dims.len(),
        });
    }
    let len = dims[f.mode];
    if f.betas.iter().any(|b| b.len() != len) {
        return Err(Error::Shape(format!("coefficients must have length {len}")));
    }
    let stride = strides(dims)[f.mode];
    // Fibers with a missing entry: start offset and missing positions.
    let mut fibers: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for start in 0..truth.len() {
        if multi_index(dims, start)[f.mode] != 0 {
            continue;
        }
        let miss: Vec<(usize, usize)> = (0..len)
            .filter_map(|j| draws.position(start + j * stride).map(|p| (j, p)))
            .collect();
        if !miss.is_empty() {
            fibers.push((start, miss));
        }
    }
    if fibers.is_empty() {
        return Err(Error::InvalidParameter(
            "no fiber along the functional mode has a missing entry".into(),
        ));
    }
    let nb = f.betas.len() as f64;
    let nf = fibers.len() as f64;
    let mut mse = 0.0;
    let mut cover = 0.0;
    for beta in &f.betas {
        let mut se = 0.0;
        let mut hit = 0usize;
        for (start, miss) in &fibers {
            let truth_val: f64 = (0..len).map(|j| beta[j] * truth.data()[start + j * stride]).sum();
            // Only missing positions vary across draws.
            let observed_part: f64 = (0..len)
                .filter(|j| !miss.iter().any(|(mj, _)| mj == j))
                .map(|j| beta[j] * truth.data()[start + j * stride])
                .sum();
            let vals: Vec<f64> = draws
                .draws
                .iter()
                .map(|d| observed_part + miss.iter().map(|&(j, p)| beta[j] * d[p]).sum::<f64>())
                .collect();
            let s = summarize(&vals);
            se += (s.mean - truth_val).powi(2);
            if s.q025 <= truth_val && truth_val <= s.q975 {
                hit += 1;
            }
        }
        mse += se / nf;
        cover += hit as f64 / nf;
    }
    Ok(FunctionalMetrics {
        n_fibers: fibers.len(),
        mse: mse / nb,
        coverage: cover / nb,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[serde(rename = "independent", alias = "indep")]
    Indep,
    Correlated,
    Em,
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Indep => "indep",
            Engine::Correlated => "correlated",
            Engine::Em => "em",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineResult {
    pub engine: Engine,
    pub metrics: Metrics,
    /// Metrics of the low-rank mean alone (samplers only).
    pub low_rank: Option<Metrics>,
    /// `None` for EM or single-chain runs.
    pub converged: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub seed: u64,
    pub missing_fraction: f64,
    pub results: Vec<EngineResult>,
}

/// Generates one replicate and fits each engine at the design rank.
/// Functionals (along mode 2) are evaluated for design 3.
pub fn run_replicate(
    design: &SimDesign,
    engines: &[Engine],
    mcmc: &McmcConfig,
) -> Result<ReplicateResult> {
    let data = generate(design)?;
    let functional = (design.study == Study::Three)
        .then(|| FiberFunctional::new(1, design.dims[1], 100, design.seed));
    let fit_seed = derive_seed(design.seed, &[TAG_FIT]);
    let cfg = McmcConfig {
        seed: fit_seed,
        ..mcmc.clone()
    };
    let mut results = Vec::new();
    for &engine in engines {
        let r = match engine {
            Engine::Em => {
                let mut rng = RngStream::new(fit_seed, 0);
                let fit = em_impute(&data.observed, &EmConfig::new(design.rank), &mut rng)?;
                let est = fit.imputed(&data.observed);
                EngineResult {
                    engine,
                    metrics: point_metrics(&data.truth, data.observed.missing(), &est)?,
                    low_rank: None,
                    converged: None,
                }
            }
            Engine::Indep | Engine::Correlated => {
                let run = if engine == Engine::Indep {
                    run_indep(&data.observed, design.rank, &cfg)?
                } else {
                    run_sep(&data.observed, design.rank, &cfg, &default_policies(design.dims.len()))?
                        .run
                };
                EngineResult {
                    engine,
                    metrics: evaluate_run(&data.truth, &run.draws, functional.as_ref())?,
                    low_rank: Some(point_metrics(
                        &data.truth,
                        &run.draws.missing,
                        &run.low_rank_mean,
                    )?),
                    converged: run.convergence.as_ref().map(|c| c.converged),
                }
            }
        };
        results.push(r);
    }
    Ok(ReplicateResult {
        seed: design.seed,
        missing_fraction: data.observed.missing().len() as f64 / data.truth.len() as f64,
        results,
    })
}

/// Medians over replicates of per-replicate metrics for one engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineSummary {
    pub engine: Engine,
    pub replicates: usize,
    pub median_se: f64,
    pub mean_se: f64,
    pub relative_mse: f64,
    pub coverage: Option<f64>,
    pub low_rank_median_se: Option<f64>,
    pub functional_mse: Option<f64>,
    pub functional_coverage: Option<f64>,
    /// Fraction of replicates whose chains passed the SRF check.
    pub converged_fraction: Option<f64>,
}

fn median_of(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| median(&mut v))
}

pub fn summarize_replicates(reps: &[ReplicateResult], engine: Engine) -> Option<EngineSummary> {
    let rs: Vec<&EngineResult> = reps
        .iter()
        .flat_map(|r| r.results.iter().filter(|e| e.engine == engine))
        .collect();
    if rs.is_empty() {
        return None;
    }
    let conv: Vec<bool> = rs.iter().filter_map(|r| r.converged).collect();
    Some(EngineSummary {
        engine,
        replicates: rs.len(),
        median_se: median_of(rs.iter().map(|r| Some(r.metrics.median_se)))?,
        mean_se: median_of(rs.iter().map(|r| Some(r.metrics.mean_se)))?,
        relative_mse: median_of(rs.iter().map(|r| Some(r.metrics.relative_mse)))?,
        coverage: median_of(rs.iter().map(|r| r.metrics.coverage)),
        low_rank_median_se: median_of(rs.iter().map(|r| r.low_rank.as_ref().map(|m| m.median_se))),
        functional_mse: median_of(
            rs.iter()
                .map(|r| r.metrics.functional.as_ref().map(|f| f.mse)),
        ),
        functional_coverage: median_of(
            rs.iter()
                .map(|r| r.metrics.functional.as_ref().map(|f| f.coverage)),
        ),
        converged_fraction: (!conv.is_empty())
            .then(|| conv.iter().filter(|&&c| c).count() as f64 / conv.len() as f64),
    })
}

/// Runs `replicates` replicates in parallel; replicate `k` uses the seed
/// derived from `(design.seed, k)`.
pub fn run_study(
    design: &SimDesign,
    replicates: usize,
    engines: &[Engine],
    mcmc: &McmcConfig,
) -> Result<Vec<ReplicateResult>> {
    (0..replicates as u64)
        .into_par_iter()
        .map(|k| run_replicate(&design.with_seed(derive_seed(design.seed, &[k])), engines, mcmc))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_missing_fraction() {
        let mut rng = RngStream::new(1, 0);
        let m = Missingness::Entry { p: 0.2 }.draw(&[10, 10, 10], &mut rng).unwrap();
        let frac = m.len() as f64 / 1000.0;
        assert!((frac - 0.2).abs() < 0.03, "{frac}");
    }

    #[test]
    fn fiber_missing_removes_whole_fibers() {
        let dims = [4, 5, 6];
        let mut rng = RngStream::new(2, 0);
        let m = Missingness::Fiber { mode: 2, p: 0.5 }.draw(&dims, &mut rng).unwrap();
        let set: std::collections::HashSet<usize> = m.iter().copied().collect();
        for i in 0..4 {
            for j in 0..5 {
                let n = (0..6).filter(|&k| set.contains(&(i + 4 * j + 20 * k))).count();
                assert!(n == 0 || n == 6);
            }
        }
    }

    #[test]
    fn bad_probability() {
        let mut rng = RngStream::new(1, 0);
        assert!(Missingness::Entry { p: 1.0 }.draw(&[3, 3], &mut rng).is_err());
        assert!(Missingness::Entry { p: 0.0 }.draw(&[3, 3], &mut rng).is_err());
    }

    #[test]
    fn generators_are_reproducible() {
        let mis = Missingness::Entry { p: 0.3 };
        let a = gen_study2(&[5, 4, 3], mis, 9).unwrap();
        let b = gen_study2(&[5, 4, 3], mis, 9).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.observed, b.observed);
        assert_eq!(a.covariance, b.covariance);
        let c = gen_study2(&[5, 4, 3], mis, 10).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn compound_symmetry_spectrum() {
        let s = compound_symmetry(10, 0.15);
        let mut ev: Vec<f64> = s.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[9] - (1.0 + 0.15 * 9.0)).abs() < 1e-12);
        assert!(ev[..9].iter().all(|e| (e - 0.85).abs() < 1e-12));
    }

    #[test]
    fn perfect_draws() {
        let truth = DenseTensor::from_fn(vec![2, 2], |i| (i[0] + 2 * i[1]) as f64).unwrap();
        let mut d = ImputationDraws::new(vec![2, 2], vec![1, 2]);
        d.push(0, vec![1.0, 2.0]);
        d.push(0, vec![1.0, 2.0]);
        let m = evaluate_run(&truth, &d, None).unwrap();
        assert_eq!(m.median_se, 0.0);
        assert_eq!(m.coverage, None);
    }

    #[test]
    fn evaluate_rejects_mismatch() {
        let truth = DenseTensor::zeros(vec![2, 2]).unwrap();
        let d = ImputationDraws::new(vec![2, 3], vec![1]);
        assert!(evaluate_run(&truth, &d, None).is_err());
    }
}
