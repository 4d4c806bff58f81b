//! Cross-validated rank selection and the composite scale reduction
//! factor used to judge chain convergence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{em_impute, EmConfig};
use crate::draws::{ChainTrace, ImputationDraws, McmcConfig};
use crate::error::{Error, Result};
use crate::indep::run_indep;
use crate::random::{derive_seed, RngStream};
use crate::separable::{run_sep, ModePolicy};
use crate::tensor::{multi_index, strides, MaskedTensor};

const ROSTER_TAG: u64 = 0x5246_5253;
const FOLD_TAG: u64 = 0x464f_4c44;

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// Composite scale reduction factor over `K ≥ 2` chains:
/// `K · var(pooled) / Σ_k var(chain k)` with unbiased variances. For two
/// chains this is `2 · Σ(X_i − X̄)²/(n_1+n_2−1)` over the sum of the two
/// within-chain variances.
///
/// Returns `Ok(None)` (degenerate) when some chain has zero or non-finite
/// variance.
pub fn srf_chains(chains: &[&[f64]]) -> Result<Option<f64>> {
    if chains.len() < 2 {
        return Err(Error::TooFewChains {
            needed: 2,
            got: chains.len(),
        });
    }
    if let Some(c) = chains.iter().find(|c| c.len() < 2) {
        return Err(Error::InvalidParameter(format!(
            "each chain needs at least 2 draws, got {}",
            c.len()
        )));
    }
    let within: Vec<f64> = chains.iter().map(|c| sample_variance(c)).collect();
    if within.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Ok(None);
    }
    let pooled: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let num = chains.len() as f64 * sample_variance(&pooled);
    Ok(Some(num / within.iter().sum::<f64>()))
}

/// Two-chain composite SRF.
pub fn srf(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    srf_chains(&[a, b])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RosterPolicy {
    /// Cap on monitored missing-entry traces.
    pub max_entries: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RosterPolicy {
    fn default() -> Self {
        Self {
            max_entries: 100,
            threshold: 1.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrfEntry {
    pub name: String,
    /// `None` when the traces are degenerate.
    pub srf: Option<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub threshold: f64,
    /// Model parameters (`sigma2`, `scale` or log-determinants).
    pub parameters: Vec<SrfEntry>,
    /// Seeded subset of missing-entry traces.
    pub entries: Vec<SrfEntry>,
    /// Largest non-degenerate SRF.
    pub max_srf: Option<f64>,
    pub degenerate: usize,
    pub parameters_converged: bool,
    pub entries_converged: bool,
    /// `max_srf < threshold`.
    pub converged: bool,
}

/// Positions (into the missing list) of the monitored entries: a seeded
/// random subset of size `min(max_entries, n_missing)`, ascending.
pub fn select_roster(n_missing: usize, policy: &RosterPolicy) -> Vec<usize> {
    let k = policy.max_entries.min(n_missing);
    let mut rng = RngStream::new(derive_seed(policy.seed, &[ROSTER_TAG]), 0);
    let mut picked = rand::seq::index::sample(&mut rng, n_missing, k).into_vec();
    picked.sort_unstable();
    picked
}

fn entry_of(name: String, chains: &[Vec<f64>], threshold: f64) -> Result<SrfEntry> {
    let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
    let srf = srf_chains(&refs)?;
    Ok(SrfEntry {
        name,
        srf,
        converged: srf.is_some_and(|v| v < threshold),
    })
}

fn entry_label(dims: &[usize], lin: usize) -> String {
    let idx: Vec<String> = multi_index(dims, lin)
        .iter()
        .map(|i| (i + 1).to_string())
        .collect();
    format!("x[{}]", idx.join(","))
}

/// SRF for every monitored parameter and for a seeded subset of at most
/// `policy.max_entries` missing-entry traces.
pub fn convergence_report(
    traces: &[ChainTrace],
    draws: &ImputationDraws,
    policy: &RosterPolicy,
) -> Result<ConvergenceReport> {
    if traces.len() < 2 {
        return Err(Error::TooFewChains {
            needed: 2,
            got: traces.len(),
        });
    }
    let mut parameters = Vec::new();
    for (s, (name, _)) in traces[0].scalars.iter().enumerate() {
        let chains: Vec<Vec<f64>> = traces.iter().map(|t| t.scalars[s].1.clone()).collect();
        parameters.push(entry_of(name.clone(), &chains, policy.threshold)?);
    }
    let mut entries = Vec::new();
    for k in select_roster(draws.n_missing(), policy) {
        let chains: Vec<Vec<f64>> = traces
            .iter()
            .map(|t| draws.entry_trace(k, Some(t.chain)))
            .collect();
        let label = entry_label(&draws.dims, draws.missing[k]);
        entries.push(entry_of(label, &chains, policy.threshold)?);
    }
    let all = parameters.iter().chain(&entries);
    let max_srf = all.clone().filter_map(|e| e.srf).reduce(f64::max);
    let degenerate = all.filter(|e| e.srf.is_none()).count();
    let group_ok = |g: &[SrfEntry]| {
        g.iter()
            .filter_map(|e| e.srf)
            .all(|v| v < policy.threshold)
    };
    Ok(ConvergenceReport {
        threshold: policy.threshold,
        parameters_converged: group_ok(&parameters),
        entries_converged: group_ok(&entries),
        parameters,
        entries,
        max_srf,
        degenerate,
        converged: max_srf.is_some_and(|v| v < policy.threshold),
    })
}

/// Unit assigned to folds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Holdout {
    /// Individual observed entries.
    #[default]
    Entry,
    /// Whole fibers along the given (0-based) mode.
    Fiber(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub folds: usize,
    pub ranks: Vec<usize>,
    pub holdout: Holdout,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 4,
            ranks: vec![1, 2, 3, 4, 5],
            holdout: Holdout::Entry,
            seed: 0,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("need at least 2 folds".into()));
        }
        if self.ranks.is_empty() || self.ranks.contains(&0) {
            return Err(Error::Config("candidate ranks must be non-empty and ≥ 1".into()));
        }
        Ok(())
    }
}

/// Engine used to fill held-out entries.
#[derive(Clone, Debug, PartialEq)]
pub enum CvEngine {
    Indep(McmcConfig),
    Correlated(McmcConfig, Vec<ModePolicy>),
    Em,
}

/// Splits the observed entries (or the fibers holding any observed entry)
/// into `folds` groups of near-equal size. Each fold lists the linear
/// offsets of its held-out observed entries, ascending.
pub fn assign_folds(t: &MaskedTensor, folds: usize, holdout: Holdout, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config("need at least 2 folds".into()));
    }
    let dims = t.dims();
    // Each unit is a list of observed offsets.
    let units: Vec<Vec<usize>> = match holdout {
        Holdout::Entry => t.observed_indices().map(|i| vec![i]).collect(),
        Holdout::Fiber(mode) => {
            if mode >= dims.len() {
                return Err(Error::ModeOutOfRange {
                    mode,
                    order: dims.len(),
                });
            }
            let stride = strides(dims)[mode];
            let mut units = Vec::new();
            for lin in 0..t.len() {
                if multi_index(dims, lin)[mode] != 0 {
                    continue;
                }
                let fiber: Vec<usize> = (0..dims[mode])
                    .map(|j| lin + j * stride)
                    .filter(|&l| t.is_observed(l))
                    .collect();
                if !fiber.is_empty() {
                    units.push(fiber);
                }
            }
            units
        }
    };
    let mut rng = RngStream::new(derive_seed(seed, &[FOLD_TAG]), 0);
    let order = rand::seq::index::sample(&mut rng, units.len(), units.len()).into_vec();
    let mut out = vec![Vec::new(); folds];
    for (pos, &u) in order.iter().enumerate() {
        out[pos % folds].extend_from_slice(&units[u]);
    }
    for (k, f) in out.iter_mut().enumerate() {
        if f.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "fold {} has no held-out entries ({} units for {folds} folds)",
                k + 1,
                units.len()
            )));
        }
        f.sort_unstable();
    }
    if out.iter().any(|f| f.len() == t.n_observed()) {
        return Err(Error::EmptyObserved);
    }
    Ok(out)
}

/// Fits `rank` with `heldout` additionally masked and returns the point
/// predictions at `heldout` (posterior mean for the samplers). Held-out
/// values are replaced by NaN before fitting, so they cannot leak.
pub fn fold_predictions(
    t: &MaskedTensor,
    heldout: &[usize],
    rank: usize,
    engine: &CvEngine,
    seed: u64,
) -> Result<Vec<f64>> {
    let train = t.with_extra_missing(heldout)?;
    let (missing, values) = match engine {
        CvEngine::Em => {
            let mut rng = RngStream::new(seed, 0);
            let fit = em_impute(&train, &EmConfig::new(rank), &mut rng)?;
            (train.missing().to_vec(), fit.imputed(&train))
        }
        CvEngine::Indep(cfg) => {
            let cfg = McmcConfig {
                seed,
                ..cfg.clone()
            };
            let out = run_indep(&train, rank, &cfg)?;
            (out.draws.missing.clone(), out.draws.posterior_mean())
        }
        CvEngine::Correlated(cfg, policies) => {
            let cfg = McmcConfig {
                seed,
                ..cfg.clone()
            };
            let out = run_sep(&train, rank, &cfg, policies)?;
            (out.run.draws.missing.clone(), out.run.draws.posterior_mean())
        }
    };
    heldout
        .iter()
        .map(|h| {
            missing
                .binary_search(h)
                .map(|p| values[p])
                .map_err(|_| Error::Shape(format!("held-out offset {h} not imputed")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOutcome {
    pub rank: usize,
    /// Sum of squared prediction errors on each fold.
    pub fold_sse: Vec<f64>,
    /// Mean of `fold_sse`; `None` if any fold failed.
    pub mean_sse: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub selected: usize,
    pub outcomes: Vec<RankOutcome>,
}

/// K-fold cross-validation over candidate ranks. Folds are shared across
/// ranks; the fit for `(rank, fold)` uses a seed derived from
/// `(cfg.seed, rank, fold)`. Ties go to the smaller rank.
pub fn cv_select_rank(t: &MaskedTensor, cfg: &CvConfig, engine: &CvEngine) -> Result<CvResult> {
    cfg.validate()?;
    let folds = assign_folds(t, cfg.folds, cfg.holdout, cfg.seed)?;
    let jobs: Vec<(usize, usize)> = cfg
        .ranks
        .iter()
        .flat_map(|&r| (0..folds.len()).map(move |k| (r, k)))
        .collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(rank, k)| {
            let seed = derive_seed(cfg.seed, &[rank as u64, k as u64]);
            let pred = fold_predictions(t, &folds[k], rank, engine, seed)?;
            Ok(folds[k]
                .iter()
                .zip(pred)
                .map(|(&h, p)| (p - t.raw()[h]).powi(2))
                .sum())
        })
        .collect();
    let mut outcomes = Vec::new();
    let mut it = results.into_iter();
    for &rank in &cfg.ranks {
        let mut fold_sse = Vec::new();
        let mut failure = None;
        for _ in 0..folds.len() {
            match it.next().expect("one result per job") {
                Ok(v) => fold_sse.push(v),
                Err(e) => {
                    failure.get_or_insert_with(|| e.to_string());
                }
            }
        }
        let mean_sse = failure
            .is_none()
            .then(|| fold_sse.iter().sum::<f64>() / fold_sse.len() as f64);
        outcomes.push(RankOutcome {
            rank,
            fold_sse,
            mean_sse,
            failure,
        });
    }
    let selected = outcomes
        .iter()
        .filter_map(|o| o.mean_sse.map(|m| (o.rank, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(r, _)| r)
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "every candidate rank failed: {}",
                outcomes
                    .iter()
                    .filter_map(|o| o.failure.as_deref())
                    .collect::<Vec<_>>()
                    .join("; ")
            ))
        })?;
    Ok(CvResult { selected, outcomes })
}
