//! MCMC configuration, posterior draw storage and the multi-chain driver
//! shared by both Gibbs engines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::select::{convergence_report, ConvergenceReport, RosterPolicy};
use crate::tensor::Centering;

/// How chain factors are initialized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// Frequentist EM fit (its ALS start is drawn from the chain's stream).
    #[default]
    Em,
    /// Factor entries i.i.d. standard normal.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub thin: usize,
    pub seed: u64,
    pub init: InitStrategy,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            burn_in: 500,
            chains: 2,
            thin: 1,
            seed: 0,
            init: InitStrategy::Em,
        }
    }
}

impl McmcConfig {
    pub fn new(iterations: usize, burn_in: usize, chains: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in,
            chains,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.chains == 0 {
            return Err(Error::Config("need at least one chain".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether 1-based iteration `iter` is kept.
    pub fn keeps(&self, iter: usize) -> bool {
        iter > self.burn_in && (iter - self.burn_in - 1) % self.thin == 0
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.burn_in + 1..=self.iterations)
            .filter(|&i| self.keeps(i))
            .count()
    }
}

/// Nearest-rank empirical quantile (`x_(⌈p n⌉)`, first order statistic at
/// `p = 0`). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Mean, sample sd (0 for a single value) and nearest-rank quantiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

pub fn summarize(values: &[f64]) -> EntrySummary {
    let n = values.len();
    assert!(n > 0, "summary of zero draws");
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    EntrySummary {
        mean,
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
    }
}

/// Retained posterior draws of the missing entries, on the data scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputationDraws {
    pub dims: Vec<usize>,
    /// Linear offsets of the missing entries, ascending.
    pub missing: Vec<usize>,
    /// One row per retained draw, aligned with `missing`.
    pub draws: Vec<Vec<f64>>,
    /// Chain index of each draw.
    pub chain: Vec<usize>,
}

impl ImputationDraws {
    pub fn new(dims: Vec<usize>, missing: Vec<usize>) -> Self {
        Self {
            dims,
            missing,
            draws: Vec::new(),
            chain: Vec::new(),
        }
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn n_missing(&self) -> usize {
        self.missing.len()
    }

    pub fn push(&mut self, chain: usize, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.missing.len());
        self.draws.push(values);
        self.chain.push(chain);
    }

    /// Draws of the k-th missing entry, optionally restricted to a chain.
    pub fn entry_trace(&self, k: usize, chain: Option<usize>) -> Vec<f64> {
        self.draws
            .iter()
            .zip(&self.chain)
            .filter(|(_, &c)| chain.is_none_or(|want| want == c))
            .map(|(d, _)| d[k])
            .collect()
    }

    pub fn summaries(&self) -> Vec<EntrySummary> {
        (0..self.n_missing())
            .map(|k| summarize(&self.entry_trace(k, None)))
            .collect()
    }

    pub fn posterior_mean(&self) -> Vec<f64> {
        let n = self.n_draws() as f64;
        let mut acc = vec![0.0; self.n_missing()];
        for d in &self.draws {
            for (a, v) in acc.iter_mut().zip(d) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Position of a linear offset in `missing`.
    pub fn position(&self, lin: usize) -> Option<usize> {
        self.missing.binary_search(&lin).ok()
    }
}

/// Monitored scalar traces of one chain over its retained iterations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainTrace {
    pub chain: usize,
    pub scalars: Vec<(String, Vec<f64>)>,
    /// Sweeps in which a design Gram matrix needed jitter or a
    /// pseudo-inverse.
    pub singular_sweeps: usize,
}

/// One state of a Gibbs chain, driven by [`run_chains`].
pub trait ChainSampler: Send {
    /// One full sweep.
    fn step(&mut self) -> Result<()>;
    /// Current imputations of the missing entries, centered scale.
    fn imputed(&self) -> &[f64];
    /// Current low-rank mean at the missing entries, centered scale.
    fn low_rank_at_missing(&self) -> Vec<f64>;
    /// Names and current values of the always-monitored scalars.
    fn monitored(&self) -> Vec<(String, f64)>;
    fn singular_sweeps(&self) -> usize;
    /// Engine-specific values averaged over retained iterations.
    fn extras(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Everything a sampler run returns.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub draws: ImputationDraws,
    /// Posterior mean of the low-rank structure at each missing entry
    /// (the point imputation), data scale.
    pub low_rank_mean: Vec<f64>,
    /// Per-entry summaries of the low-rank structure draws.
    pub low_rank_summary: Vec<EntrySummary>,
    pub traces: Vec<ChainTrace>,
    /// Posterior mean of [`ChainSampler::extras`] over all retained draws.
    pub extras_mean: Vec<f64>,
    /// `None` when only one chain was run.
    pub convergence: Option<ConvergenceReport>,
}

impl RunOutput {
    pub fn summaries(&self) -> Vec<EntrySummary> {
        self.draws.summaries()
    }
}

struct ChainResult {
    draws: Vec<Vec<f64>>,
    low_rank: Vec<Vec<f64>>,
    extras_sum: Vec<f64>,
    trace: ChainTrace,
}

/// Runs `cfg.chains` chains in parallel and merges them in chain order.
/// `make` builds the initial state of chain `c`.
pub fn run_chains<S, F>(
    dims: &[usize],
    missing: &[usize],
    centering: &Centering,
    cfg: &McmcConfig,
    make: F,
) -> Result<RunOutput>
where
    S: ChainSampler,
    F: Fn(usize) -> Result<S> + Sync,
{
    cfg.validate()?;
    let results: Vec<ChainResult> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| -> Result<ChainResult> {
            let mut state = make(c)?;
            let mut draws = Vec::new();
            let mut low_rank = Vec::new();
            let mut scalars: Vec<(String, Vec<f64>)> = Vec::new();
            let mut extras_sum: Vec<f64> = Vec::new();
            for iter in 1..=cfg.iterations {
                state.step()?;
                if !cfg.keeps(iter) {
                    continue;
                }
                draws.push(
                    state
                        .imputed()
                        .iter()
                        .map(|&v| centering.uncenter(v))
                        .collect(),
                );
                low_rank.push(
                    state
                        .low_rank_at_missing()
                        .into_iter()
                        .map(|v| centering.uncenter(v))
                        .collect(),
                );
                let ex = state.extras();
                if extras_sum.is_empty() {
                    extras_sum = vec![0.0; ex.len()];
                }
                for (a, v) in extras_sum.iter_mut().zip(ex) {
                    *a += v;
                }
                let mon = state.monitored();
                if scalars.is_empty() {
                    scalars = mon.iter().map(|(n, _)| (n.clone(), Vec::new())).collect();
                }
                for ((_, tr), (_, v)) in scalars.iter_mut().zip(mon) {
                    tr.push(v);
                }
            }
            Ok(ChainResult {
                draws,
                low_rank,
                extras_sum,
                trace: ChainTrace {
                    chain: c,
                    scalars,
                    singular_sweeps: state.singular_sweeps(),
                },
            })
        })
        .collect::<Result<_>>()?;

    let mut draws = ImputationDraws::new(dims.to_vec(), missing.to_vec());
    let mut low_rank_rows = Vec::new();
    let mut traces = Vec::new();
    let mut extras_mean: Vec<f64> = Vec::new();
    for r in results {
        if extras_mean.is_empty() {
            extras_mean = vec![0.0; r.extras_sum.len()];
        }
        for (a, v) in extras_mean.iter_mut().zip(&r.extras_sum) {
            *a += v;
        }
        let chain = r.trace.chain;
        for d in r.draws {
            draws.push(chain, d);
        }
        low_rank_rows.extend(r.low_rank);
        traces.push(r.trace);
    }
    let total = draws.n_draws() as f64;
    extras_mean.iter_mut().for_each(|a| *a /= total);
    let n_missing = missing.len();
    let low_rank_summary: Vec<EntrySummary> = (0..n_missing)
        .map(|k| summarize(&low_rank_rows.iter().map(|row| row[k]).collect::<Vec<_>>()))
        .collect();
    let low_rank_mean = low_rank_summary.iter().map(|s| s.mean).collect();
    let convergence = if cfg.chains >= 2 {
        let policy = RosterPolicy {
            seed: cfg.seed,
            ..RosterPolicy::default()
        };
        Some(convergence_report(&traces, &draws, &policy)?)
    } else {
        None
    };
    Ok(RunOutput {
        draws,
        low_rank_mean,
        low_rank_summary,
        traces,
        extras_mean,
        convergence,
    })
}
