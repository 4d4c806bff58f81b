//! Compositional summaries of imputed tensors: clr transform, Shannon
//! diversity of taxa fibers, diversity trends over time with three
//! interval constructions, and data diagnostics.
//!
//! Tensors here are 3-way with a subject mode, a time mode and a taxa
//! mode; a "fiber" is the taxa vector of one subject at one time.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::draws::{quantile_sorted, ImputationDraws};
use crate::error::{Error, Result};
use crate::random::{derive_seed, RngStream};
use crate::tensor::{linear_index, DenseTensor, MaskedTensor};

/// Default pseudo count added before taking logs.
pub const DEFAULT_PSEUDO: f64 = 0.5;

/// Per column: proportions of `count + pseudo`, then log minus mean log.
pub fn clr_transform(counts: &DMatrix<f64>, pseudo: f64) -> Result<DMatrix<f64>> {
    if !(pseudo > 0.0 && pseudo.is_finite()) {
        return Err(Error::InvalidParameter(format!("pseudo count must be positive, got {pseudo}")));
    }
    if let Some(v) = counts.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("counts must be finite and non-negative, got {v}")));
    }
    let mut out = counts.map(|c| (c + pseudo).ln());
    for mut col in out.column_iter_mut() {
        // Dividing by the total only shifts every log by the same amount.
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    Ok(out)
}

/// `−Σ p_j log p_j` with `p = softmax(clr)`.
pub fn shannon_diversity(clr: &[f64]) -> f64 {
    let max = clr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = clr.iter().map(|c| (c - max).exp()).collect();
    let z: f64 = w.iter().sum();
    let lz = z.ln();
    let h = -w
        .iter()
        .zip(clr)
        .map(|(wi, c)| if *wi > 0.0 { wi / z * (c - max - lz) } else { 0.0 })
        .sum::<f64>();
    h.clamp(0.0, (clr.len() as f64).ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendMethod {
    /// Impute at the posterior mean, then a t-interval over subjects.
    Point,
    /// t-interval over subjects whose fiber is observed.
    Observed,
    /// Per-draw simulated population mean; quantiles over draws.
    Mi,
}

impl TrendMethod {
    pub fn name(&self) -> &'static str {
        match self {
            TrendMethod::Point => "point",
            TrendMethod::Observed => "observed",
            TrendMethod::Mi => "mi",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendOptions {
    pub method: TrendMethod,
    /// 0-based.
    pub time_mode: usize,
    /// 0-based.
    pub taxa_mode: usize,
    pub level: f64,
    /// Scale the simulated mean by `sd` rather than `sd/√n`.
    pub verbatim: bool,
    pub seed: u64,
}

impl TrendOptions {
    pub fn new(method: TrendMethod, time_mode: usize, taxa_mode: usize) -> Self {
        Self {
            method,
            time_mode,
            taxa_mode,
            level: 0.95,
            verbatim: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    /// 0-based time index.
    pub time: usize,
    /// `None` when no subject is usable at this time.
    pub point: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Subjects with a fully observed fiber.
    pub n_observed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityTrend {
    pub method: TrendMethod,
    pub level: f64,
    pub rows: Vec<TrendRow>,
}

struct Layout {
    dims: Vec<usize>,
    subject_mode: usize,
    time_mode: usize,
    taxa_mode: usize,
}

impl Layout {
    fn new(dims: &[usize], time_mode: usize, taxa_mode: usize) -> Result<Self> {
        if dims.len() != 3 {
            return Err(Error::Shape(format!(
                "diversity needs a 3-way tensor, got order {}",
                dims.len()
            )));
        }
        for m in [time_mode, taxa_mode] {
            if m >= 3 {
                return Err(Error::ModeOutOfRange { mode: m, order: 3 });
            }
        }
        if time_mode == taxa_mode {
            return Err(Error::InvalidParameter("time and taxa modes must differ".into()));
        }
        Ok(Self {
            dims: dims.to_vec(),
            subject_mode: 3 - time_mode - taxa_mode,
            time_mode,
            taxa_mode,
        })
    }

    fn subjects(&self) -> usize {
        self.dims[self.subject_mode]
    }

    fn times(&self) -> usize {
        self.dims[self.time_mode]
    }

    fn fiber(&self, subject: usize, time: usize) -> Vec<usize> {
        let mut idx = [0; 3];
        idx[self.subject_mode] = subject;
        idx[self.time_mode] = time;
        (0..self.dims[self.taxa_mode])
            .map(|j| {
                idx[self.taxa_mode] = j;
                linear_index(&self.dims, &idx)
            })
            .collect()
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = if x.len() > 1 {
        (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

fn t_quantile(df: f64, p: f64) -> Result<f64> {
    let t = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidParameter(format!("t distribution: {e}")))?;
    Ok(t.inverse_cdf(p))
}

/// Classical `mean ± t_{n−1} sd/√n`; bounds unavailable with one value.
fn t_interval(x: &[f64], level: f64) -> Result<(f64, Option<f64>, Option<f64>)> {
    let (m, sd) = mean_sd(x);
    if x.len() < 2 {
        return Ok((m, None, None));
    }
    let n = x.len() as f64;
    let h = t_quantile(n - 1.0, 0.5 + level / 2.0)? * sd / n.sqrt();
    Ok((m, Some(m - h), Some(m + h)))
}

fn fiber_values(
    data: &MaskedTensor,
    fiber: &[usize],
    fill: impl Fn(usize) -> f64,
) -> Vec<f64> {
    fiber
        .iter()
        .map(|&l| if data.is_observed(l) { data.raw()[l] } else { fill(l) })
        .collect()
}

/// Mean Shannon diversity over subjects at each time point with an
/// interval built by `opts.method`.
pub fn diversity_trend(
    data: &MaskedTensor,
    draws: Option<&ImputationDraws>,
    opts: &TrendOptions,
) -> Result<DiversityTrend> {
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must be in (0, 1), got {}", opts.level)));
    }
    let lay = Layout::new(data.dims(), opts.time_mode, opts.taxa_mode)?;
    let needs_draws = opts.method != TrendMethod::Observed;
    let draws = match (draws, needs_draws) {
        (Some(d), _) => {
            if d.dims != data.dims() || d.missing != data.missing() {
                return Err(Error::Shape("draws do not match the data mask".into()));
            }
            if needs_draws && d.n_draws() == 0 && !d.missing.is_empty() {
                return Err(Error::InvalidParameter("no retained draws".into()));
            }
            Some(d)
        }
        (None, true) if !data.missing().is_empty() => {
            return Err(Error::InvalidParameter(format!(
                "method {} needs imputation draws",
                opts.method.name()
            )));
        }
        (None, _) => None,
    };
    let post_mean = draws.map(|d| d.posterior_mean());
    let lookup = |l: usize, row: &[f64]| -> f64 {
        let p = draws
            .and_then(|d| d.position(l))
            .expect("missing entry has a draw");
        row[p]
    };
    let lo_p = 0.5 - opts.level / 2.0;
    let hi_p = 0.5 + opts.level / 2.0;
    let ns = lay.subjects();
    let mut rows = Vec::with_capacity(lay.times());
    for k in 0..lay.times() {
        let fibers: Vec<Vec<usize>> = (0..ns).map(|s| lay.fiber(s, k)).collect();
        let observed: Vec<&Vec<usize>> = fibers
            .iter()
            .filter(|f| f.iter().all(|&l| data.is_observed(l)))
            .collect();
        let n_observed = observed.len();
        let row = match opts.method {
            TrendMethod::Observed => {
                if n_observed == 0 {
                    TrendRow {
                        time: k,
                        point: None,
                        lower: None,
                        upper: None,
                        n_observed,
                    }
                } else {
                    let a: Vec<f64> = observed
                        .iter()
                        .map(|f| shannon_diversity(&fiber_values(data, f, |_| f64::NAN)))
                        .collect();
                    let (m, lo, hi) = t_interval(&a, opts.level)?;
                    TrendRow {
                        time: k,
                        point: Some(m),
                        lower: lo,
                        upper: hi,
                        n_observed,
                    }
                }
            }
            TrendMethod::Point => {
                let pm = post_mean.as_deref().unwrap_or(&[]);
                let a: Vec<f64> = fibers
                    .iter()
                    .map(|f| shannon_diversity(&fiber_values(data, f, |l| lookup(l, pm))))
                    .collect();
                let (m, lo, hi) = t_interval(&a, opts.level)?;
                TrendRow {
                    time: k,
                    point: Some(m),
                    lower: lo,
                    upper: hi,
                    n_observed,
                }
            }
            TrendMethod::Mi => {
                let mut rng = RngStream::new(derive_seed(opts.seed, &[k as u64]), 0);
                let t_dist = (ns > 1)
                    .then(|| StudentT::new((ns - 1) as f64))
                    .transpose()
                    .map_err(|e| Error::InvalidParameter(format!("t distribution: {e}")))?;
                let draw_rows: Vec<&[f64]> = match draws {
                    Some(d) if d.n_draws() > 0 => d.draws.iter().map(Vec::as_slice).collect(),
                    _ => vec![&[]],
                };
                let mut sims = Vec::with_capacity(draw_rows.len());
                let mut means = 0.0;
                for row in &draw_rows {
                    let a: Vec<f64> = fibers
                        .iter()
                        .map(|f| shannon_diversity(&fiber_values(data, f, |l| lookup(l, row))))
                        .collect();
                    let (m, sd) = mean_sd(&a);
                    let se = if opts.verbatim { sd } else { sd / (ns as f64).sqrt() };
                    let t = t_dist.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                    sims.push(m + se * t);
                    means += m;
                }
                let point = means / draw_rows.len() as f64;
                sims.sort_by(f64::total_cmp);
                TrendRow {
                    time: k,
                    point: Some(point),
                    lower: Some(quantile_sorted(&sims, lo_p).min(point)),
                    upper: Some(quantile_sorted(&sims, hi_p).max(point)),
                    n_observed,
                }
            }
        };
        rows.push(row);
    }
    Ok(DiversityTrend {
        method: opts.method,
        level: opts.level,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShannonMetrics {
    /// Fibers with at least one missing entry.
    pub n_fibers: usize,
    /// Mean squared error of the posterior-mean diversity.
    pub mse: f64,
    /// Fraction of 95% draw intervals containing the true diversity.
    pub coverage: f64,
}

/// Accuracy of imputed Shannon diversity for every (subject, time) fiber
/// with a missing entry, against the complete tensor `truth`.
pub fn shannon_metrics(
    truth: &DenseTensor,
    draws: &ImputationDraws,
    time_mode: usize,
    taxa_mode: usize,
) -> Result<ShannonMetrics> {
    let lay = Layout::new(truth.dims(), time_mode, taxa_mode)?;
    if draws.dims != truth.dims() || draws.n_draws() == 0 {
        return Err(Error::Shape("draws do not match the truth tensor".into()));
    }
    let mut se = 0.0;
    let mut hit = 0;
    let mut n = 0;
    for s in 0..lay.subjects() {
        for k in 0..lay.times() {
            let fiber = lay.fiber(s, k);
            if fiber.iter().all(|&l| draws.position(l).is_none()) {
                continue;
            }
            let true_vals: Vec<f64> = fiber.iter().map(|&l| truth.data()[l]).collect();
            let alpha = shannon_diversity(&true_vals);
            let mut sims: Vec<f64> = draws
                .draws
                .iter()
                .map(|row| {
                    let v: Vec<f64> = fiber
                        .iter()
                        .map(|&l| draws.position(l).map_or(truth.data()[l], |p| row[p]))
                        .collect();
                    shannon_diversity(&v)
                })
                .collect();
            let mean = sims.iter().sum::<f64>() / sims.len() as f64;
            sims.sort_by(f64::total_cmp);
            se += (mean - alpha).powi(2);
            if quantile_sorted(&sims, 0.025) <= alpha && alpha <= quantile_sorted(&sims, 0.975) {
                hit += 1;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidParameter("no fiber has a missing entry".into()));
    }
    Ok(ShannonMetrics {
        n_fibers: n,
        mse: se / n as f64,
        coverage: hit as f64 / n as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub below: usize,
    pub above: usize,
}

/// Counts of standardized observed values in `edges` bins (right-open,
/// last bin closed). Standardization is global or, with `per_taxon`,
/// within each taxon along `taxa_mode`; taxa with zero spread are skipped.
pub fn standardized_histogram(
    data: &MaskedTensor,
    taxa_mode: usize,
    per_taxon: bool,
    edges: &[f64],
) -> Result<Histogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("bin edges must be increasing".into()));
    }
    if taxa_mode >= data.order() {
        return Err(Error::ModeOutOfRange {
            mode: taxa_mode,
            order: data.order(),
        });
    }
    let dims = data.dims().to_vec();
    let groups: Vec<Vec<f64>> = if per_taxon {
        let mut g = vec![Vec::new(); dims[taxa_mode]];
        for l in data.observed_indices() {
            let j = crate::tensor::multi_index(&dims, l)[taxa_mode];
            g[j].push(data.raw()[l]);
        }
        g
    } else {
        vec![data.observed_indices().map(|l| data.raw()[l]).collect()]
    };
    let mut h = Histogram {
        edges: edges.to_vec(),
        counts: vec![0; edges.len() - 1],
        below: 0,
        above: 0,
    };
    let last = *edges.last().expect("two edges");
    for g in groups {
        if g.len() < 2 {
            continue;
        }
        let (m, sd) = mean_sd(&g);
        if !(sd > 0.0) {
            continue;
        }
        for v in g {
            let z = (v - m) / sd;
            if z < edges[0] {
                h.below += 1;
            } else if z > last {
                h.above += 1;
            } else {
                let b = edges.partition_point(|&e| e <= z).clamp(1, edges.len() - 1) - 1;
                h.counts[b] += 1;
            }
        }
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeCorrelation {
    pub time: usize,
    /// Subjects with a fully observed fiber at this time.
    pub n_subjects: usize,
    /// Taxa × taxa Pearson correlations; `None` where a taxon is constant.
    pub matrix: Vec<Vec<Option<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub slices: Vec<TimeCorrelation>,
    /// Time indices skipped for having fewer than two observed subjects.
    pub skipped: Vec<usize>,
}

/// Per time point, the taxa correlation matrix over subjects whose fiber
/// is fully observed.
pub fn time_correlations(data: &MaskedTensor, time_mode: usize, taxa_mode: usize) -> Result<CorrelationReport> {
    let lay = Layout::new(data.dims(), time_mode, taxa_mode)?;
    let nt = lay.dims[taxa_mode];
    let mut slices = Vec::new();
    let mut skipped = Vec::new();
    for k in 0..lay.times() {
        let rows: Vec<Vec<f64>> = (0..lay.subjects())
            .map(|s| lay.fiber(s, k))
            .filter(|f| f.iter().all(|&l| data.is_observed(l)))
            .map(|f| f.iter().map(|&l| data.raw()[l]).collect())
            .collect();
        if rows.len() < 2 {
            skipped.push(k);
            continue;
        }
        let n = rows.len() as f64;
        let stats: Vec<(f64, f64)> = (0..nt)
            .map(|j| {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                mean_sd(&col)
            })
            .collect();
        let matrix = (0..nt)
            .map(|a| {
                (0..nt)
                    .map(|b| {
                        let (ma, sa) = stats[a];
                        let (mb, sb) = stats[b];
                        if !(sa > 0.0 && sb > 0.0) {
                            return None;
                        }
                        let cov = rows.iter().map(|r| (r[a] - ma) * (r[b] - mb)).sum::<f64>() / (n - 1.0);
                        Some((cov / (sa * sb)).clamp(-1.0, 1.0))
                    })
                    .collect()
            })
            .collect();
        slices.push(TimeCorrelation {
            time: k,
            n_subjects: rows.len(),
            matrix,
        });
    }
    Ok(CorrelationReport { slices, skipped })
}
