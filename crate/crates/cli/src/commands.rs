use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use tenmi_core::analysis::{
    diversity_trend, standardized_histogram, time_correlations, TrendMethod, TrendOptions,
};
use tenmi_core::draws::EntrySummary;
use tenmi_core::io::{
    descriptor_path, fmt_value, read_config, read_descriptor, read_draws, read_tensor,
    write_dense, write_descriptor, write_draws, write_json, write_summary, write_tensor,
    Descriptor, RunConfig, FORMAT_VERSION,
};
use tenmi_core::nalgebra::DMatrix;
use tenmi_core::select::{convergence_report, cv_select_rank, CvEngine};
use tenmi_core::separable::{run_sep, SeparableCovariance};
use tenmi_core::sim::{generate, run_study, summarize_replicates, Engine, Missingness, SimDesign, Study};
use tenmi_core::tensor::multi_index;
use tenmi_core::{em_impute, EmConfig, ImputationDraws, MaskedTensor, McmcConfig, RngStream, RunOutput};

use crate::{
    CvArgs, DiagnosticsArgs, DiversityArgs, EngineArg, ImputeArgs, InputArgs, MethodArg,
    MissingKind, SimulateArgs,
};

pub fn report_error(kind: &str, message: &str) {
    let v = json!({ "error": { "kind": kind, "message": message.trim_end() } });
    eprintln!("{v}");
}

pub fn report_anyhow(e: &anyhow::Error) {
    let kind = e
        .chain()
        .find_map(|c| c.downcast_ref::<tenmi_core::Error>())
        .map_or("runtime", error_kind);
    report_error(kind, &format!("{e:#}"));
}

fn error_kind(e: &tenmi_core::Error) -> &'static str {
    use tenmi_core::Error::*;
    match e {
        Shape(_) | ModeOutOfRange { .. } => "shape",
        InvalidRank { .. } => "rank",
        InvalidParameter(_) => "parameter",
        NonFinite(_) => "non_finite",
        EmptyObserved => "empty_observed",
        NotPositiveDefinite { .. } | ConditionalNotPd { .. } => "not_positive_definite",
        ConditionalTooLarge { .. } => "conditional_too_large",
        Parse { .. } => "parse",
        Config(_) => "config",
        TooFewChains { .. } => "chains",
        Io(_) => "io",
        Json(_) => "json",
    }
}

fn load_input(a: &InputArgs) -> Result<(MaskedTensor, Descriptor)> {
    let desc = match &a.descriptor {
        Some(p) => Some(read_descriptor(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let out = read_tensor(&a.input, desc.as_ref())
        .with_context(|| format!("reading {}", a.input.display()))?;
    Ok(out)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn mode_arg(name: &str, m: usize, order: usize) -> Result<usize> {
    if m == 0 || m > order {
        bail!("--{name} {m} is outside 1..={order}");
    }
    Ok(m - 1)
}

struct Manifest {
    command: &'static str,
    started: Instant,
    threads: Option<usize>,
    outputs: Vec<String>,
}

impl Manifest {
    fn new(command: &'static str, threads: Option<usize>) -> Self {
        Self {
            command,
            started: Instant::now(),
            threads,
            outputs: Vec::new(),
        }
    }

    fn add(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    fn finish(mut self, dir: &Path, config: Value, seeds: Value) -> Result<()> {
        self.add("manifest.json");
        let v = json!({
            "format_version": FORMAT_VERSION,
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": config,
            "seeds": seeds,
            "threads": self.threads,
            "wall_time_secs": self.started.elapsed().as_secs_f64(),
            "outputs": self.outputs,
        });
        write_json(&dir.join("manifest.json"), &v)?;
        Ok(())
    }
}

fn out_dir(cli: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    cli.clone()
        .or_else(|| cfg.output.clone())
        .context("no output directory: pass --out or set `output` in the config")
}

fn write_entry_table(path: &Path, dims: &[usize], cells: &[usize], rows: &[EntrySummary]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (1..=dims.len()).map(|k| format!("i{k}")).collect();
    writeln!(w, "{},mean,sd,q025,q975", header.join(","))?;
    for (&lin, s) in cells.iter().zip(rows) {
        let idx: Vec<String> = multi_index(dims, lin).iter().map(|i| (i + 1).to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{}",
            idx.join(","),
            fmt_value(s.mean),
            fmt_value(s.sd),
            fmt_value(s.q025),
            fmt_value(s.q975)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn covariance_json(cov: &[Option<DMatrix<f64>>], scale: f64) -> Value {
    let modes: Vec<Value> = cov
        .iter()
        .map(|m| match m {
            None => json!("identity"),
            Some(m) => json!((0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>())
                .collect::<Vec<_>>()),
        })
        .collect();
    json!({ "format_version": FORMAT_VERSION, "scale": scale, "modes": modes })
}

fn separable_json(cov: &SeparableCovariance) -> Value {
    let parts: Vec<Option<DMatrix<f64>>> =
        (0..cov.dims().len()).map(|n| cov.sigma(n).cloned()).collect();
    covariance_json(&parts, cov.scale())
}

fn write_run(dir: &Path, run: &RunOutput, data: &MaskedTensor, cfg: &RunConfig, m: &mut Manifest) -> Result<()> {
    write_draws(&dir.join("draws.csv"), &run.draws)?;
    m.add("draws.csv");
    write_summary(&dir.join("summary.csv"), &run.draws)?;
    m.add("summary.csv");
    write_entry_table(&dir.join("low_rank.csv"), data.dims(), data.missing(), &run.low_rank_summary)?;
    m.add("low_rank.csv");
    let report = match (&cfg.roster, &run.convergence) {
        (Some(policy), Some(_)) => Some(convergence_report(&run.traces, &run.draws, policy)?),
        (_, r) => r.clone(),
    };
    let conv = match report {
        Some(r) => serde_json::to_value(r)?,
        None => json!({ "converged": null, "note": "single chain: no scale reduction factor" }),
    };
    write_json(&dir.join("convergence.json"), &conv)?;
    m.add("convergence.json");
    Ok(())
}

pub fn impute(a: &ImputeArgs, threads: Option<usize>) -> Result<()> {
    let mut m = Manifest::new("impute", threads);
    let cfg = read_config(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let (data, _) = load_input(&a.input)?;
    let dir = out_dir(&a.out, &cfg)?;
    let rank = cfg.rank()?;
    prepare_out(&dir)?;
    if data.missing().is_empty() {
        bail!("the input has no missing cells to impute");
    }
    match cfg.engine {
        Engine::Indep => {
            let run = tenmi_core::indep::run_indep(&data, rank, &cfg.mcmc)?;
            write_run(&dir, &run, &data, &cfg, &mut m)?;
        }
        Engine::Correlated => {
            let policies = cfg.policies(data.order())?;
            let out = run_sep(&data, rank, &cfg.mcmc, &policies)?;
            write_run(&dir, &out.run, &data, &cfg, &mut m)?;
            write_json(&dir.join("covariance.json"), &covariance_json(&out.sigma_mean, out.scale_mean))?;
            m.add("covariance.json");
        }
        Engine::Em => {
            let mut rng = RngStream::new(cfg.mcmc.seed, 0);
            let fit = em_impute(&data, &EmConfig::new(rank), &mut rng)?;
            let mut draws = ImputationDraws::new(data.dims().to_vec(), data.missing().to_vec());
            draws.push(0, fit.imputed(&data));
            write_draws(&dir.join("draws.csv"), &draws)?;
            m.add("draws.csv");
            write_summary(&dir.join("summary.csv"), &draws)?;
            m.add("summary.csv");
            write_json(
                &dir.join("convergence.json"),
                &json!({ "em_iterations": fit.iterations, "converged": fit.converged }),
            )?;
            m.add("convergence.json");
        }
    }
    let seeds = json!({ "mcmc": cfg.mcmc.seed, "chain_streams": (0..cfg.mcmc.chains).collect::<Vec<_>>() });
    m.finish(&dir, serde_json::to_value(&cfg)?, seeds)
}

pub fn cv_rank(a: &CvArgs, threads: Option<usize>) -> Result<()> {
    let mut m = Manifest::new("cv-rank", threads);
    let cfg = read_config(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let (data, _) = load_input(&a.input)?;
    let dir = out_dir(&a.out, &cfg)?;
    prepare_out(&dir)?;
    let cv = cfg.cv_config()?;
    let engine = match cfg.engine {
        Engine::Indep => CvEngine::Indep(cfg.mcmc.clone()),
        Engine::Correlated => CvEngine::Correlated(cfg.mcmc.clone(), cfg.policies(data.order())?),
        Engine::Em => CvEngine::Em,
    };
    let res = cv_select_rank(&data, &cv, &engine)?;
    let mut w = BufWriter::new(File::create(dir.join("cv.csv"))?);
    writeln!(w, "rank,fold,sse")?;
    for o in &res.outcomes {
        for (f, sse) in o.fold_sse.iter().enumerate() {
            writeln!(w, "{},{},{}", o.rank, f + 1, fmt_value(*sse))?;
        }
    }
    w.flush()?;
    m.add("cv.csv");
    write_json(&dir.join("cv.json"), &res)?;
    m.add("cv.json");
    let seeds = json!({ "cv": cv.seed, "mcmc": cfg.mcmc.seed });
    m.finish(&dir, serde_json::to_value(&cfg)?, seeds)
}

fn engine_of(e: EngineArg) -> Engine {
    match e {
        EngineArg::Independent => Engine::Indep,
        EngineArg::Correlated => Engine::Correlated,
        EngineArg::Em => Engine::Em,
    }
}

#[derive(Serialize)]
struct SimulateEcho<'a> {
    design: &'a SimDesign,
    replicates: Option<usize>,
    engines: Vec<&'static str>,
    mcmc: &'a McmcConfig,
}

pub fn simulate(a: &SimulateArgs, threads: Option<usize>) -> Result<()> {
    let mut m = Manifest::new("simulate", threads);
    let study = Study::from_number(a.study)?;
    let missing = match a.missing {
        MissingKind::Entry => Missingness::Entry { p: a.prob },
        MissingKind::Fiber => Missingness::Fiber {
            mode: mode_arg("fiber-mode", a.fiber_mode, a.dims.len())?,
            p: a.prob,
        },
    };
    let mut design = SimDesign::new(study, a.dims.clone(), missing, a.seed);
    design.rank = a.rank;
    design.sigma = a.sigma;
    let data = generate(&design)?;
    prepare_out(&a.out)?;

    write_dense(&a.out.join("truth.csv"), &data.truth)?;
    m.add("truth.csv");
    write_dense(&a.out.join("signal.csv"), &data.signal)?;
    m.add("signal.csv");
    let masked = a.out.join("masked.csv");
    write_tensor(&masked, &data.observed)?;
    m.add("masked.csv");
    let mut desc = Descriptor::new(a.dims.clone());
    if let MissingKind::Fiber = a.missing {
        desc.fiber_missing_mode = Some(a.fiber_mode);
    }
    write_descriptor(&descriptor_path(&masked), &desc)?;
    m.add("masked.csv.json");
    let cov = match &data.covariance {
        Some(c) => separable_json(c),
        None => json!({ "format_version": FORMAT_VERSION, "iid_sigma": design.sigma }),
    };
    write_json(&a.out.join("covariance.json"), &cov)?;
    m.add("covariance.json");

    let engines: Vec<Engine> = a.engines.iter().map(|&e| engine_of(e)).collect();
    let mcmc = McmcConfig::new(a.iterations, a.burn_in, a.chains, a.seed);
    if let Some(n) = a.replicates {
        if n == 0 {
            bail!("--replicates must be at least 1");
        }
        let reps = run_study(&design, n, &engines, &mcmc)?;
        write_json(&a.out.join("replicates.json"), &reps)?;
        m.add("replicates.json");
        let mut w = BufWriter::new(File::create(a.out.join("metrics.csv"))?);
        writeln!(
            w,
            "engine,replicates,median_se,mean_se,relative_mse,coverage,low_rank_median_se,functional_mse,functional_coverage,converged_fraction"
        )?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), fmt_value);
        for &e in &engines {
            if let Some(s) = summarize_replicates(&reps, e) {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{}",
                    e.name(),
                    s.replicates,
                    fmt_value(s.median_se),
                    fmt_value(s.mean_se),
                    fmt_value(s.relative_mse),
                    opt(s.coverage),
                    opt(s.low_rank_median_se),
                    opt(s.functional_mse),
                    opt(s.functional_coverage),
                    opt(s.converged_fraction)
                )?;
            }
        }
        w.flush()?;
        m.add("metrics.csv");
    }
    let echo = SimulateEcho {
        design: &design,
        replicates: a.replicates,
        engines: engines.iter().map(Engine::name).collect(),
        mcmc: &mcmc,
    };
    let seeds = json!({ "design": a.seed });
    m.finish(&a.out, serde_json::to_value(&echo)?, seeds)
}

pub fn diversity(a: &DiversityArgs, threads: Option<usize>) -> Result<()> {
    let mut m = Manifest::new("diversity", threads);
    let (data, _) = load_input(&a.input)?;
    let order = data.order();
    let method = match a.method {
        MethodArg::Point => TrendMethod::Point,
        MethodArg::Observed => TrendMethod::Observed,
        MethodArg::Mi => TrendMethod::Mi,
    };
    let mut opts = TrendOptions::new(
        method,
        mode_arg("time-mode", a.time_mode, order)?,
        mode_arg("taxa-mode", a.taxa_mode, order)?,
    );
    opts.level = a.level;
    opts.verbatim = a.verbatim;
    opts.seed = a.seed;
    let draws = match &a.draws {
        Some(p) => Some(read_draws(p, &data).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let trend = diversity_trend(&data, draws.as_ref(), &opts)?;
    prepare_out(&a.out)?;
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), fmt_value);
    let mut w = BufWriter::new(File::create(a.out.join("diversity.csv"))?);
    writeln!(w, "time,method,point,lower,upper,n_observed")?;
    for r in &trend.rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.time + 1,
            method.name(),
            opt(r.point),
            opt(r.lower),
            opt(r.upper),
            r.n_observed
        )?;
    }
    w.flush()?;
    m.add("diversity.csv");
    let config = json!({
        "input": a.input.input, "draws": a.draws, "method": method.name(),
        "time_mode": a.time_mode, "taxa_mode": a.taxa_mode, "level": a.level,
        "verbatim": a.verbatim,
    });
    m.finish(&a.out, config, json!({ "diversity": a.seed }))
}

pub fn diagnostics(a: &DiagnosticsArgs, threads: Option<usize>) -> Result<()> {
    let mut m = Manifest::new("diagnostics", threads);
    let (data, _) = load_input(&a.input)?;
    let order = data.order();
    let time = mode_arg("time-mode", a.time_mode, order)?;
    let taxa = mode_arg("taxa-mode", a.taxa_mode, order)?;
    let edges = a
        .edges
        .clone()
        .unwrap_or_else(|| (0..=16).map(|k| -4.0 + 0.5 * k as f64).collect());
    let hist = standardized_histogram(&data, taxa, a.per_taxon, &edges)?;
    let corr = time_correlations(&data, time, taxa)?;
    prepare_out(&a.out)?;

    let mut w = BufWriter::new(File::create(a.out.join("histogram.csv"))?);
    writeln!(w, "lower,upper,count")?;
    writeln!(w, "-inf,{},{}", fmt_value(edges[0]), hist.below)?;
    for (k, c) in hist.counts.iter().enumerate() {
        writeln!(w, "{},{},{c}", fmt_value(edges[k]), fmt_value(edges[k + 1]))?;
    }
    writeln!(w, "{},inf,{}", fmt_value(edges[edges.len() - 1]), hist.above)?;
    w.flush()?;
    m.add("histogram.csv");

    let mut w = BufWriter::new(File::create(a.out.join("correlations.csv"))?);
    writeln!(w, "time,n_subjects,taxon_a,taxon_b,correlation")?;
    for s in &corr.slices {
        for (i, row) in s.matrix.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                let v = c.map_or_else(|| "NA".to_string(), fmt_value);
                writeln!(w, "{},{},{},{},{v}", s.time + 1, s.n_subjects, i + 1, j + 1)?;
            }
        }
    }
    w.flush()?;
    m.add("correlations.csv");
    let skipped: Vec<usize> = corr.skipped.iter().map(|k| k + 1).collect();
    for k in &skipped {
        eprintln!("note: time {k} has fewer than two fully observed subjects; skipped");
    }
    write_json(&a.out.join("skipped.json"), &json!({ "skipped_times": skipped }))?;
    m.add("skipped.json");
    let config = json!({
        "input": a.input.input, "time_mode": a.time_mode, "taxa_mode": a.taxa_mode,
        "per_taxon": a.per_taxon, "edges": edges,
    });
    m.finish(&a.out, config, Value::Null)
}
