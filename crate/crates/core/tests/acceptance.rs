//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria that fail are reported, not hidden. The process exits 0 so the
//! workspace test run stays usable; set `ACCEPTANCE_STRICT=1` to turn any
//! FAIL into a nonzero exit.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use tenmi_core::analysis::{diversity_trend, shannon_metrics, TrendMethod, TrendOptions};
use tenmi_core::indep::run_indep;
use tenmi_core::random::{sample_inverse_gamma, sample_inverse_wishart};
use tenmi_core::select::{cv_select_rank, srf, CvConfig, CvEngine, Holdout};
use tenmi_core::separable::{
    build_conditional_plan, conditional_moments, default_policies, run_sep, ModePolicy,
    SeparableCovariance,
};
use tenmi_core::sim::{
    generate, run_study, summarize_replicates, Engine, EngineSummary, Missingness, SimDesign,
    Study,
};
use tenmi_core::tensor::{khatri_rao_chain, matricize, CpModel, DenseTensor};
use tenmi_core::{ImputationDraws, MaskedTensor, McmcConfig, RngStream};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_pd(d: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.std_normal());
    &m * m.transpose() + DMatrix::identity(d, d) * 0.5
}

/// Dense partition-and-invert conditional of `miss` given `obs`.
fn dense_conditional(
    full: &DMatrix<f64>,
    mean: &[f64],
    values: &[f64],
    miss: &[usize],
    obs: &[usize],
) -> (DVector<f64>, DMatrix<f64>) {
    let sub = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| full[(r[i], c[j])]);
    let mu_m = DVector::from_iterator(miss.len(), miss.iter().map(|&l| mean[l]));
    let s11 = sub(miss, miss);
    if obs.is_empty() {
        return (mu_m, s11);
    }
    let s12 = sub(miss, obs);
    let s22_inv = sub(obs, obs).try_inverse().expect("observed covariance invertible");
    let dev = DVector::from_iterator(obs.len(), obs.iter().map(|&l| values[l] - mean[l]));
    let mu = mu_m + &s12 * &s22_inv * dev;
    let s = s11 - &s12 * &s22_inv * s12.transpose();
    (mu, s)
}

fn criterion_1() -> Outcome {
    let dims = [2usize, 2, 2];
    let mut rng = RngStream::new(101, 0);
    let sigmas = vec![Some(random_pd(2, &mut rng)), Some(random_pd(2, &mut rng)), Some(random_pd(2, &mut rng))];
    let mean: Vec<f64> = (0..8).map(|_| rng.std_normal()).collect();
    let values: Vec<f64> = (0..8).map(|_| rng.std_normal()).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for policies in [default_policies(3), vec![ModePolicy::Wishart; 3]] {
        let parts: Vec<Option<DMatrix<f64>>> = sigmas
            .iter()
            .zip(&policies)
            .map(|(s, p)| match p {
                ModePolicy::Identity => None,
                ModePolicy::Wishart => s.clone(),
            })
            .collect();
        let cov = SeparableCovariance::from_parts(&dims, parts, 1.3).unwrap();
        let full = cov.dense(64).unwrap();
        for mask in 1u32..255 {
            let miss: Vec<usize> = (0..8).filter(|l| mask & (1 << l) != 0).collect();
            let obs: Vec<usize> = (0..8).filter(|l| mask & (1 << l) == 0).collect();
            let data: Vec<f64> = (0..8)
                .map(|l| if miss.contains(&l) { f64::NAN } else { values[l] })
                .collect();
            let t = MaskedTensor::from_nan(dims.to_vec(), data).unwrap();
            let plan = build_conditional_plan(&t, &policies, 4096).unwrap();
            let (mu_o, s_o) = dense_conditional(&full, &mean, &values, &miss, &obs);
            let mut mu = DVector::zeros(miss.len());
            let mut s = DMatrix::zeros(miss.len(), miss.len());
            for block in plan.blocks() {
                if block.missing.is_empty() {
                    continue;
                }
                let (bm, bs) = conditional_moments(block, &cov, &mean, &values).unwrap();
                let pos: Vec<usize> = block
                    .missing
                    .iter()
                    .map(|l| miss.iter().position(|m| m == l).unwrap())
                    .collect();
                for (i, &pi) in pos.iter().enumerate() {
                    mu[pi] = bm[i];
                    for (j, &pj) in pos.iter().enumerate() {
                        s[(pi, pj)] = bs[(i, j)];
                    }
                }
            }
            worst = worst.max((mu - mu_o).amax()).max((s - s_o).amax());
            checked += 1;
        }
    }
    outcome(worst < 1e-10, format!("{checked} masks, max abs error {worst:.2e}"))
}

fn criterion_2() -> Outcome {
    let dims = [4usize, 5, 6];
    let mut rng = RngStream::new(202, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let factors: Vec<DMatrix<f64>> = dims
            .iter()
            .map(|&d| DMatrix::from_fn(d, 3, |_, _| rng.std_normal()))
            .collect();
        let model = CpModel::new(factors.clone()).unwrap();
        let x = DenseTensor::from_fn(dims.to_vec(), |i| {
            (0..3)
                .map(|r| factors[0][(i[0], r)] * factors[1][(i[1], r)] * factors[2][(i[2], r)])
                .sum::<f64>()
        })
        .unwrap();
        for n in 0..3 {
            // Column of entry i in the mode-n unfolding: earlier modes vary fastest.
            let others: Vec<usize> = (0..3).filter(|&k| k != n).collect();
            let oracle = DMatrix::from_fn(dims[n], x.len() / dims[n], |row, col| {
                let mut idx = [0usize; 3];
                idx[n] = row;
                let mut c = col;
                for &k in &others {
                    idx[k] = c % dims[k];
                    c /= dims[k];
                }
                x.get(&idx)
            });
            let lhs = matricize(&x, n).unwrap();
            let rhs = &model.factors()[n] * khatri_rao_chain(model.factors(), Some(n)).unwrap().transpose();
            let scale = oracle.norm();
            worst = worst
                .max((&lhs - &oracle).norm() / scale)
                .max((&rhs - &oracle).norm() / scale);
        }
    }
    outcome(worst < 1e-10, format!("max relative error {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let v = srf(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
    outcome(v == Some(0.8), format!("srf = {v:?}"))
}

fn desk_mcmc(seed: u64) -> McmcConfig {
    McmcConfig::new(600, 300, 2, seed)
}

fn study_summaries(study: Study, engines: &[Engine], seed: u64) -> Vec<EngineSummary> {
    let design = SimDesign::new(study, vec![10, 10, 10], Missingness::Entry { p: 0.2 }, seed);
    let reps = run_study(&design, 20, engines, &desk_mcmc(seed)).unwrap();
    engines
        .iter()
        .map(|&e| summarize_replicates(&reps, e).unwrap())
        .collect()
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}%", 100.0 * v))
}

fn within(x: Option<f64>, lo: f64, hi: f64) -> bool {
    x.is_some_and(|v| (lo..=hi).contains(&v))
}

fn criterion_4() -> Outcome {
    let s = &study_summaries(Study::One, &[Engine::Indep], 4)[0];
    let pass = (0.30..=0.55).contains(&s.median_se) && within(s.coverage, 0.91, 0.98);
    outcome(
        pass,
        format!(
            "independent median SE {:.3} (band 0.30-0.55), coverage {} (band 91-98%), converged {}",
            s.median_se,
            pct(s.coverage),
            pct(s.converged_fraction)
        ),
    )
}

fn criterion_5() -> Outcome {
    let s = study_summaries(Study::Two, &[Engine::Indep, Engine::Correlated], 5);
    let (ind, cor) = (&s[0], &s[1]);
    let ratio = cor.median_se / ind.median_se;
    let pass = ratio < 0.5 && within(cor.coverage, 0.93, 0.99);
    outcome(
        pass,
        format!(
            "correlated/independent median SE {:.3}/{:.3} = {ratio:.3} (< 0.5), correlated coverage {} (band 93-99%)",
            cor.median_se,
            ind.median_se,
            pct(cor.coverage)
        ),
    )
}

fn criterion_6() -> Outcome {
    let s = study_summaries(Study::Three, &[Engine::Indep, Engine::Correlated], 6);
    let (ind, cor) = (&s[0], &s[1]);
    let gap = match (cor.functional_coverage, ind.functional_coverage) {
        (Some(c), Some(i)) => Some(c - i),
        _ => None,
    };
    let pass = gap.is_some_and(|g| g >= 0.10)
        && within(ind.coverage, 0.90, 0.98)
        && within(cor.coverage, 0.90, 0.98);
    outcome(
        pass,
        format!(
            "functional coverage correlated {} vs independent {} (gap {:+.1} pts, need >= 10); entrywise {} / {} (band 90-98%)",
            pct(cor.functional_coverage),
            pct(ind.functional_coverage),
            gap.map_or(f64::NAN, |g| 100.0 * g),
            pct(cor.coverage),
            pct(ind.coverage)
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut hits = 0;
    for seed in 0..20u64 {
        let mut d = SimDesign::new(Study::One, vec![10, 10, 10], Missingness::Entry { p: 0.2 }, 7000 + seed);
        d.rank = 2;
        d.sigma = 0.1;
        let data = generate(&d).unwrap();
        let cfg = CvConfig {
            folds: 4,
            ranks: vec![1, 2, 3, 4],
            holdout: Holdout::Entry,
            seed,
        };
        let engine = CvEngine::Indep(McmcConfig::new(400, 200, 1, seed));
        if cv_select_rank(&data.observed, &cfg, &engine).unwrap().selected == 2 {
            hits += 1;
        }
    }
    outcome(hits >= 16, format!("rank 2 selected in {hits}/20 seeds (need >= 16)"))
}

/// Batch-means Monte Carlo standard errors of the mean and sd of one
/// entry, pooling the per-chain batches.
fn mc_moments(d: &ImputationDraws, k: usize, chains: usize, batches: usize) -> (f64, f64, f64, f64) {
    let all = d.entry_trace(k, None);
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut bm = Vec::new();
    let mut bv = Vec::new();
    for c in 0..chains {
        let t = d.entry_trace(k, Some(c));
        let len = t.len() / batches;
        for b in t.chunks(len).take(batches) {
            bm.push(b.iter().sum::<f64>() / b.len() as f64);
            bv.push(b.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b.len() as f64);
        }
    }
    let se = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64 / xs.len() as f64).sqrt()
    };
    let sd = var.sqrt();
    (mean, se(&bm), sd, se(&bv) / (2.0 * sd))
}

fn criterion_8() -> Outcome {
    let d = SimDesign::new(Study::One, vec![5, 5, 5], Missingness::Entry { p: 0.2 }, 808);
    let data = generate(&d).unwrap();
    let chains = 4;
    let cfg = McmcConfig::new(5000, 1000, chains, 88);
    let ind = run_indep(&data.observed, 3, &cfg).unwrap();
    let cfg_sep = McmcConfig { seed: 89, ..cfg.clone() };
    let sep = run_sep(&data.observed, 3, &cfg_sep, &[ModePolicy::Identity; 3]).unwrap();
    let mut worst: f64 = 0.0;
    let n = ind.draws.n_missing();
    for k in 0..n {
        let (m1, se_m1, s1, se_s1) = mc_moments(&ind.draws, k, chains, 20);
        let (m2, se_m2, s2, se_s2) = mc_moments(&sep.run.draws, k, chains, 20);
        let zm = (m1 - m2).abs() / (se_m1.powi(2) + se_m2.powi(2)).sqrt();
        let zs = (s1 - s2).abs() / (se_s1.powi(2) + se_s2.powi(2)).sqrt();
        worst = worst.max(zm).max(zs);
    }
    outcome(
        worst <= 3.0,
        format!("{n} missing entries, largest |difference| = {worst:.2} Monte Carlo SE (need <= 3)"),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = RngStream::new(909, 0);
    let n = 100_000;
    let ig = (0..n)
        .map(|_| sample_inverse_gamma(3.0, 4.0, &mut rng).unwrap())
        .sum::<f64>()
        / n as f64;
    let ig_err = (ig - 2.0).abs() / 2.0;
    let s = DMatrix::<f64>::identity(2, 2);
    let mut acc = DMatrix::<f64>::zeros(2, 2);
    for _ in 0..n {
        acc += sample_inverse_wishart(&s, 7.0, &mut rng).unwrap();
    }
    acc /= n as f64;
    let iw_err = (acc - DMatrix::<f64>::identity(2, 2) * 0.25).amax() / 0.25;
    outcome(
        ig_err < 0.02 && iw_err < 0.03,
        format!(
            "inverse-gamma mean off by {:.2}% (< 2%), inverse-Wishart mean off by {:.2}% (< 3%)",
            100.0 * ig_err,
            100.0 * iw_err
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_10() -> Outcome {
    let (time, taxa) = (2, 1);
    let mut point_hw = Vec::new();
    let mut mi_hw = Vec::new();
    let mut sh_cor = Vec::new();
    let mut sh_ind = Vec::new();
    let mut observed_ok = true;
    for r in 0..5u64 {
        let d = SimDesign::new(Study::Two, vec![20, 30, 6], Missingness::Fiber { mode: taxa, p: 0.5 }, 1000 + r);
        let data = generate(&d).unwrap();
        let cfg = McmcConfig::new(600, 300, 2, r);
        let sep = run_sep(&data.observed, 3, &cfg, &default_policies(3)).unwrap();
        let ind = run_indep(&data.observed, 3, &cfg).unwrap();
        sh_cor.push(shannon_metrics(&data.truth, &sep.run.draws, time, taxa).unwrap().mse);
        sh_ind.push(shannon_metrics(&data.truth, &ind.draws, time, taxa).unwrap().mse);

        let half = |m: TrendMethod, draws: Option<&ImputationDraws>| {
            let mut o = TrendOptions::new(m, time, taxa);
            o.seed = r;
            diversity_trend(&data.observed, draws, &o).unwrap()
        };
        let hw = |t: &tenmi_core::analysis::DiversityTrend| {
            median(t.rows.iter().filter_map(|row| Some((row.upper? - row.lower?) / 2.0)).collect())
        };
        point_hw.push(hw(&half(TrendMethod::Point, Some(&sep.run.draws))));
        mi_hw.push(hw(&half(TrendMethod::Mi, Some(&sep.run.draws))));
        let obs = half(TrendMethod::Observed, None);
        observed_ok &= obs.rows.iter().all(|row| {
            row.point.is_some() == (row.n_observed >= 1) && row.lower.is_some() == (row.n_observed >= 2)
        });
    }
    let (p, m) = (median(point_hw), median(mi_hw));
    let (c, i) = (median(sh_cor), median(sh_ind));
    let pass = m >= p && observed_ok && c < i;
    outcome(
        pass,
        format!(
            "median half-width mi {m:.4} vs point {p:.4}; observed-only bounds only where observed: {observed_ok}; Shannon MSE correlated {c:.4} vs independent {i:.4}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("conditional moments vs dense oracle", criterion_1),
        ("matricization identity", criterion_2),
        ("scale reduction hand value", criterion_3),
        ("design 1 independent engine", criterion_4),
        ("design 2 correlated vs independent", criterion_5),
        ("design 3 fiber functionals", criterion_6),
        ("cross-validated rank recovery", criterion_7),
        ("all-identity reduction", criterion_8),
        ("inverse-gamma / inverse-Wishart means", criterion_9),
        ("diversity intervals and Shannon ordering", criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({}; {:.1}s)",
            k + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
