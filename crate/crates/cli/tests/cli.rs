use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tenmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tenmi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = tenmi(args);
    assert!(
        out.status.success(),
        "tenmi {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

fn simulate(dir: &Path, study: &str, dims: &str, seed: &str) {
    ok(&[
        "simulate", "--study", study, "--dims", dims, "--missing", "entry", "--prob", "0.2",
        "--seed", seed, "--out", s(dir),
    ]);
}

/// Values of a long-format table keyed by the index columns.
fn table(text: &str, order: usize, col: usize) -> Vec<(Vec<usize>, Option<f64>)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let idx = f[..order].iter().map(|x| x.parse().unwrap()).collect();
            (idx, f[col].parse().ok())
        })
        .collect()
}

#[test]
fn simulate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    simulate(&a, "1", "10,10,10", "7");
    simulate(&b, "1", "10,10,10", "7");
    for f in ["truth.csv", "signal.csv", "masked.csv", "masked.csv.json", "covariance.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs");
    }
    let c = dir.path().join("c");
    simulate(&c, "1", "10,10,10", "8");
    assert_ne!(read(a.join("masked.csv")), read(c.join("masked.csv")));
}

#[test]
fn simulate_writes_separable_covariance() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "3", "4,5,3", "1");
    let cov: Value = serde_json::from_str(&read(dir.path().join("covariance.json"))).unwrap();
    let modes = cov["modes"].as_array().unwrap();
    assert_eq!(modes[0], "identity");
    assert_eq!(modes[2], "identity");
    let s2 = modes[1].as_array().unwrap();
    assert_eq!(s2.len(), 5);
    assert_eq!(s2[0][0].as_f64(), Some(1.0));
    assert_eq!(s2[0][1].as_f64(), Some(0.15));
    let m: Value = serde_json::from_str(&read(dir.path().join("manifest.json"))).unwrap();
    assert_eq!(m["format_version"], 1);
    assert_eq!(m["command"], "simulate");
}

#[test]
fn impute_summary_has_one_row_per_missing_cell() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(&sim, "1", "6,5,4", "3");
    let masked = read(sim.join("masked.csv"));
    let n_missing = masked.lines().filter(|l| l.ends_with(",NA")).count();
    assert!(n_missing > 0);

    let cfg = write_config(
        dir.path(),
        r#"{"engine": "independent", "rank": 2,
            "mcmc": {"iterations": 40, "burn_in": 20, "chains": 2, "seed": 5}}"#,
    );
    let out = dir.path().join("imp");
    ok(&["impute", "--input", s(&sim.join("masked.csv")), "--config", s(&cfg), "--out", s(&out)]);
    let summary = read(out.join("summary.csv"));
    assert_eq!(summary.lines().count() - 1, n_missing);
    let draws = read(out.join("draws.csv"));
    assert_eq!(draws.lines().count() - 1, n_missing * 40);
    for (_, q) in table(&summary, 3, 5) {
        assert!(q.unwrap().is_finite());
    }
    let conv: Value = serde_json::from_str(&read(out.join("convergence.json"))).unwrap();
    assert!(conv["parameters"][0]["name"] == "sigma2");
    let m: Value = serde_json::from_str(&read(out.join("manifest.json"))).unwrap();
    assert_eq!(m["config"]["rank"], 2);
    assert_eq!(m["seeds"]["mcmc"], 5);
    assert!(m["wall_time_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn impute_is_deterministic_and_honours_threads() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(&sim, "2", "5,4,4", "11");
    let cfg = write_config(
        dir.path(),
        r#"{"engine": "correlated", "rank": 2,
            "mcmc": {"iterations": 30, "burn_in": 10, "chains": 2, "seed": 1}}"#,
    );
    let input = sim.join("masked.csv");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["impute", "--input", s(&input), "--config", s(&cfg), "--out", s(&a)]);
    ok(&["--threads", "1", "impute", "--input", s(&input), "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(read(a.join("draws.csv")), read(b.join("draws.csv")));
    assert_eq!(read(a.join("covariance.json")), read(b.join("covariance.json")));
}

#[test]
fn em_engine_writes_a_single_draw() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(&sim, "1", "5,5,5", "2");
    let cfg = write_config(dir.path(), r#"{"engine": "em", "rank": 3}"#);
    let out = dir.path().join("em");
    ok(&["impute", "--input", s(&sim.join("masked.csv")), "--config", s(&cfg), "--out", s(&out)]);
    let summary = read(out.join("summary.csv"));
    for line in summary.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[4].parse::<f64>().unwrap(), 0.0, "sd of a single draw");
        assert_eq!(f[3], f[5]);
    }
}

#[test]
fn errors_are_json_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"engine": "independent", "rank": 2, "colour": 1}"#);
    let input = dir.path().join("t.csv");
    std::fs::write(&input, "i1,i2,value\n1,1,1\n2,1,NA\n1,2,2\n2,2,3\n").unwrap();
    let out = tenmi(&["impute", "--input", s(&input), "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert_eq!(err["error"]["kind"], "json");
    assert!(err["error"]["message"].as_str().unwrap().contains("colour"));

    std::fs::write(&input, "i1,i2,value\n1,1,1\n1,1,2\n").unwrap();
    let cfg = write_config(dir.path(), r#"{"engine": "independent", "rank": 1}"#);
    let out = tenmi(&["impute", "--input", s(&input), "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "parse");
    assert!(err["error"]["message"].as_str().unwrap().contains(":3:"));

    let out = tenmi(&["simulate", "--study", "4", "--dims", "3,3", "--prob", "0.2", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");
}

#[test]
fn cv_rank_reports_every_fold() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(&sim, "1", "6,6,6", "4");
    let cfg = write_config(
        dir.path(),
        r#"{"engine": "em", "ranks": [1, 2, 3], "cv": {"folds": 3, "seed": 9}}"#,
    );
    let out = dir.path().join("cv");
    ok(&["cv-rank", "--input", s(&sim.join("masked.csv")), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(read(out.join("cv.csv")).lines().count(), 1 + 3 * 3);
    let res: Value = serde_json::from_str(&read(out.join("cv.json"))).unwrap();
    let sel = res["selected"].as_u64().unwrap();
    assert!((1..=3).contains(&sel));
}

#[test]
fn diversity_and_diagnostics_tables() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&[
        "simulate", "--study", "2", "--dims", "8,5,4", "--missing", "fiber", "--fiber-mode", "2",
        "--prob", "0.3", "--seed", "5", "--out", s(&sim),
    ]);
    let input = sim.join("masked.csv");
    let cfg = write_config(
        dir.path(),
        r#"{"engine": "independent", "rank": 2,
            "mcmc": {"iterations": 40, "burn_in": 20, "chains": 1, "seed": 2}}"#,
    );
    let imp = dir.path().join("imp");
    ok(&["impute", "--input", s(&input), "--config", s(&cfg), "--out", s(&imp)]);
    let draws = imp.join("draws.csv");

    for method in ["point", "observed", "mi"] {
        let out = dir.path().join(method);
        ok(&[
            "diversity", "--input", s(&input), "--draws", s(&draws), "--method", method,
            "--time-mode", "3", "--taxa-mode", "2", "--out", s(&out),
        ]);
        let t = read(out.join("diversity.csv"));
        assert_eq!(t.lines().count(), 1 + 4, "{method}");
        for line in t.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f[1], method);
            if let (Ok(p), Ok(lo), Ok(hi)) = (f[2].parse::<f64>(), f[3].parse::<f64>(), f[4].parse::<f64>()) {
                assert!(lo <= p && p <= hi, "{line}");
            }
        }
    }
    let out = tenmi(&[
        "diversity", "--input", s(&input), "--method", "mi", "--time-mode", "3", "--taxa-mode",
        "2", "--out", s(&dir.path().join("nodraws")),
    ]);
    assert!(!out.status.success());

    let diag = dir.path().join("diag");
    ok(&["diagnostics", "--input", s(&input), "--time-mode", "3", "--taxa-mode", "2", "--out", s(&diag)]);
    let h = read(diag.join("histogram.csv"));
    let total: usize = h.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    let observed = read(input).lines().skip(1).filter(|l| !l.ends_with(",NA")).count();
    assert_eq!(total, observed);
    assert!(read(diag.join("correlations.csv")).lines().count() > 1);
}

#[test]
fn study2_pipeline_orders_engines() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(&sim, "2", "10,10,10", "21");
    let input = sim.join("masked.csv");
    let truth = read(sim.join("truth.csv"));
    let truth_vals = table(&truth, 3, 3);
    let value_at = |idx: &[usize]| {
        let lin = (idx[0] - 1) + 10 * (idx[1] - 1) + 100 * (idx[2] - 1);
        assert_eq!(truth_vals[lin].0, idx);
        truth_vals[lin].1.unwrap()
    };
    let mut mse = Vec::new();
    for engine in ["independent", "correlated"] {
        let cfg = write_config(
            dir.path(),
            &format!(
                r#"{{"engine": "{engine}", "rank": 3,
                    "mcmc": {{"iterations": 400, "burn_in": 200, "chains": 2, "seed": 3}}}}"#
            ),
        );
        let out = dir.path().join(engine);
        ok(&["impute", "--input", s(&input), "--config", s(&cfg), "--out", s(&out)]);
        let rows = table(&read(out.join("summary.csv")), 3, 3);
        let se: f64 = rows.iter().map(|(i, m)| (m.unwrap() - value_at(i)).powi(2)).sum();
        mse.push(se / rows.len() as f64);
    }
    assert!(mse[1] < mse[0], "correlated {} vs independent {}", mse[1], mse[0]);
}
