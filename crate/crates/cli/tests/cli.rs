use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TOY: &str = "\
# toy survey extract
age,income,score
34,2.5,0.1
51,3.1,-0.4
29,1.9,0.7
45,2.8,0.2
38,NA,0.0
62,3.9,-1.1
23,1.2,0.9
40,2.2,0.3
57,3.4,-0.6
";

fn misslik(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_misslik"))
        .arg("-o")
        .arg(dir)
        .args(args)
        .env_remove("MISSLIK_JOBS")
        .output()
        .expect("binary runs")
}

fn ok_summary(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn error_body(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    serde_json::from_slice(&out.stderr).expect("stderr is one JSON document")
}

fn toy_csv(dir: &Path) -> PathBuf {
    let p = dir.join("toy.csv");
    fs::write(&p, TOY).unwrap();
    p
}

fn complete_rows() -> Vec<[f64; 3]> {
    TOY.lines()
        .skip(2)
        .filter(|l| !l.contains("NA"))
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
            [v[0], v[1], v[2]]
        })
        .collect()
}

fn json_file(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

/// Data lines of a table written by the tool: comment line dropped.
fn table_lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[test]
fn ingest_draws_population_from_complete_row_moments() {
    let dir = TempDir::new().unwrap();
    let csv = toy_csv(dir.path());
    let s = ok_summary(&misslik(dir.path(), &["ingest", csv.to_str().unwrap()]));
    assert_eq!(s["command"], "ingest");
    assert_eq!(s["dropped_rows"], 1);

    let rows = complete_rows();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..3).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let truth = json_file(&dir.path().join("truth.json"));
    for (a, b) in floats(&truth["mean"]).iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    // maximum-likelihood covariance, divisor n
    let cov = &truth["covariance"];
    for i in 0..3 {
        for j in 0..3 {
            let hand = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / n;
            assert!((cov[i][j].as_f64().unwrap() - hand).abs() < 1e-10);
        }
    }
    assert_eq!(truth["columns"], serde_json::json!(["age", "income", "score"]));
    let pop = table_lines(&dir.path().join("population.csv"));
    assert_eq!(pop[0], "age,income,score");
    assert_eq!(pop.len(), 501);
}

#[test]
fn non_numeric_cell_is_a_schema_error() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.csv");
    fs::write(&p, "a,b\n1,2\n3,abc\n").unwrap();
    let e = error_body(&misslik(dir.path(), &["fit", p.to_str().unwrap()]));
    assert_eq!(e["error"]["code"], "SCHEMA");
    assert!(e["error"]["message"].as_str().unwrap().contains("abc"));
    assert!(!dir.path().join("params.json").exists());
}

#[test]
fn missing_input_is_an_ingest_error() {
    let dir = TempDir::new().unwrap();
    let e = error_body(&misslik(dir.path(), &["ingest", "does-not-exist.csv"]));
    assert_eq!(e["error"]["code"], "INGEST");
}

#[test]
fn unknown_override_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let e = error_body(&misslik(dir.path(), &["--set", "em.tolerance=1e-6", "check"]));
    assert_eq!(e["error"]["code"], "INVALID_CONFIG");
    assert!(e["error"]["message"].as_str().unwrap().contains("tolerance"));
    let e = error_body(&misslik(dir.path(), &["--set", "nonsense", "check"]));
    assert_eq!(e["error"]["code"], "INVALID_CONFIG");
}

#[test]
fn config_file_and_overrides_layer_over_defaults() {
    let dir = TempDir::new().unwrap();
    let user = dir.path().join("user.toml");
    fs::write(&user, "seed = 9\n[em]\ntol = 1e-6\n").unwrap();
    let out = misslik(
        dir.path(),
        &["--config", user.to_str().unwrap(), "--set", "em.max_iters=50", "config"],
    );
    assert!(out.status.success());
    let resolved: toml::Value = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(resolved["seed"].as_integer(), Some(9));
    assert_eq!(resolved["em"]["tol"].as_float(), Some(1e-6));
    assert_eq!(resolved["em"]["max_iters"].as_integer(), Some(50));
    assert_eq!(resolved["fit"]["uncertainty_resamples"].as_integer(), Some(100));
    // --seed beats the file
    let out = misslik(dir.path(), &["--config", user.to_str().unwrap(), "--seed", "4", "config"]);
    let resolved: toml::Value = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(resolved["seed"].as_integer(), Some(4));
}

#[test]
fn fit_on_complete_data_returns_the_sample_moments() {
    let dir = TempDir::new().unwrap();
    let csv = toy_csv(dir.path());
    ok_summary(&misslik(dir.path(), &["ingest", csv.to_str().unwrap()]));
    // fit reads every row, so strip the incomplete one first
    let complete = dir.path().join("complete.csv");
    fs::write(&complete, TOY.lines().filter(|l| !l.contains("NA")).collect::<Vec<_>>().join("\n")).unwrap();
    let s = ok_summary(&misslik(
        dir.path(),
        &["--set", "fit.uncertainty_resamples=20", "fit", complete.to_str().unwrap()],
    ));
    assert_eq!(s["converged"], true);
    assert_eq!(s["iterations"], 1);
    let truth = json_file(&dir.path().join("truth.json"));
    let fitted = json_file(&dir.path().join("params.json"));
    for (a, b) in floats(&fitted["mean"]).iter().zip(floats(&truth["mean"])) {
        assert!((a - b).abs() < 1e-10);
    }
    for i in 0..3 {
        for (a, b) in floats(&fitted["covariance"][i]).iter().zip(floats(&truth["covariance"][i])) {
            assert!((a - b).abs() < 1e-10);
        }
    }
    let unc = table_lines(&dir.path().join("uncertainty.csv"));
    assert_eq!(unc[0], "parameter,estimate,bootstrap_sd");
    // 3 means and 6 covariance entries
    assert_eq!(unc.len(), 1 + 9);
    assert!(unc[4].starts_with("\"cov[age,age]\","));
}

#[test]
fn ampute_fit_impute_pipeline() {
    let dir = TempDir::new().unwrap();
    let csv = toy_csv(dir.path());
    ok_summary(&misslik(dir.path(), &["ingest", csv.to_str().unwrap()]));
    let pop = dir.path().join("population.csv");
    let s = ok_summary(&misslik(
        dir.path(),
        &[
            "--set",
            "ampute.target_col=2",
            "--set",
            "ampute.driver_col=0",
            "--set",
            "ampute.psi=0.4",
            "ampute",
            pop.to_str().unwrap(),
        ],
    ));
    let rate = s["achieved_rate"].as_f64().unwrap();
    assert!((0.3..0.5).contains(&rate), "rate {rate}");

    let amputed = dir.path().join("amputed.csv");
    let before = table_lines(&pop);
    let after = table_lines(&amputed);
    assert_eq!(before.len(), after.len());
    let mut missing = 0;
    for (b, a) in before.iter().zip(&after).skip(1) {
        let (b, a): (Vec<&str>, Vec<&str>) = (b.split(',').collect(), a.split(',').collect());
        // the first two columns are never touched
        assert_eq!(b[..2], a[..2]);
        if a[2] != b[2] {
            assert_eq!(a[2], "");
            missing += 1;
        }
    }
    assert_eq!(missing as f64 / 500.0, rate);

    let s = ok_summary(&misslik(
        dir.path(),
        &["--set", "fit.uncertainty_resamples=10", "fit", amputed.to_str().unwrap()],
    ));
    assert_eq!(s["converged"], true);
    let trace: Vec<f64> = table_lines(&dir.path().join("loglik_trace.csv"))
        .iter()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));

    let s = ok_summary(&misslik(
        dir.path(),
        &["--set", "impute.num_imputations=8", "--set", "impute.write_completed=2", "impute", amputed.to_str().unwrap()],
    ));
    assert_eq!(s["imputations"], 8);
    for j in 1..=2 {
        let done = table_lines(&dir.path().join(format!("completed_{j}.csv")));
        for (a, c) in after.iter().zip(&done).skip(1) {
            for (x, y) in a.split(',').zip(c.split(',')) {
                if !x.is_empty() {
                    assert_eq!(x.parse::<f64>().unwrap(), y.parse::<f64>().unwrap());
                } else {
                    assert!(y.parse::<f64>().unwrap().is_finite());
                }
            }
        }
    }
    assert!(!dir.path().join("completed_3.csv").exists());
}

#[test]
fn lemma1_check_gap_halves() {
    let dir = TempDir::new().unwrap();
    let s = ok_summary(&misslik(dir.path(), &["check", "--kind", "lemma1"]));
    assert_eq!(s["rows"], 20);
    let gaps: Vec<f64> = table_lines(&dir.path().join("lemma1.csv"))
        .iter()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(gaps.len(), 20);
    for w in gaps.windows(2) {
        assert!((w[1] / w[0] - 0.5).abs() < 1e-12);
    }
}

#[test]
fn theorem2_check_runs_on_small_grid() {
    let dir = TempDir::new().unwrap();
    let s = ok_summary(&misslik(
        dir.path(),
        &["--set", "check.theorem2.replicates=20", "--set", "check.theorem2.n=50", "check", "--kind", "theorem2"],
    ));
    // 3 mean offsets x 3 scales; offset 0 at scale 1 is the base parameter
    assert_eq!(s["rows"], 9);
    assert!(dir.path().join("theorem2.csv").exists());
}

fn small_sweep(dir: &Path, jobs: &str) -> Vec<u8> {
    let s = ok_summary(&misslik(
        dir,
        &[
            "-j",
            jobs,
            "--set",
            "sweep.loglik_sup.n_grid=[30, 45]",
            "--set",
            "sweep.loglik_sup.replicates=3",
            "--set",
            "sweep.loglik_sup.bootstrap_b=10",
            "sweep",
        ],
    ));
    assert_eq!(s["rows"], 2 * 3 * 2 * 3);
    assert_eq!(s["error_rows"], 0);
    fs::read(dir.join("sweep.csv")).unwrap()
}

#[test]
fn sweep_output_is_byte_identical_across_runs_and_thread_counts() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let first = small_sweep(a.path(), "1");
    let second = small_sweep(b.path(), "3");
    assert_eq!(first, second);
    assert!(!a.path().join("sweep.csv.part").exists());
    let summary = json_file(&a.path().join("sweep_summary.json"));
    assert_eq!(summary["trends"].as_array().unwrap().len(), 6);
}

#[test]
fn default_sweep_covers_the_full_grid() {
    let dir = TempDir::new().unwrap();
    let s = ok_summary(&misslik(dir.path(), &["sweep"]));
    // 2 mechanisms x 3 psi x 81 sample sizes x 20 replicates
    assert_eq!(s["rows"], 9720);
    assert_eq!(s["error_rows"], 0);
    let lines = table_lines(&dir.path().join("sweep.csv"));
    assert_eq!(lines.len(), 9721);
    assert!(lines[0].starts_with("cell,family,mechanism,psi,n,replicate,seed"));
    let meta = json_file(&dir.path().join("sweep_meta.json"));
    assert_eq!(meta["rows"], 9720);
}
