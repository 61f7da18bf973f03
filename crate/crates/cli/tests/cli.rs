use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pros_core::kde::{bandwidth_silverman, kde_pooled};
use pros_core::sampling::draw_srs;
use pros_core::simulation::replicate_rng;
use pros_core::{Distribution, Kernel};
use serde_json::Value;
use tempfile::TempDir;

fn pros(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pros"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pros(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("error JSON on stderr");
    serde_json::from_str(line).unwrap()
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Vec<f64> {
    let k = header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[k]).collect()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn rrv_against_srs_vanishes_at_the_median() {
    let out = ok(&["rrv", "--n", "2", "--m", "3", "--alpha0", "1", "--baseline", "srs"]);
    assert_eq!(out.lines().next(), Some("p,rrv"));
    assert!(out.lines().any(|l| l == "0.5,0"), "{out}");
}

#[test]
fn sample_has_l_rows_per_subset() {
    let out = ok(&[
        "sample", "--dist", "normal", "--n", "3", "--m", "2", "--L", "4", "--alpha", "identity", "--seed", "7",
    ]);
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, ["value", "subset", "cycle"]);
    assert_eq!(rows.len(), 12);
    for j in 1..=3 {
        assert_eq!(rows.iter().filter(|r| r[1] == j as f64).count(), 4);
    }
}

#[test]
fn em_returns_symmetric_doubly_stochastic_matrix() {
    let dir = TempDir::new().unwrap();
    let sample = path(&dir, "sample.csv");
    ok(&[
        "sample",
        "--n",
        "3",
        "--m",
        "3",
        "--L",
        "10",
        "--alpha0",
        "0.8",
        "--seed",
        "4",
        "--output",
        s(&sample),
    ]);
    let out = ok(&["em", "--input", s(&sample), "--n", "3", "--m", "3", "--delta", "1e-4"]);
    let report: Value = serde_json::from_str(&out).unwrap();
    let a: Vec<Vec<f64>> = serde_json::from_value(report["alpha"].clone()).unwrap();
    for j in 0..3 {
        let row: f64 = a[j].iter().sum();
        let col: f64 = a.iter().map(|r| r[j]).sum();
        assert!((row - 1.0).abs() < 1e-9 && (col - 1.0).abs() < 1e-9);
        for (h, &v) in a[j].iter().enumerate() {
            assert!((v - a[h][j]).abs() < 1e-12);
            assert!(v >= 0.0);
        }
    }
}

#[test]
fn single_srs_repetition_equals_direct_estimate() {
    let out = ok(&[
        "estimate",
        "--dist",
        "normal",
        "--n",
        "3",
        "--L",
        "4",
        "--M",
        "1",
        "--designs",
        "srs",
        "--seed",
        "11",
    ]);
    let (header, rows) = csv_rows(&out);
    let grid = column(&header, &rows, "x");
    let f = column(&header, &rows, "f_srs");

    let values = draw_srs(&Distribution::STANDARD_NORMAL, 12, &mut replicate_rng(11, 0, 0)).unwrap();
    let h = bandwidth_silverman(&values).unwrap();
    let direct = kde_pooled(&values, Kernel::EpanechnikovUnit, h, &grid).unwrap();
    for (a, b) in f.iter().zip(&direct.f_hat) {
        assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn estimate_manifest_records_inputs() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "est.csv");
    ok(&[
        "estimate",
        "--dist",
        "normal",
        "--n",
        "3",
        "--m",
        "2",
        "--L",
        "5",
        "--designs",
        "pros",
        "--alpha",
        "identity",
        "--M",
        "3",
        "--seed",
        "5",
        "--output",
        s(&out),
    ]);
    let m = read_json(&path(&dir, "est.csv.manifest.json"));
    let r = &m["resolved"];
    assert_eq!(r["seed"], 5);
    assert_eq!(r["bandwidth"]["mode"], "silverman_reference");
    assert_eq!(r["alpha_source"], "identity");
    assert_eq!(r["design"]["n_subsets"], 3);
    assert_eq!(r["design"]["subset_size"], 2);
    assert_eq!(r["design"]["cycles"], 5);
    assert_eq!(m["invocation"]["command"], "estimate");
}

#[test]
fn pros_bands_are_narrower_than_srs_on_most_of_the_grid() {
    let dir = TempDir::new().unwrap();
    let pop = path(&dir, "pop.csv");
    let mut text = String::from("y,x\n");
    for i in 0..2000 {
        let y = Distribution::STANDARD_NORMAL.quantile((i as f64 + 0.5) / 2000.0);
        text.push_str(&format!("{y},{y}\n"));
    }
    std::fs::write(&pop, text).unwrap();
    let out = ok(&[
        "estimate",
        "--population",
        s(&pop),
        "--n",
        "3",
        "--m",
        "4",
        "--L",
        "10",
        "--M",
        "20",
        "--designs",
        "srs,pros",
        "--seed",
        "3",
    ]);
    let (header, rows) = csv_rows(&out);
    let half = |d: &str| -> Vec<f64> {
        let f = column(&header, &rows, &format!("f_{d}"));
        let hi = column(&header, &rows, &format!("ci_hi_{d}"));
        hi.iter().zip(&f).map(|(h, f)| h - f).collect()
    };
    let (srs, prs) = (half("srs"), half("pros"));
    let narrower = prs.iter().zip(&srs).filter(|(p, s)| p <= s).count();
    let share = narrower as f64 / srs.len() as f64;
    assert!(share >= 0.6, "PROS band no wider at {share:.3} of the grid");
}

#[test]
fn inconsistent_set_size_is_a_usage_error() {
    let out = pros(&["sample", "--n", "3", "--m", "3", "--s", "8"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"]["category"], "usage");
    assert_eq!(e["error"]["exit_code"], 2);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = pros(&["rrv", "--n", "2", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["category"], "usage");
}

#[test]
fn malformed_csv_is_a_data_error_with_line() {
    let dir = TempDir::new().unwrap();
    let bad = path(&dir, "bad.csv");
    std::fs::write(&bad, "value,subset,cycle\n0.1,1,1\n0.2,2,1\nabc,1,2\n0.4,2,2\n").unwrap();
    let out = pros(&["em", "--input", s(&bad), "--m", "2"]);
    assert_eq!(out.status.code(), Some(3));
    let e = error_json(&out);
    assert_eq!(e["error"]["category"], "data");
    let msg = e["error"]["message"].as_str().unwrap();
    assert!(msg.contains("line 4"), "{msg}");
}

#[test]
fn collapsed_posterior_is_a_numerical_error() {
    // The smallest observations sit in the top subset, and an identity start
    // gives them no posterior mass once the set is large.
    let dir = TempDir::new().unwrap();
    let input = path(&dir, "inverted.csv");
    let mut text = String::from("value,subset,cycle\n");
    for c in 1..=5 {
        for j in 1..=3 {
            text.push_str(&format!("{},{j},{c}\n", (4 - j) * 10 + c));
        }
    }
    std::fs::write(&input, text).unwrap();
    let out = pros(&["em", "--input", s(&input), "--m", "200", "--init", "identity"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"]["category"], "numerical");
}

#[test]
fn manifest_replays_to_identical_output() {
    let dir = TempDir::new().unwrap();
    let first = path(&dir, "first.csv");
    let second = path(&dir, "second.csv");
    ok(&[
        "sample",
        "--dist",
        "gamma:3,1",
        "--n",
        "4",
        "--m",
        "2",
        "--L",
        "3",
        "--alpha0",
        "0.7",
        "--seed",
        "9",
        "--output",
        s(&first),
    ]);
    let manifest = path(&dir, "first.csv.manifest.json");
    ok(&["run", "--config", s(&manifest), "--output", s(&second)]);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

    let toml = path(&dir, "rrv.toml");
    std::fs::write(
        &toml,
        "command = \"rrv\"\nn = 2\nm = 3\nalpha0 = 1.0\nbaseline = \"srs\"\n",
    )
    .unwrap();
    let from_config = path(&dir, "rrv.csv");
    ok(&["run", "--config", s(&toml), "--output", s(&from_config)]);
    let direct = ok(&["rrv", "--n", "2", "--m", "3", "--alpha0", "1", "--baseline", "srs"]);
    assert_eq!(std::fs::read_to_string(&from_config).unwrap(), direct);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let args = [
        "simulate",
        "--study",
        "symmetry",
        "--dist",
        "laplace",
        "--n",
        "4",
        "--m",
        "2",
        "--L",
        "3",
        "--replicates",
        "20",
        "--seed",
        "2",
    ];
    assert_eq!(ok(&args), ok(&args));
    let with_threads: Vec<&str> = args.iter().copied().chain(["--threads", "3"]).collect();
    assert_eq!(ok(&args), ok(&with_threads));
}
