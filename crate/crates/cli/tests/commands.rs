//! End-to-end runs of the `transcal` binary on generated bundles.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;
use transcal_core::metrics::{self, BinningConfig, ProbabilitySet};
use transcal_core::pipeline::MetricBlock;
use transcal_core::Matrix;

fn transcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transcal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = transcal(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn fails_with(code: i32, args: &[&str]) -> String {
    let out = transcal(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn gen(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen-synth", "--out", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

fn method<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["methods"].as_array().unwrap().iter().find(|m| m["method"] == name).unwrap()
}

#[test]
fn gen_synth_writes_bundle_deterministically() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, &["--seed", "4"]);
    gen(&b, &["--seed", "4"]);
    let listing = files(&a);
    let matrices = listing.iter().filter(|(n, _)| n.ends_with(".csv")).count();
    assert_eq!(matrices, 8);
    assert!(listing.iter().any(|(n, _)| n == "manifest.json"));
    assert_eq!(listing, files(&b));

    let manifest = json(a.join("manifest.json"));
    assert_eq!(manifest["files"]["source_val_logits"]["rows"], 2000);
    assert_eq!(manifest["files"]["source_val_logits"]["cols"], 4);
    let logits = fs::read_to_string(a.join("source_val_logits.csv")).unwrap();
    assert_eq!(logits.lines().count(), 2000);
    assert!(logits.lines().all(|l| l.split(',').count() == 4));
    assert_eq!(manifest["true_weights_all_one"], false);
}

#[test]
fn zero_shift_manifest_marks_unit_weights() {
    let tmp = TempDir::new().unwrap();
    gen(tmp.path(), &["--shift-norm", "0", "--n-source", "500", "--n-target", "500"]);
    assert_eq!(json(tmp.path().join("manifest.json"))["true_weights_all_one"], true);
}

#[test]
fn raw_f32_bundle_round_trips_through_calibrate() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    gen(&bundle, &["--format", "raw-f32", "--n-source", "2000", "--n-target", "2000"]);
    assert!(bundle.join("target_logits.f32").is_file());
    ok(&["calibrate", s(&bundle), "--method", "temp", "--out", s(&tmp.path().join("c"))]);
}

#[test]
fn weights_rerun_is_identical_and_flat_without_shift() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    // 6250 source rows leave 5000 for training.
    gen(&bundle, &["--n-source", "6250", "--n-target", "5000", "--seed", "8"]);
    fs::copy(bundle.join("source_train_features.csv"), bundle.join("target_features.csv")).unwrap();
    let (w1, w2) = (tmp.path().join("w1"), tmp.path().join("w2"));
    ok(&["weights", s(&bundle), "--seed", "3", "--out", s(&w1)]);
    ok(&["weights", s(&bundle), "--seed", "3", "--out", s(&w2)]);
    assert_eq!(files(&w1), files(&w2));

    let w: Vec<f64> = fs::read_to_string(w1.join("weights.csv"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    let inside = w.iter().filter(|v| (0.8..=1.25).contains(*v)).count();
    assert!(inside as f64 >= 0.95 * w.len() as f64, "{inside} of {}", w.len());
    assert!(json(w1.join("weights_diagnostics.json"))["classifier"]["diagnostics"].is_object());
}

#[test]
fn wrong_feature_dimension_names_both_files() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    gen(&bundle, &["--n-source", "500", "--n-target", "300"]);
    let narrow: String = fs::read_to_string(bundle.join("target_features.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').take(5).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(bundle.join("target_features.csv"), narrow).unwrap();
    let err = fails_with(2, &["weights", s(&bundle), "--out", s(&tmp.path().join("w"))]);
    assert!(err.contains("target_features.csv") && err.contains("dimension 5"), "{err}");
    assert!(err.contains("source_train_features.csv") && err.contains("dimension 8"), "{err}");
}

#[test]
fn validation_and_degeneracy_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    gen(&bundle, &["--n-source", "500", "--n-target", "300"]);
    let out = tmp.path().join("o");
    fails_with(2, &["calibrate", s(&bundle), "--method", "nonsense", "--out", s(&out)]);
    fails_with(2, &["calibrate", s(&bundle), "--mode", "nonsense", "--out", s(&out)]);
    fails_with(2, &["calibrate", s(&bundle), "--alphas", "1,-2", "--out", s(&out)]);
    fails_with(2, &["calibrate", s(&tmp.path().join("missing")), "--out", s(&out)]);
    fails_with(2, &["diagnose", s(&bundle), "--out", s(&out)]);

    let zeros = tmp.path().join("zeros.csv");
    fs::write(&zeros, "0\n".repeat(100)).unwrap();
    fails_with(3, &["calibrate", s(&bundle), "--weights", s(&zeros), "--out", s(&out)]);

    // Oracle needs target labels; weight-based methods need features or weights.
    fs::remove_file(bundle.join("target_labels.csv")).unwrap();
    fails_with(2, &["calibrate", s(&bundle), "--method", "oracle", "--out", s(&out)]);
    fs::remove_file(bundle.join("target_features.csv")).unwrap();
    fails_with(2, &["calibrate", s(&bundle), "--method", "transcal", "--out", s(&out)]);
    ok(&["calibrate", s(&bundle), "--method", "temp", "--out", s(&out)]);
}

#[test]
fn temperature_scaling_recovers_distortion_without_shift() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    gen(&bundle, &["--shift-norm", "0", "--temperature", "2", "--seed", "1"]);
    let out = tmp.path().join("c");
    ok(&["calibrate", s(&bundle), "--method", "temp", "--out", s(&out)]);
    let report = json(out.join("report.json"));
    let t = method(&report, "temp")["parameters"]["temperature"].as_f64().unwrap();
    assert!((1.8..=2.2).contains(&t), "T* {t}");
    let before = method(&report, "uncalibrated")["target"]["ece"].as_f64().unwrap();
    let after = method(&report, "temp")["target"]["ece"].as_f64().unwrap();
    assert!(after <= before, "{after} > {before}");
}

#[test]
fn calibrate_all_methods_on_one_bundle() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    gen(&bundle, &["--seed", "2"]);
    let out = tmp.path().join("c");
    ok(&["calibrate", s(&bundle), "--method", "all", "--alphas", "0.5,1,2", "--out", s(&out)]);
    let report = json(out.join("report.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["methods"].as_array().unwrap().len(), 9);

    let acc = |m: &str| method(&report, m)["target"]["accuracy"].clone();
    assert_eq!(acc("transcal"), acc("temp"));
    let oracle = method(&report, "oracle")["target"]["ece"].as_f64().unwrap();
    for m in report["methods"].as_array().unwrap() {
        let ece = m["target"]["ece"].as_f64().unwrap();
        assert!(oracle <= ece + 0.01, "oracle {oracle} vs {} {ece}", m["method"]);
        assert!(out.join(m["probabilities_file"].as_str().unwrap()).is_file());
    }
    let tc = method(&report, "transcal");
    assert_eq!(tc["diagnostics"]["renyi"].as_array().unwrap().len(), 3);
    let lambda = tc["parameters"]["lambda"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&lambda));
    assert_eq!(method(&report, "transcal-no-bias")["parameters"]["lambda"], 1.0);
}

#[test]
fn evaluate_scores_one_hot_predictions_perfectly() {
    let tmp = TempDir::new().unwrap();
    let labels = [0usize, 2, 1, 1, 0];
    let probs: String = labels
        .iter()
        .map(|&y| (0..3).map(|k| if k == y { "1" } else { "0" }).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(tmp.path().join("p.csv"), probs).unwrap();
    fs::write(tmp.path().join("y.csv"), labels.map(|y| format!("{y}\n")).concat()).unwrap();
    let out = tmp.path().join("e");
    ok(&["evaluate", s(&tmp.path().join("p.csv")), s(&tmp.path().join("y.csv")), "--out", s(&out)]);
    let m = &json(out.join("metrics.json"))["metrics"];
    assert_eq!((m["ece"].as_f64(), m["nll"].as_f64(), m["brier"].as_f64()), (Some(0.0), Some(0.0), Some(0.0)));
    assert_eq!(m["accuracy"], 1.0);

    let csv = fs::read_to_string(out.join("reliability.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("lower,upper,count,weight,accuracy,confidence"));
    let counts: usize = lines.map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(counts, labels.len());

    fs::write(tmp.path().join("short.csv"), "0\n1\n").unwrap();
    let err = fails_with(2, &["evaluate", s(&tmp.path().join("p.csv")), s(&tmp.path().join("short.csv")), "--out", s(&out)]);
    assert!(err.contains("short.csv"), "{err}");
}

#[test]
fn evaluate_matches_direct_metric_calls_on_random_files() {
    let tmp = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for case in 0..100 {
        let n = rng.random_range(1..200);
        let k = rng.random_range(2..6);
        let bins = rng.random_range(1..30);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.001..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            rows.push(raw.iter().map(|v| v / sum).collect::<Vec<f64>>());
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let set = ProbabilitySet::new(Matrix::from_rows(&rows).unwrap()).unwrap();
        let (p, y) = (tmp.path().join("p.csv"), tmp.path().join("y.csv"));
        transcal_cli::io::write_matrix(&p, set.probs(), transcal_cli::io::MatrixFormat::Csv).unwrap();
        transcal_cli::io::write_labels(&y, &labels).unwrap();

        let out = tmp.path().join(format!("e{case}"));
        ok(&["evaluate", s(&p), s(&y), "--bins", &bins.to_string(), "--out", s(&out)]);
        let got: MetricBlock = serde_json::from_value(json(out.join("metrics.json"))["metrics"].clone()).unwrap();
        let config = BinningConfig::new(bins).unwrap();
        assert_eq!(got.ece, metrics::ece(&set, &labels, config).unwrap().ece);
        assert_eq!(got.nll, metrics::nll(&set, &labels).unwrap());
        assert_eq!(got.brier, metrics::brier(&set, &labels).unwrap());
        assert_eq!(got.accuracy, metrics::accuracy(&set, &labels).unwrap());
    }
}

#[test]
fn diagnose_reports_unit_renyi_without_shift() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    gen(&bundle, &["--shift-norm", "0", "--n-source", "20000", "--n-target", "20000"]);
    let w = tmp.path().join("w");
    ok(&["weights", s(&bundle), "--out", s(&w)]);
    let out = tmp.path().join("d");
    ok(&["diagnose", s(&bundle), "--weights", s(&w.join("weights.csv")), "--out", s(&out)]);
    let report = json(out.join("diagnostics.json"));
    for r in report["renyi"].as_array().unwrap() {
        let v = r["value"].as_f64().unwrap();
        assert!((v - 1.0).abs() <= 0.1, "{r}");
    }
    assert!(report["true_weights"]["mean_abs_log_error"].as_f64().is_some());

    let max = report["summary"]["max"].as_f64().unwrap();
    let edges: Vec<f64> = report["histogram"]["edges"].as_array().unwrap().iter().map(|e| e.as_f64().unwrap()).collect();
    assert_eq!(edges.first(), Some(&0.0));
    assert_eq!(edges.last(), Some(&max));
    let counts: u64 = report["histogram"]["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts, 4000);
    assert_eq!(report["lambda_profile"].as_array().unwrap().len(), 11);
}

#[test]
fn weights_in_raw_f32_feed_calibrate() {
    let tmp = TempDir::new().unwrap();
    let bundle = tmp.path().join("b");
    gen(&bundle, &["--n-source", "3000", "--n-target", "3000"]);
    let w = tmp.path().join("w");
    ok(&["weights", s(&bundle), "--format", "raw-f32", "--out", s(&w)]);
    let bytes = fs::read(w.join("weights.f32")).unwrap();
    assert_eq!(&bytes[..4], b"TCAL");
    assert_eq!(bytes.len(), 16 + 4 * 600);
    let out = tmp.path().join("c");
    ok(&["calibrate", s(&bundle), "--method", "transcal,cpcs", "--weights", s(&w.join("weights.f32")), "--out", s(&out)]);
    assert_eq!(json(out.join("report.json"))["config"]["weights"], s(&w.join("weights.f32")));
}
