use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pdet::datagen::load_dataset;
use pdet::detect::detect_hybrid;
use pdet::signal::{FrequencyBand, TimeSeries};
use serde_json::Value;

fn pdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdet")).args(args).env("PDET_THREADS", "1").output().unwrap()
}

fn report(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_sine(path: &Path, f: f64, fs: f64, n: usize) -> Vec<f64> {
    let x: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin() + 0.3).collect();
    fs::write(path, x.iter().map(|v| format!("{v}\n")).collect::<String>()).unwrap();
    x
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(pdet(&[]).status.code(), Some(2));
    assert_eq!(pdet(&["frobnicate"]).status.code(), Some(2));
    let out = pdet(&["synth", "--out", "x.pdts", "--band", "4:0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lo must be < hi"));
    assert_eq!(pdet(&["baseline", "--input", "x.csv", "--fs", "25", "--method", "wavelet"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = pdet(&["baseline", "--input", p(&missing), "--fs", "25"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());

    let csv = dir.path().join("sig.csv");
    write_sine(&csv, 1.0, 25.0, 200);
    // nfft shorter than the signal
    assert_eq!(pdet(&["baseline", "--input", p(&csv), "--fs", "25", "--nfft", "128"]).status.code(), Some(1));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.pdts"), dir.path().join("b.pdts"), dir.path().join("c.pdts"));
    for (path, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let r = report(&pdet(&["--quiet", "synth", "--out", p(path), "--n", "16", "--seed", seed]));
        assert_eq!(r["command"], "synth");
        assert_eq!(r["result"]["count"], 16);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let ds = load_dataset(&a).unwrap();
    assert_eq!((ds.len(), ds.window_len()), (16, 200));
}

#[test]
fn synth_without_seed_reports_one() {
    let dir = tempfile::tempdir().unwrap();
    let r = report(&pdet(&["--quiet", "synth", "--out", p(&dir.path().join("d.pdts")), "--n", "2"]));
    assert!(r["seed"].is_u64());
}

#[test]
fn baseline_reports_rate_in_unit() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sig.csv");
    let x = write_sine(&csv, 1.25, 25.0, 200);
    let r = report(&pdet(&["baseline", "--input", p(&csv), "--fs", "25", "--unit", "bpm"]));
    let bpm = r["result"]["rate"].as_f64().unwrap();
    assert!((bpm - 75.0).abs() <= 60.0 * 25.0 / 512.0, "{bpm}");
    assert_eq!(r["result"]["method"], "fourier");

    let r = report(&pdet(&["baseline", "--input", p(&csv), "--fs", "25", "--method", "hybrid"]));
    let band = FrequencyBand::new(0.5, 4.0).unwrap();
    let lib = detect_hybrid(&TimeSeries::new(x, 25.0).unwrap(), band, 512).unwrap();
    assert_eq!(r["result"]["freq_hz"].as_f64().unwrap(), lib.freq_hz);
    assert_eq!(r["result"]["confidence"].as_f64().unwrap(), lib.confidence);
}

#[test]
fn spectrum_writes_peak_at_tone() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, out) = (dir.path().join("sig.csv"), dir.path().join("spec.csv"));
    write_sine(&csv, 2.0, 16.0, 64);
    let r = report(&pdet(&["spectrum", "--input", p(&csv), "--fs", "16", "--out", p(&out)]));
    assert_eq!(r["result"]["peak_hz"].as_f64(), Some(2.0));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("freq,power"));
    assert_eq!(text.lines().count(), 1 + 33);
}

#[test]
fn train_detect_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.pdts");
    let model = dir.path().join("tiny.pdm");
    report(&pdet(&["--quiet", "synth", "--out", p(&data), "--n", "32", "--seed", "1", "--interferer-ratio", "0"]));
    let r = report(&pdet(&[
        "--quiet", "train", "--data", p(&data), "--out", p(&model), "--epochs", "2", "--batch", "16",
        "--base-channels", "4", "--seed", "3",
    ]));
    assert_eq!(r["result"]["epochs"], 2);
    assert!(model.exists());
    let hist = fs::read_to_string(dir.path().join("tiny.history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 3);

    let csv = dir.path().join("sig.csv");
    write_sine(&csv, 1.25, 25.0, 200);
    let r = report(&pdet(&["detect", "--input", p(&csv), "--fs", "25", "--model", p(&model), "--unit", "bpm"]));
    let hz = r["result"]["freq_hz"].as_f64().unwrap();
    assert!((0.5..=4.0).contains(&hz));
    assert_eq!(r["result"]["rate"].as_f64().unwrap(), hz * 60.0);
    assert_eq!(r["result"]["method"], "neural");

    let per = dir.path().join("per.csv");
    let r = report(&pdet(&["eval", "--data", p(&data), "--method", "neural", "--model", p(&model), "--per-sample", p(&per)]));
    assert_eq!(r["result"]["evaluated"].as_u64().unwrap() + r["result"]["excluded"].as_u64().unwrap(), 32);
    assert_eq!(fs::read_to_string(&per).unwrap().lines().count(), 33);

    assert_eq!(pdet(&["eval", "--data", p(&data), "--method", "neural"]).status.code(), Some(2));
}

#[test]
fn eval_fourier_finds_clean_targets() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("clean.pdts");
    report(&pdet(&["--quiet", "synth", "--out", p(&data), "--n", "40", "--seed", "5", "--interferer-ratio", "0", "--noise-sigma", "0.1"]));
    let r = report(&pdet(&["--quiet", "eval", "--data", p(&data), "--method", "fourier", "--unit", "bpm"]));
    assert_eq!(r["result"]["excluded"], 0);
    assert!(r["result"]["hit_rate"].as_f64().unwrap() >= 0.9, "{r}");
    assert!(r["result"]["mae"].as_f64().unwrap() < 5.0);
    assert!(r["result"]["rho_percent"].as_f64().unwrap() > 90.0);
}
