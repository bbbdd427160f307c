//! Command-line front end. Machine-readable JSON goes to stdout, progress
//! and diagnostics to stderr. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::datagen::{gen_dataset, load_csv, load_dataset, save_dataset, SyntheticConfig};
use crate::detect::{detect_acf, detect_fourier, detect_hybrid, DetectionResult, NeuralDetector};
use crate::error::Error;
use crate::loss::LossWeights;
use crate::model::{load_checkpoint, save_checkpoint, TrainingMeta, UNet, UNetConfig};
use crate::signal::{FrequencyBand, TimeSeries};
use crate::spectral::dft_power;
use crate::train::{evaluate_with_threads, hz_to_rate, train_with, write_history_csv, RateUnit, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "pdet", version, about = "Periodicity detection in noisy 1D signals")]
pub struct Cli {
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled dataset (PDTS file).
    Synth(SynthArgs),
    /// Train the encoder on a dataset without using its labels.
    Train(TrainArgs),
    /// Estimate the dominant rate of a CSV signal with a trained model.
    Detect(DetectArgs),
    /// Estimate the dominant rate of a CSV signal with a classical detector.
    Baseline(BaselineArgs),
    /// Score a detector against dataset labels.
    Eval(EvalArgs),
    /// Write the one-sided power spectrum of a CSV signal.
    Spectrum(SpectrumArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    HrPpg,
    HrEcg,
    Resp,
    Steps,
}

impl Preset {
    /// Band, DFT length and unit per task.
    fn values(self) -> (FrequencyBand, usize, RateUnit) {
        let per_min = |lo: f64, hi: f64| FrequencyBand::new(lo / 60.0, hi / 60.0).expect("valid preset");
        match self {
            Preset::HrPpg => (per_min(30.0, 210.0), 512, RateUnit::Bpm),
            Preset::HrEcg => (per_min(30.0, 210.0), 2048, RateUnit::Bpm),
            Preset::Resp => (per_min(5.0, 40.0), 512, RateUnit::Rpm),
            Preset::Steps => (per_min(40.0, 140.0), 512, RateUnit::Spm),
        }
    }
}

fn parse_band(s: &str) -> Result<FrequencyBand, String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad number {lo:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad number {hi:?}"))?;
    FrequencyBand::new(lo, hi).map_err(|e| match e {
        Error::InvalidInput(m) => m,
        e => e.to_string(),
    })
}

fn parse_unit(s: &str) -> Result<RateUnit, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    parse_band(s).map(|b| (b.lo(), b.hi()))
}

/// Band / nfft / unit flags shared by the analysis commands.
#[derive(Args, Debug, Clone)]
struct TaskArgs {
    /// Task preset: sets band, nfft and unit unless given explicitly.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Band of interest in Hz.
    #[arg(long, value_parser = parse_band, value_name = "LO:HI")]
    band: Option<FrequencyBand>,
    /// DFT length (power of two, at least the signal length).
    #[arg(long)]
    nfft: Option<usize>,
    /// Output rate unit: hz, bpm, rpm or spm.
    #[arg(long, value_parser = parse_unit)]
    unit: Option<RateUnit>,
}

impl TaskArgs {
    fn resolve(&self, default_band: FrequencyBand) -> (FrequencyBand, usize, RateUnit) {
        let (pb, pn, pu) = self.preset.map(Preset::values).unwrap_or((default_band, 512, RateUnit::Hz));
        (self.band.unwrap_or(pb), self.nfft.unwrap_or(pn), self.unit.unwrap_or(pu))
    }
}

#[derive(Args, Debug)]
struct SignalArgs {
    /// CSV with one value per row, or time,value rows.
    #[arg(long)]
    input: PathBuf,
    /// Sample rate of the CSV in Hz.
    #[arg(long)]
    fs: f64,
    /// Skip the first CSV row.
    #[arg(long)]
    header: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2048)]
    n: usize,
    #[arg(long, default_value_t = 25.0)]
    fs: f64,
    #[arg(long, default_value_t = 8.0)]
    win_sec: f64,
    #[arg(long, value_parser = parse_band, value_name = "LO:HI", default_value = "0.5:4")]
    band: FrequencyBand,
    /// Range of the target fundamental in Hz.
    #[arg(long, value_parser = parse_range, value_name = "LO:HI", default_value = "0.8:2.5")]
    f0_range: (f64, f64),
    /// Pulse width as a fraction of the period.
    #[arg(long, default_value_t = 0.12)]
    width: f64,
    #[arg(long, default_value_t = 2.0)]
    interferer_ratio: f64,
    #[arg(long, default_value_t = 0.5)]
    noise_sigma: f64,
    /// Random seed; a fresh one is drawn and reported when omitted.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; the history CSV is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 15)]
    patience: usize,
    /// Weight of the spectral entropy term.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Weight of the spectral KL term.
    #[arg(long, default_value_t = 1.0)]
    nu: f64,
    /// Weight of the out-of-band power term.
    #[arg(long, default_value_t = 1.0)]
    bw: f64,
    #[arg(long, default_value_t = 32)]
    base_channels: usize,
    /// Model input length (multiple of 8); windows are padded or cropped to it.
    #[arg(long, default_value_t = 256)]
    model_len: usize,
    #[arg(long, value_parser = parse_band, value_name = "LO:HI")]
    band: Option<FrequencyBand>,
    #[arg(long, default_value_t = 512)]
    nfft: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    signal: SignalArgs,
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Output rate unit: hz, bpm, rpm or spm.
    #[arg(long, value_parser = parse_unit, default_value = "hz")]
    unit: RateUnit,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Classical {
    Fourier,
    Acf,
    Hybrid,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[command(flatten)]
    signal: SignalArgs,
    #[arg(long, value_enum, default_value = "fourier")]
    method: Classical,
    #[command(flatten)]
    task: TaskArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum EvalMethod {
    Fourier,
    Acf,
    Hybrid,
    Neural,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "fourier")]
    method: EvalMethod,
    /// Checkpoint, required for the neural method.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Per-sample CSV (defaults to the dataset path with `.eval.csv`).
    #[arg(long)]
    per_sample: Option<PathBuf>,
    #[command(flatten)]
    task: TaskArgs,
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    #[command(flatten)]
    signal: SignalArgs,
    /// Output CSV with freq,power rows.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    nfft: Option<usize>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<Value, Failure>;

#[derive(Serialize)]
struct RunReport {
    command: &'static str,
    seed: Option<u64>,
    config: Value,
    result: Value,
    wall_time_sec: f64,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let log = Log { quiet: cli.quiet };
    let start = Instant::now();
    let (name, outcome) = match &cli.command {
        Command::Synth(a) => ("synth", synth(a, &log)),
        Command::Train(a) => ("train", train(a, &log)),
        Command::Detect(a) => ("detect", detect(a)),
        Command::Baseline(a) => ("baseline", baseline(a)),
        Command::Eval(a) => ("eval", eval(a, &log)),
        Command::Spectrum(a) => ("spectrum", spectrum(a)),
    };
    match outcome {
        Ok(mut body) => {
            let seed = body.get("seed").and_then(Value::as_u64);
            let config = body.get_mut("config").map(Value::take).unwrap_or(Value::Null);
            let result = body.get_mut("result").map(Value::take).unwrap_or(Value::Null);
            let report = RunReport { command: name, seed, config, result, wall_time_sec: start.elapsed().as_secs_f64() };
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            0
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct Log {
    quiet: bool,
}

impl Log {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn seed_or_random(seed: Option<u64>, log: &Log) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        log.say(format!("using random seed {s}"));
        s
    })
}

fn synth(a: &SynthArgs, log: &Log) -> CmdResult {
    let seed = seed_or_random(a.seed, log);
    let cfg = SyntheticConfig {
        fs: a.fs,
        win_sec: a.win_sec,
        band: a.band,
        f0_range: a.f0_range,
        width_frac: a.width,
        interferer_amp_ratio: a.interferer_ratio,
        noise_sigma: a.noise_sigma,
        n_samples: a.n,
        seed,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let ds = gen_dataset(&cfg)?;
    save_dataset(&ds, &a.out)?;
    log.say(format!("wrote {} windows of {} samples to {}", ds.len(), ds.window_len(), a.out.display()));
    Ok(json!({
        "seed": seed,
        "config": cfg,
        "result": { "path": a.out, "count": ds.len(), "window_len": ds.window_len() },
    }))
}

fn history_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    out.with_file_name(format!("{stem}.history.csv"))
}

fn train(a: &TrainArgs, log: &Log) -> CmdResult {
    let seed = seed_or_random(a.seed, log);
    let usage = |e: Error| Failure::Usage(e.to_string());
    let weights = LossWeights::new(a.lambda, a.nu, a.bw).map_err(usage)?;
    let config = UNetConfig::new(a.base_channels).map_err(usage)?;
    config.check_length(a.model_len).map_err(usage)?;
    let ds = load_dataset(&a.data)?;
    let band = a.band.unwrap_or(ds.band);
    let cfg = TrainConfig {
        lr: a.lr,
        batch_size: a.batch,
        max_epochs: a.epochs,
        patience: a.patience,
        weights,
        seed,
        nfft: a.nfft,
        band,
        model_len: a.model_len,
        ..Default::default()
    };
    cfg.validate().map_err(usage)?;
    let model = UNet::<f32>::new(config, seed)?;
    log.say(format!("training {} parameters on {} windows", model.trainable_count(), ds.len()));
    let out = train_with(model, &ds.windows, &cfg, |r| {
        log.say(format!(
            "epoch {:>3}  loss {:.5}  (se {:.4}  ds {:.4}  bw {:.4})  lr {:.2e}",
            r.epoch, r.total, r.se, r.ds, r.bw, r.lr
        ))
    })?;
    let meta = TrainingMeta { epochs: out.history.len() as u32, final_loss: out.best_loss, seed, pipeline: out.pipeline };
    save_checkpoint(&out.model, &meta, &a.out)?;
    let hist = history_path(&a.out);
    write_history_csv(&out.history, &hist)?;
    log.say(format!("best epoch {} (loss {:.5}); wrote {} and {}", out.best_epoch, out.best_loss, a.out.display(), hist.display()));
    Ok(json!({
        "seed": seed,
        "config": { "train": cfg, "base_channels": a.base_channels, "data": a.data },
        "result": {
            "checkpoint": a.out,
            "history": hist,
            "epochs": out.history.len(),
            "best_epoch": out.best_epoch,
            "best_loss": out.best_loss,
            "parameters": out.model.trainable_count(),
        },
    }))
}

fn read_signal(s: &SignalArgs) -> Result<TimeSeries, Failure> {
    if !(s.fs.is_finite() && s.fs > 0.0) {
        return Err(Failure::Usage(format!("--fs must be positive, got {}", s.fs)));
    }
    Ok(load_csv(&s.input, s.fs, s.header)?)
}

fn detection_json(r: &DetectionResult, unit: RateUnit) -> Value {
    json!({ "freq_hz": r.freq_hz, "rate": hz_to_rate(r.freq_hz, unit), "unit": unit, "confidence": r.confidence, "method": r.method })
}

fn detect(a: &DetectArgs) -> CmdResult {
    let x = read_signal(&a.signal)?;
    let ck = load_checkpoint(&a.model)?;
    let det = NeuralDetector { model: ck.model, pipeline: ck.meta.pipeline };
    let r = det.detect(&x)?;
    Ok(json!({
        "config": { "input": a.signal.input, "fs": a.signal.fs, "model": a.model, "pipeline": det.pipeline },
        "result": detection_json(&r, a.unit),
    }))
}

fn check_band(band: FrequencyBand, fs: f64) -> Result<(), Failure> {
    band.check_against(fs).map_err(|e| Failure::Usage(e.to_string()))
}

fn baseline(a: &BaselineArgs) -> CmdResult {
    let x = read_signal(&a.signal)?;
    let (band, nfft, unit) = a.task.resolve(FrequencyBand::new(0.5, 4.0).expect("valid"));
    check_band(band, x.fs())?;
    let r = match a.method {
        Classical::Fourier => detect_fourier(&x, band, nfft)?,
        Classical::Acf => detect_acf(&x, band)?,
        Classical::Hybrid => detect_hybrid(&x, band, nfft)?,
    };
    Ok(json!({
        "config": { "input": a.signal.input, "fs": a.signal.fs, "method": a.method, "band": band, "nfft": nfft },
        "result": detection_json(&r, unit),
    }))
}

fn threads() -> usize {
    std::env::var("PDET_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn eval(a: &EvalArgs, log: &Log) -> CmdResult {
    if a.method == EvalMethod::Neural && a.model.is_none() {
        return Err(Failure::Usage("--method neural needs --model".into()));
    }
    let ds = load_dataset(&a.data)?;
    let (band, nfft, unit) = a.task.resolve(ds.band);
    check_band(band, ds.fs)?;
    let workers = threads();
    let eval = match a.method {
        EvalMethod::Fourier => evaluate_with_threads(|x| detect_fourier(x, band, nfft), &ds, unit, workers)?,
        EvalMethod::Acf => evaluate_with_threads(|x| detect_acf(x, band), &ds, unit, workers)?,
        EvalMethod::Hybrid => evaluate_with_threads(|x| detect_hybrid(x, band, nfft), &ds, unit, workers)?,
        EvalMethod::Neural => {
            let ck = load_checkpoint(a.model.as_ref().expect("checked"))?;
            let det = NeuralDetector { model: ck.model, pipeline: ck.meta.pipeline };
            evaluate_with_threads(|x| det.detect(x), &ds, unit, workers)?
        }
    };
    let per_sample = a.per_sample.clone().unwrap_or_else(|| a.data.with_extension("eval.csv"));
    eval.write_csv(&per_sample)?;
    let m = eval.metrics;
    let tol = ds.fs / nfft as f64;
    log.say(format!(
        "{} windows evaluated, {} excluded; MAE {:.3} {:?}, hit rate {:.1}%",
        eval.evaluated,
        eval.excluded,
        m.mae,
        unit,
        100.0 * eval.hit_rate(tol)
    ));
    Ok(json!({
        "config": { "data": a.data, "method": a.method, "model": a.model, "band": band, "nfft": nfft, "unit": unit, "threads": workers },
        "result": {
            "mae": m.mae,
            "rmse": m.rmse,
            "rho_percent": m.pearson_rho.map(|r| 100.0 * r),
            "mape": m.mape_percent,
            "hit_rate": eval.hit_rate(tol),
            "evaluated": eval.evaluated,
            "excluded": eval.excluded,
            "per_sample": per_sample,
        },
    }))
}

fn spectrum(a: &SpectrumArgs) -> CmdResult {
    let x = read_signal(&a.signal)?;
    let nfft = a.nfft.unwrap_or_else(|| x.len().next_power_of_two());
    let spec = dft_power(&x, nfft)?;
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    w.write_record(["freq", "power"]).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for (k, p) in spec.power().iter().enumerate() {
        w.write_record([spec.bin_freq(k).to_string(), p.to_string()]).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush().map_err(Error::Io)?;
    let peak = (1..spec.power().len()).max_by(|&i, &j| spec.power()[i].total_cmp(&spec.power()[j]).then(j.cmp(&i)));
    Ok(json!({
        "config": { "input": a.signal.input, "fs": a.signal.fs, "nfft": nfft },
        "result": { "path": a.out, "bins": spec.power().len(), "resolution_hz": spec.resolution(), "peak_hz": peak.map(|k| spec.bin_freq(k)) },
    }))
}
