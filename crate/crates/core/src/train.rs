//! Unsupervised training of the encoder on the periodicity loss, plus the
//! evaluation metrics and per-dataset evaluation.

use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::detect::DetectionResult;
use crate::error::{Error, Result};
use crate::loss::{InputSpectrum, LossBreakdown, LossWeights, PeriodicityLoss};
use crate::model::{Pipeline, UNet};
use crate::nn::{adam_step, AdamState, Mode, Tensor};
use crate::signal::{FrequencyBand, TimeSeries};
use crate::spectral::{dft_power, normalize_band};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub nfft: usize,
    pub band: FrequencyBand,
    /// Length every window is padded or cropped to before the model.
    pub model_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 15,
            lr_factor: 0.5,
            min_lr: 1e-5,
            weights: LossWeights::default(),
            seed: 0,
            nfft: 512,
            band: FrequencyBand::new(0.5, 4.0).expect("valid"),
            model_len: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr factor must be in (0, 1)");
        }
        if !(self.min_lr > 0.0) {
            return bad("min lr must be positive");
        }
        LossWeights::new(self.weights.lambda_se, self.weights.nu_ds, self.weights.w_bw)?;
        Ok(())
    }
}

/// Halves the learning rate after `patience` epochs without a new strict best.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub best: f64,
    pub streak: usize,
    patience: usize,
    factor: f64,
    min_lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScheduleEvent {
    pub improved: bool,
    pub reduced: bool,
    /// The learning rate has reached its floor.
    pub exhausted: bool,
}

impl PlateauSchedule {
    pub fn new(lr: f64, patience: usize, factor: f64, min_lr: f64) -> Self {
        Self { lr, best: f64::INFINITY, streak: 0, patience, factor, min_lr }
    }

    pub fn observe(&mut self, loss: f64) -> ScheduleEvent {
        let mut ev = ScheduleEvent::default();
        if loss < self.best {
            self.best = loss;
            self.streak = 0;
            ev.improved = true;
            return ev;
        }
        self.streak += 1;
        if self.streak >= self.patience {
            self.streak = 0;
            self.lr = (self.lr * self.factor).max(self.min_lr);
            ev.reduced = true;
            ev.exhausted = self.lr <= self.min_lr;
        }
        ev
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub se: f64,
    pub ds: f64,
    pub bw: f64,
    pub total: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot from the epoch with the lowest mean training loss.
    pub model: UNet<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub pipeline: Pipeline,
}

pub fn train(model: UNet<f32>, windows: &[TimeSeries], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, windows, cfg, |_| {})
}

/// Trains on unlabeled windows; `on_epoch` sees every history record as it
/// is produced.
pub fn train_with(
    mut model: UNet<f32>,
    windows: &[TimeSeries],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = windows.first().ok_or_else(|| Error::InvalidInput("no training windows".into()))?;
    let fs = first.fs();
    model.config().check_length(cfg.model_len)?;
    let pipeline = Pipeline::new(fs, cfg.band, cfg.nfft, cfg.model_len);
    let loss = PeriodicityLoss::new(fs, cfg.band, cfg.nfft, cfg.weights)?;

    let mut inputs: Vec<Vec<f32>> = Vec::with_capacity(windows.len());
    let mut spectra: Vec<InputSpectrum> = Vec::with_capacity(windows.len());
    for w in windows {
        let x = pipeline.prepare(w)?;
        spectra.push(loss.input_spectrum(x.samples())?);
        inputs.push(x.samples().iter().map(|&v| v as f32).collect());
    }

    let t = cfg.model_len;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut adam = AdamState::new(model.params(), cfg.lr);
    let mut schedule = PlateauSchedule::new(cfg.lr, cfg.patience, cfg.lr_factor, cfg.min_lr);
    let mut history = Vec::new();
    let mut best = (model.clone(), 0usize);

    for epoch in 1..=cfg.max_epochs {
        adam.lr = schedule.lr;
        order.shuffle(&mut rng);
        let mut parts = Vec::with_capacity(windows.len());
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let b = batch.len();
            let mut data = Vec::with_capacity(b * t);
            for &i in batch {
                data.extend_from_slice(&inputs[i]);
            }
            let mut pass = model.forward(Tensor::from_vec([b, 1, t], data)?, Mode::Train)?;
            let out = pass.tape.value(pass.output).clone();
            let mut grad = Vec::with_capacity(b * t);
            for (k, &i) in batch.iter().enumerate() {
                let y: Vec<f64> = out.row(k, 0).iter().map(|&v| v as f64).collect();
                let (br, g) = loss.evaluate_with_grad(&y, &spectra[i]).map_err(|e| match e {
                    Error::DegenerateOutput => Error::DegenerateOutputAt { epoch, batch: bi },
                    e => e,
                })?;
                if !br.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteLoss { epoch, batch: bi });
                }
                grad.extend(g.iter().map(|&v| (v / b as f64) as f32));
                parts.push(br);
            }
            model.params_mut().zero_grad();
            pass.tape.backward(model.params_mut(), pass.output, Tensor::from_vec([b, 1, t], grad)?)?;
            model.commit_stats(&pass.stats);
            adam_step(model.params_mut(), &mut adam);
        }
        let m = LossBreakdown::mean(&parts);
        let rec = EpochRecord { epoch, se: m.se, ds: m.ds, bw: m.bw, total: m.total, lr: schedule.lr };
        on_epoch(&rec);
        history.push(rec);
        let ev = schedule.observe(m.total);
        if ev.improved {
            best = (model.clone(), epoch);
        }
        if ev.exhausted {
            break;
        }
    }
    Ok(TrainOutcome { model: best.0, best_epoch: best.1, best_loss: schedule.best, history, pipeline })
}

pub fn write_history_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    for r in history {
        w.serialize(r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateUnit {
    Hz,
    Bpm,
    Rpm,
    Spm,
}

impl FromStr for RateUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hz" => Ok(Self::Hz),
            "bpm" => Ok(Self::Bpm),
            "rpm" => Ok(Self::Rpm),
            "spm" => Ok(Self::Spm),
            _ => Err(Error::InvalidInput(format!("unknown unit {s:?} (expected hz, bpm, rpm or spm)"))),
        }
    }
}

/// Per-minute units multiply by 60.
pub fn hz_to_rate(freq_hz: f64, unit: RateUnit) -> f64 {
    match unit {
        RateUnit::Hz => freq_hz,
        RateUnit::Bpm | RateUnit::Rpm | RateUnit::Spm => freq_hz * 60.0,
    }
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty sequences".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok((pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64).sqrt())
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    if truth.contains(&0.0) {
        return Err(Error::ZeroTruth);
    }
    Ok(100.0 * pred.iter().zip(truth).map(|(p, t)| ((p - t) / t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (a, b) = (p - mp, t - mt);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantSequence);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// `None` when either sequence is constant.
    pub pearson_rho: Option<f64>,
    /// `None` when a truth value is zero.
    pub mape_percent: Option<f64>,
}

impl Metrics {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            mae: mae(pred, truth)?,
            rmse: rmse(pred, truth)?,
            pearson_rho: pearson(pred, truth).ok(),
            mape_percent: mape(pred, truth).ok(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub truth_hz: f64,
    pub pred_hz: Option<f64>,
    pub confidence: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub unit: RateUnit,
    pub metrics: Metrics,
    pub evaluated: usize,
    pub excluded: usize,
    pub records: Vec<SampleRecord>,
}

impl Evaluation {
    /// Fraction of evaluated samples within `tol_hz` of the truth.
    pub fn hit_rate(&self, tol_hz: f64) -> f64 {
        let hits = self
            .records
            .iter()
            .filter_map(|r| r.pred_hz.map(|p| (p - r.truth_hz).abs() <= tol_hz + 1e-9))
            .filter(|&h| h)
            .count();
        hits as f64 / self.evaluated.max(1) as f64
    }

    /// Mean absolute error in Hz over evaluated samples.
    pub fn mae_hz(&self) -> f64 {
        let errs: Vec<f64> = self.records.iter().filter_map(|r| r.pred_hz.map(|p| (p - r.truth_hz).abs())).collect();
        errs.iter().sum::<f64>() / errs.len().max(1) as f64
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
        w.write_record(["index", "truth_hz", "pred_hz", "truth_rate", "pred_rate", "confidence", "error"]).map_err(csv_io)?;
        for r in &self.records {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                r.index.to_string(),
                r.truth_hz.to_string(),
                opt(r.pred_hz),
                hz_to_rate(r.truth_hz, self.unit).to_string(),
                opt(r.pred_hz.map(|p| hz_to_rate(p, self.unit))),
                opt(r.confidence),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `detector` on every window. Failing windows are recorded and
/// excluded from the metrics.
pub fn evaluate(
    detector: impl Fn(&TimeSeries) -> Result<DetectionResult> + Sync,
    dataset: &LabeledDataset,
    unit: RateUnit,
) -> Result<Evaluation> {
    evaluate_with_threads(detector, dataset, unit, 1)
}

/// [`evaluate`] spread over up to `threads` workers; results keep dataset order.
pub fn evaluate_with_threads(
    detector: impl Fn(&TimeSeries) -> Result<DetectionResult> + Sync,
    dataset: &LabeledDataset,
    unit: RateUnit,
    threads: usize,
) -> Result<Evaluation> {
    let labels = dataset.labels.as_ref().ok_or_else(|| Error::InvalidInput("dataset has no labels".into()))?;
    if labels.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let chunk = dataset.len().div_ceil(threads.max(1));
    let detector = &detector;
    let results: Vec<Result<DetectionResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = dataset
            .windows
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(detector).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("detector panicked")).collect()
    });

    let mut records = Vec::with_capacity(labels.len());
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for (index, (res, &label)) in results.into_iter().zip(labels).enumerate() {
        match res {
            Ok(r) => {
                pred.push(hz_to_rate(r.freq_hz, unit));
                truth.push(hz_to_rate(label, unit));
                records.push(SampleRecord { index, truth_hz: label, pred_hz: Some(r.freq_hz), confidence: Some(r.confidence), error: None });
            }
            Err(e) => records.push(SampleRecord { index, truth_hz: label, pred_hz: None, confidence: None, error: Some(e.to_string()) }),
        }
    }
    if pred.is_empty() {
        return Err(Error::AllSamplesFailed);
    }
    Ok(Evaluation {
        unit,
        metrics: Metrics::compute(&pred, &truth)?,
        evaluated: pred.len(),
        excluded: labels.len() - pred.len(),
        records,
    })
}

/// Band-normalized power spectra of the model outputs for `windows`.
pub fn output_band_spectra(model: &UNet<f32>, pipeline: &Pipeline, windows: &[TimeSeries]) -> Result<Vec<Vec<f64>>> {
    let band = pipeline.band()?;
    windows
        .iter()
        .map(|w| {
            let x = pipeline.prepare(w)?;
            let input = Tensor::from_vec([1, 1, x.len()], x.samples().iter().map(|&v| v as f32).collect())?;
            let z: Vec<f64> = model.predict(input)?.data().iter().map(|&v| v as f64).collect();
            let spec = dft_power(&TimeSeries::new(z, x.fs())?, pipeline.nfft)?;
            Ok(normalize_band(&spec, band)?.probs().to_vec())
        })
        .collect()
}

/// Median cosine similarity over all pairs of vectors; near 1 means the
/// outputs collapsed onto one spectrum.
pub fn median_pairwise_cosine(vectors: &[Vec<f64>]) -> Option<f64> {
    let norms: Vec<f64> = vectors.iter().map(|v| v.iter().map(|a| a * a).sum::<f64>().sqrt()).collect();
    let mut sims = Vec::new();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            let d: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            sims.push(d / (norms[i] * norms[j]).max(f64::MIN_POSITIVE));
        }
    }
    if sims.is_empty() {
        return None;
    }
    sims.sort_by(f64::total_cmp);
    let n = sims.len();
    Some(if n % 2 == 1 { sims[n / 2] } else { 0.5 * (sims[n / 2 - 1] + sims[n / 2]) })
}
