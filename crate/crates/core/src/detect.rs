//! Frequency estimators: band-limited periodogram argmax, autocorrelation
//! peak, a hybrid of the two, and the neural detector (periodogram argmax of
//! the encoder output).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Pipeline, UNet};
use crate::nn::{Scalar, Tensor};
use crate::signal::{FrequencyBand, TimeSeries};
use crate::spectral::{autocorr_normalized, band_bins, dft_power, PowerSpectrum};

/// Hybrid detector: number of ACF lags re-scored on the periodogram.
pub const HYBRID_CANDIDATES: usize = 3;
/// Hybrid detector: below this ACF peak value the Fourier answer is returned.
pub const HYBRID_MIN_ACF: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fourier,
    Acf,
    Hybrid,
    Neural,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub freq_hz: f64,
    /// Peak power over total in-band power (ACF: peak correlation, floored at 0).
    pub confidence: f64,
    pub method: Method,
}

struct BandPeak {
    bin: usize,
    peak: f64,
    band_power: f64,
}

fn band_peak(spec: &PowerSpectrum, band: FrequencyBand) -> Result<BandPeak> {
    let (lo, hi) = band_bins(spec, band)?;
    let p = &spec.power()[lo..=hi];
    let band_power: f64 = p.iter().sum();
    if !(band_power > 0.0) {
        return Err(Error::ZeroBandPower);
    }
    // strict comparison keeps the lowest bin on ties
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    Ok(BandPeak { bin: lo + best, peak: p[best], band_power })
}

/// Frequency of the largest in-band periodogram bin.
pub fn detect_fourier(x: &TimeSeries, band: FrequencyBand, nfft: usize) -> Result<DetectionResult> {
    let spec = dft_power(x, nfft)?;
    let pk = band_peak(&spec, band)?;
    Ok(DetectionResult {
        freq_hz: spec.bin_freq(pk.bin),
        confidence: pk.peak / pk.band_power,
        method: Method::Fourier,
    })
}

/// Inclusive lag range `[fs/hi, fs/lo]`, capped at half the window.
fn lag_range(len: usize, fs: f64, band: FrequencyBand) -> Result<(usize, usize)> {
    let lo = ((fs / band.hi() - 1e-9).ceil() as usize).max(1);
    let hi_f = if band.lo() > 0.0 { (fs / band.lo() + 1e-9).floor() } else { f64::INFINITY };
    let hi = (hi_f.min((len / 2) as f64)) as usize;
    if lo > hi {
        return Err(Error::EmptyBand);
    }
    Ok((lo, hi))
}

fn lag_to_freq(fs: f64, lag: usize, band: FrequencyBand) -> f64 {
    (fs / lag as f64).clamp(band.lo(), band.hi())
}

/// `fs / lag` of the autocorrelation maximum over the band's lag range.
pub fn detect_acf(x: &TimeSeries, band: FrequencyBand) -> Result<DetectionResult> {
    let (r, lo, hi) = acf_in_range(x, band)?;
    let best = first_argmax(&r, lo, hi);
    Ok(DetectionResult {
        freq_hz: lag_to_freq(x.fs(), best, band),
        confidence: r[best].clamp(0.0, 1.0),
        method: Method::Acf,
    })
}

/// Index of the maximum over `lo..=hi`; the earliest index wins ties.
fn first_argmax(r: &[f64], lo: usize, hi: usize) -> usize {
    (lo..=hi).fold(lo, |b, t| if r[t] > r[b] { t } else { b })
}

fn acf_in_range(x: &TimeSeries, band: FrequencyBand) -> Result<(Vec<f64>, usize, usize)> {
    let (lo, hi) = lag_range(x.len(), x.fs(), band)?;
    let r = autocorr_normalized(x, hi)?;
    Ok((r, lo, hi))
}

/// The strongest autocorrelation lags, each re-scored by periodogram power
/// summed over the implied bin and its two neighbours. The winner reports
/// the largest bin inside its window. Weak autocorrelation defers to
/// [`detect_fourier`].
pub fn detect_hybrid(x: &TimeSeries, band: FrequencyBand, nfft: usize) -> Result<DetectionResult> {
    let spec = dft_power(x, nfft)?;
    let total = band_peak(&spec, band)?;
    let (r, lo, hi) = acf_in_range(x, band)?;
    let mut lags: Vec<usize> = (lo..=hi).collect();
    lags.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    if r[lags[0]] < HYBRID_MIN_ACF {
        return detect_fourier(x, band, nfft);
    }
    let (blo, bhi) = band_bins(&spec, band)?;
    let power = spec.power();
    let mut best: Option<(f64, usize)> = None;
    for &tau in lags.iter().take(HYBRID_CANDIDATES) {
        let centre = (x.fs() / tau as f64 / spec.resolution()).round() as usize;
        let (wlo, whi) = (centre.saturating_sub(1).clamp(blo, bhi), (centre + 1).clamp(blo, bhi));
        let score: f64 = power[wlo..=whi].iter().sum();
        let mut bin = wlo;
        for k in wlo..=whi {
            if power[k] > power[bin] {
                bin = k;
            }
        }
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, bin));
        }
    }
    let (_, bin) = best.expect("at least one lag");
    Ok(DetectionResult {
        freq_hz: spec.bin_freq(bin),
        confidence: power[bin] / total.band_power,
        method: Method::Hybrid,
    })
}

/// Maps a preprocessed window to a same-length output.
pub trait Encoder {
    fn encode(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl<T: Scalar> Encoder for UNet<T> {
    fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let input = Tensor::from_vec([1, 1, x.len()], x.iter().map(|&v| T::from_f64(v)).collect())?;
        Ok(self.predict(input)?.data().iter().map(|v| v.as_f64()).collect())
    }
}

/// Periodogram argmax of the encoder output. `x` must already be
/// preprocessed the way the encoder was trained.
pub fn detect_neural(model: &impl Encoder, x: &TimeSeries, band: FrequencyBand, nfft: usize) -> Result<DetectionResult> {
    let z = TimeSeries::new(model.encode(x.samples())?, x.fs())?;
    let r = detect_fourier(&z, band, nfft)?;
    Ok(DetectionResult { method: Method::Neural, ..r })
}

/// A trained encoder bundled with its preprocessing, accepting raw windows.
#[derive(Debug, Clone)]
pub struct NeuralDetector {
    pub model: UNet<f32>,
    pub pipeline: Pipeline,
}

impl NeuralDetector {
    pub fn detect(&self, raw: &TimeSeries) -> Result<DetectionResult> {
        let x = self.pipeline.prepare(raw)?;
        detect_neural(&self.model, &x, self.pipeline.band()?, self.pipeline.nfft)
    }
}
