//! Power spectra, band-normalized spectral distributions and the quantities
//! built on them: spectral entropy, spectral KL divergence, out-of-band power
//! and autocorrelation (direct and through the power spectrum).

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::{mean_var, FrequencyBand, TimeSeries};

pub const DEFAULT_KL_EPS: f64 = 1e-8;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// In-place complex FFT of arbitrary length (forward: `e^{-j...}`).
pub(crate) fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    plan(buf.len(), inverse).process(buf);
}

/// Zero-padded forward DFT of a real sequence, full length `nfft`.
pub(crate) fn dft_full(x: &[f64], nfft: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for (b, &v) in buf.iter_mut().zip(x) {
        b.re = v;
    }
    fft_in_place(&mut buf, false);
    buf
}

pub(crate) fn check_nfft(len: usize, nfft: usize) -> Result<()> {
    if nfft < len || !nfft.is_power_of_two() {
        return Err(Error::BadNfft { nfft, len });
    }
    Ok(())
}

/// One-sided power spectrum `|X_k|^2`, `k = 0..=nfft/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    power: Vec<f64>,
    nfft: usize,
    fs: f64,
}

impl PowerSpectrum {
    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn bin_freq(&self, k: usize) -> f64 {
        k as f64 * self.fs / self.nfft as f64
    }

    pub fn resolution(&self) -> f64 {
        self.fs / self.nfft as f64
    }

    pub fn total(&self) -> f64 {
        self.power.iter().sum()
    }

    #[cfg(test)]
    pub(crate) fn from_parts(power: Vec<f64>, nfft: usize, fs: f64) -> Self {
        Self { power, nfft, fs }
    }
}

/// Power spectrum of `ts`, zero-padded to `nfft` (a power of two, `>= len`).
pub fn dft_power(ts: &TimeSeries, nfft: usize) -> Result<PowerSpectrum> {
    check_nfft(ts.len(), nfft)?;
    Ok(power_of(ts.samples(), nfft, ts.fs()))
}

pub(crate) fn power_of(x: &[f64], nfft: usize, fs: f64) -> PowerSpectrum {
    let spec = dft_full(x, nfft);
    let power = spec[..=nfft / 2].iter().map(|c| c.norm_sqr()).collect();
    PowerSpectrum { power, nfft, fs }
}

/// Inclusive bin range `(lo, hi)` of bins whose centre frequency lies in `band`.
pub fn band_bins(spec: &PowerSpectrum, band: FrequencyBand) -> Result<(usize, usize)> {
    bins_for(spec.nfft, spec.fs, band)
}

pub(crate) fn bins_for(nfft: usize, fs: f64, band: FrequencyBand) -> Result<(usize, usize)> {
    let scale = nfft as f64 / fs;
    let lo = (band.lo() * scale - 1e-9).ceil().max(0.0) as usize;
    let hi_f = (band.hi() * scale + 1e-9).floor();
    if hi_f < 0.0 {
        return Err(Error::EmptyBand);
    }
    let hi = (hi_f as usize).min(nfft / 2);
    if lo > hi {
        return Err(Error::EmptyBand);
    }
    Ok((lo, hi))
}

/// A probability distribution over the inclusive bin range `[bin_lo, bin_hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSpectrum {
    probs: Vec<f64>,
    bin_lo: usize,
    bin_hi: usize,
    nfft: usize,
    fs: f64,
}

impl NormalizedSpectrum {
    /// Normalizes `weights` (non-negative, positive sum) into a distribution.
    pub fn from_weights(weights: &[f64], bin_lo: usize, nfft: usize, fs: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyBand);
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroBandPower);
        }
        Ok(Self {
            probs: weights.iter().map(|w| w / total).collect(),
            bin_lo,
            bin_hi: bin_lo + weights.len() - 1,
            nfft,
            fs,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn bins(&self) -> (usize, usize) {
        (self.bin_lo, self.bin_hi)
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `power[k] / sum(power[band])` over the band's bins.
pub fn normalize_band(spec: &PowerSpectrum, band: FrequencyBand) -> Result<NormalizedSpectrum> {
    let (lo, hi) = band_bins(spec, band)?;
    NormalizedSpectrum::from_weights(&spec.power[lo..=hi], lo, spec.nfft, spec.fs)
}

/// Shannon entropy in nats, `0 log 0 = 0`.
pub fn spectral_entropy(p: &NormalizedSpectrum) -> f64 {
    entropy(&p.probs)
}

pub(crate) fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// `sum p log(p / max(q, eps))`, skipping bins where `p = 0`.
pub fn spectral_kl(p: &NormalizedSpectrum, q: &NormalizedSpectrum, eps: f64) -> Result<f64> {
    if p.bins() != q.bins() || p.nfft != q.nfft {
        return Err(Error::BinMismatch);
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("eps must be positive".into()));
    }
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * (pk / qk.max(eps)).ln())
        .sum())
}

/// Fraction of the one-sided power lying outside `band`.
pub fn out_of_band_power(spec: &PowerSpectrum, band: FrequencyBand) -> Result<f64> {
    let total = spec.total();
    if !(total > 0.0) {
        return Err(Error::ZeroTotalPower);
    }
    let outside: f64 = spec
        .power
        .iter()
        .enumerate()
        .filter(|(k, _)| !band.contains(spec.bin_freq(*k)))
        .map(|(_, p)| p)
        .sum();
    Ok((outside / total).clamp(0.0, 1.0))
}

/// Mean-removed autocorrelation normalized by the sum of squares, lags `0..=max_lag`.
pub fn autocorr_normalized(ts: &TimeSeries, max_lag: usize) -> Result<Vec<f64>> {
    let n = ts.len();
    if max_lag < 1 || max_lag >= n {
        return Err(Error::InvalidInput(format!("max_lag must be in 1..{n}, got {max_lag}")));
    }
    let (mean, var) = mean_var(ts.samples());
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let c: Vec<f64> = ts.samples().iter().map(|v| v - mean).collect();
    let denom: f64 = c.iter().map(|v| v * v).sum();
    Ok((0..=max_lag)
        .map(|tau| c[..n - tau].iter().zip(&c[tau..]).map(|(a, b)| a * b).sum::<f64>() / denom)
        .collect())
}

/// Circular autocorrelation as the inverse DFT of `|DFT(x)|^2` (length `N`, no padding).
pub fn circular_acf_via_spectrum(ts: &TimeSeries) -> Vec<f64> {
    let n = ts.len();
    let mut buf = dft_full(ts.samples(), n);
    for c in &mut buf {
        *c = Complex64::new(c.norm_sqr(), 0.0);
    }
    fft_in_place(&mut buf, true);
    buf.iter().map(|c| c.re / n as f64).collect()
}
