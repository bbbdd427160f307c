//! Training objective: spectral entropy of the output band spectrum, KL
//! divergence from the input band spectrum to the output band spectrum, and
//! the output's out-of-band power fraction. Includes the exact gradient with
//! respect to every output sample.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{FrequencyBand, TimeSeries};
use crate::spectral::{bins_for, check_nfft, dft_full, fft_in_place, DEFAULT_KL_EPS};

/// Floor added to every in-band power before normalization.
pub const POWER_FLOOR: f64 = 1e-8;

/// Weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_se: f64,
    pub nu_ds: f64,
    pub w_bw: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_se: 1.0, nu_ds: 1.0, w_bw: 1.0 }
    }
}

impl LossWeights {
    pub fn new(lambda_se: f64, nu_ds: f64, w_bw: f64) -> Result<Self> {
        let w = Self { lambda_se, nu_ds, w_bw };
        if [lambda_se, nu_ds, w_bw].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(format!("loss weights must be finite and >= 0: {w:?}")));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub se: f64,
    pub ds: f64,
    pub bw: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn combine(se: f64, ds: f64, bw: f64, w: &LossWeights) -> Self {
        Self { se, ds, bw, total: w.lambda_se * se + w.nu_ds * ds + w.w_bw * bw }
    }

    /// Arithmetic mean, accumulated in slice order.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = LossBreakdown::default();
        for it in items {
            acc.se += it.se;
            acc.ds += it.ds;
            acc.bw += it.bw;
            acc.total += it.total;
        }
        LossBreakdown { se: acc.se / n, ds: acc.ds / n, bw: acc.bw / n, total: acc.total / n }
    }
}

/// The objective bound to a sample rate, band, DFT length and weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicityLoss {
    pub fs: f64,
    pub band: FrequencyBand,
    pub nfft: usize,
    pub weights: LossWeights,
}

/// Band-normalized input spectrum, reusable across evaluations on the same window.
#[derive(Debug, Clone)]
pub struct InputSpectrum {
    probs: Vec<f64>,
    len: usize,
}

impl PeriodicityLoss {
    pub fn new(fs: f64, band: FrequencyBand, nfft: usize, weights: LossWeights) -> Result<Self> {
        band.check_against(fs)?;
        if !nfft.is_power_of_two() {
            return Err(Error::BadNfft { nfft, len: 0 });
        }
        bins_for(nfft, fs, band)?;
        Ok(Self { fs, band, nfft, weights })
    }

    fn bins(&self) -> (usize, usize) {
        bins_for(self.nfft, self.fs, self.band).expect("validated in new")
    }

    pub fn input_spectrum(&self, x: &[f64]) -> Result<InputSpectrum> {
        check_nfft(x.len(), self.nfft)?;
        let (lo, hi) = self.bins();
        let spec = dft_full(x, self.nfft);
        let band: Vec<f64> = spec[lo..=hi].iter().map(|c| c.norm_sqr()).collect();
        if !(band.iter().sum::<f64>() > 0.0) {
            return Err(Error::DegenerateOutput);
        }
        let floored: Vec<f64> = band.iter().map(|p| p + POWER_FLOOR).collect();
        let z: f64 = floored.iter().sum();
        Ok(InputSpectrum { probs: floored.iter().map(|p| p / z).collect(), len: x.len() })
    }

    pub fn evaluate(&self, y: &[f64], x: &InputSpectrum) -> Result<LossBreakdown> {
        self.run(y, x, false).map(|(b, _)| b)
    }

    /// Loss and `d total / d y_n` for every output sample.
    pub fn evaluate_with_grad(&self, y: &[f64], x: &InputSpectrum) -> Result<(LossBreakdown, Vec<f64>)> {
        self.run(y, x, true).map(|(b, g)| (b, g.expect("requested")))
    }

    fn run(&self, y: &[f64], x: &InputSpectrum, want_grad: bool) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
        if y.len() != x.len {
            return Err(Error::LengthMismatch(y.len(), x.len));
        }
        check_nfft(y.len(), self.nfft)?;
        let nfft = self.nfft;
        let half = nfft / 2;
        let (lo, hi) = self.bins();

        let spec = dft_full(y, nfft);
        let power: Vec<f64> = spec[..=half].iter().map(|c| c.norm_sqr()).collect();
        let band_raw: f64 = power[lo..=hi].iter().sum();
        if !(band_raw > 0.0) {
            return Err(Error::DegenerateOutput);
        }
        let total_power: f64 = power.iter().sum();
        let out_power = total_power - band_raw;

        let z = band_raw + POWER_FLOOR * (hi - lo + 1) as f64;
        let q: Vec<f64> = power[lo..=hi].iter().map(|s| (s + POWER_FLOOR) / z).collect();
        let p = &x.probs;

        let se = -q.iter().map(|&v| v * v.ln()).sum::<f64>();
        let ds = p
            .iter()
            .zip(&q)
            .filter(|(&pk, _)| pk > 0.0)
            .map(|(&pk, &qk)| pk * (pk / qk.max(DEFAULT_KL_EPS)).ln())
            .sum::<f64>();
        let bw = (out_power / total_power).clamp(0.0, 1.0);
        let w = &self.weights;
        let breakdown = LossBreakdown::combine(se, ds, bw, w);
        if !breakdown.total.is_finite() {
            return Err(Error::DegenerateOutput);
        }
        if !want_grad {
            return Ok((breakdown, None));
        }

        // dL/dq over the band.
        let g: Vec<f64> = q
            .iter()
            .zip(p)
            .map(|(&qk, &pk)| {
                let d_se = -(qk.ln() + 1.0);
                let d_ds = if qk > DEFAULT_KL_EPS { -pk / qk } else { 0.0 };
                w.lambda_se * d_se + w.nu_ds * d_ds
            })
            .collect();
        let gq: f64 = g.iter().zip(&q).map(|(a, b)| a * b).sum();

        // dL/dS_k for every one-sided bin.
        let mut d_s = vec![0.0; half + 1];
        for (k, ds_k) in d_s.iter_mut().enumerate() {
            let outside = k < lo || k > hi;
            *ds_k = w.w_bw * ((outside as u8 as f64) - bw) / total_power;
            if !outside {
                *ds_k += (g[k - lo] - gq) / z;
            }
        }

        // dS_k/dy_n = 2 Re(conj(X_k) e^{-j 2 pi k n / nfft}), summed over k by one FFT.
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        for k in 0..=half {
            buf[k] = spec[k].conj() * d_s[k];
        }
        fft_in_place(&mut buf, false);
        let grad = buf[..y.len()].iter().map(|c| 2.0 * c.re).collect();
        Ok((breakdown, Some(grad)))
    }
}

fn loss_for(y: &TimeSeries, x: &TimeSeries, band: FrequencyBand, nfft: usize, w: LossWeights) -> Result<PeriodicityLoss> {
    if y.len() != x.len() {
        return Err(Error::LengthMismatch(y.len(), x.len()));
    }
    PeriodicityLoss::new(y.fs(), band, nfft, w)
}

/// Loss breakdown for output `y` given the input window `x`.
pub fn periodicity_loss(
    y: &TimeSeries,
    x: &TimeSeries,
    band: FrequencyBand,
    nfft: usize,
    w: LossWeights,
) -> Result<LossBreakdown> {
    let loss = loss_for(y, x, band, nfft, w)?;
    let xs = loss.input_spectrum(x.samples())?;
    loss.evaluate(y.samples(), &xs)
}

/// Gradient of the total loss with respect to each sample of `y`.
pub fn periodicity_loss_grad(
    y: &TimeSeries,
    x: &TimeSeries,
    band: FrequencyBand,
    nfft: usize,
    w: LossWeights,
) -> Result<Vec<f64>> {
    let loss = loss_for(y, x, band, nfft, w)?;
    let xs = loss.input_spectrum(x.samples())?;
    loss.evaluate_with_grad(y.samples(), &xs).map(|(_, g)| g)
}
