//! Uniformly sampled time series and the preprocessing applied before
//! training or detection: segmentation, normalization, Butterworth bandpass,
//! derivative-square beat emphasis and linear resampling.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A non-empty, finite, uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    fs: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidInput(format!("sample rate must be positive, got {fs}")));
        }
        if samples.is_empty() {
            return Err(Error::SignalTooShort { needed: 1, got: 0 });
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, fs })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    /// Mean and population variance.
    pub fn mean_var(&self) -> (f64, f64) {
        mean_var(&self.samples)
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self { samples, fs: self.fs }
    }
}

pub(crate) fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// A closed frequency interval `[lo, hi]` in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    lo: f64,
    hi: f64,
}

impl FrequencyBand {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 {
            return Err(Error::InvalidInput(format!("band edges must be finite and non-negative: {lo}..{hi}")));
        }
        if lo >= hi {
            return Err(Error::InvalidInput("lo must be < hi".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo && f <= self.hi
    }

    /// Checks `hi <= fs/2`.
    pub fn check_against(&self, fs: f64) -> Result<()> {
        if self.hi > fs / 2.0 {
            return Err(Error::BandOutOfRange { lo: self.lo, hi: self.hi, fs });
        }
        Ok(())
    }
}

/// Sliding window length and hop, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    win_sec: f64,
    shift_sec: f64,
}

impl WindowSpec {
    pub fn new(win_sec: f64, shift_sec: f64) -> Result<Self> {
        if !(win_sec > 0.0 && shift_sec > 0.0 && shift_sec <= win_sec) {
            return Err(Error::InvalidInput(format!(
                "need win_sec > 0 and 0 < shift_sec <= win_sec, got {win_sec}/{shift_sec}"
            )));
        }
        Ok(Self { win_sec, shift_sec })
    }

    pub fn win_sec(&self) -> f64 {
        self.win_sec
    }

    pub fn shift_sec(&self) -> f64 {
        self.shift_sec
    }
}

/// Cuts `ts` into windows of `round(win_sec*fs)` samples every `round(shift_sec*fs)`
/// samples. The tail remainder is dropped.
pub fn segment(ts: &TimeSeries, spec: WindowSpec) -> Result<Vec<TimeSeries>> {
    let w = (spec.win_sec * ts.fs).round() as usize;
    let s = ((spec.shift_sec * ts.fs).round() as usize).max(1);
    if w == 0 {
        return Err(Error::InvalidInput("window shorter than one sample".into()));
    }
    let l = ts.len();
    if l < w {
        return Err(Error::SignalTooShort { needed: w, got: l });
    }
    let count = (l - w) / s + 1;
    Ok((0..count)
        .map(|i| ts.with_samples(ts.samples[i * s..i * s + w].to_vec()))
        .collect())
}

/// `(x - mean) / std` with the population standard deviation.
pub fn zscore(ts: &TimeSeries) -> Result<TimeSeries> {
    let (mean, var) = ts.mean_var();
    if !(var > 0.0) || var.sqrt() <= f64::EPSILON * mean.abs().max(1.0) {
        return Err(Error::ZeroVariance);
    }
    let sd = var.sqrt();
    Ok(ts.with_samples(ts.samples.iter().map(|v| (v - mean) / sd).collect()))
}

/// Rescales to the `[0, 1]` range.
pub fn minmax01(ts: &TimeSeries) -> Result<TimeSeries> {
    let (min, max) = ts
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(max > min) {
        return Err(Error::ZeroVariance);
    }
    let span = max - min;
    Ok(ts.with_samples(ts.samples.iter().map(|v| (v - min) / span).collect()))
}

/// `(x[n+1] - x[n])^2`, one sample shorter than the input.
pub fn diff_square(ts: &TimeSeries) -> Result<TimeSeries> {
    if ts.len() < 2 {
        return Err(Error::SignalTooShort { needed: 2, got: ts.len() });
    }
    Ok(ts.with_samples(ts.samples.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).collect()))
}

/// Linear interpolation onto a `fs_out` grid. First and last samples are kept
/// as endpoints.
pub fn resample_linear(ts: &TimeSeries, fs_out: f64) -> Result<TimeSeries> {
    if !(fs_out.is_finite() && fs_out > 0.0) {
        return Err(Error::InvalidInput(format!("output rate must be positive, got {fs_out}")));
    }
    let l = ts.len();
    if fs_out == ts.fs || l == 1 {
        return TimeSeries::new(ts.samples.clone(), fs_out);
    }
    let span = (l - 1) as f64;
    let n_out = ((span * fs_out / ts.fs).round() as usize).max(1) + 1;
    let step = span / (n_out - 1) as f64;
    let x = &ts.samples;
    let out = (0..n_out)
        .map(|i| {
            if i == n_out - 1 {
                return x[l - 1];
            }
            let pos = i as f64 * step;
            let j = (pos.floor() as usize).min(l - 2);
            let frac = pos - j as f64;
            x[j] + (x[j + 1] - x[j]) * frac
        })
        .collect();
    TimeSeries::new(out, fs_out)
}

/// Zero-pads symmetrically (extra sample on the right) or crops the centre to
/// exactly `n` samples.
pub fn fit_length(x: &[f64], n: usize) -> Vec<f64> {
    let l = x.len();
    if l >= n {
        let start = (l - n) / 2;
        return x[start..start + n].to_vec();
    }
    let left = (n - l) / 2;
    let mut out = vec![0.0; n];
    out[left..left + l].copy_from_slice(x);
    out
}

/// One second-order section, direct form II transposed. `a0` is normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn run(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + s1;
            s1 = self.b[1] * input - self.a[0] * y + s2;
            s2 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = 1.0 + z_inv * (self.a[0] + z_inv * self.a[1]);
        num / den
    }
}

/// Designs the two sections of a 4th-order Butterworth bandpass (2nd-order
/// prototype) using the bilinear transform with pre-warped edges.
pub fn butterworth4_bandpass_sections(band: FrequencyBand, fs: f64) -> Result<[Biquad; 2]> {
    if band.hi >= fs / 2.0 || band.lo <= 0.0 {
        return Err(Error::BandOutOfRange { lo: band.lo, hi: band.hi, fs });
    }
    let k = 2.0 * fs;
    let w1 = k * (PI * band.lo / fs).tan();
    let w2 = k * (PI * band.hi / fs).tan();
    let bw = w2 - w1;
    let w0sq = w1 * w2;

    // Upper-half-plane prototype pole; its conjugate yields the conjugate pair.
    let proto = Complex64::from_polar(1.0, 3.0 * PI / 4.0);
    let pb = proto * bw;
    let disc = (pb * pb - 4.0 * w0sq).sqrt();
    let analog = [(pb + disc) / 2.0, (pb - disc) / 2.0];

    let mut sections = analog.map(|s| {
        let z = (k + s) / (k - s);
        Biquad { b: [1.0, 0.0, -1.0], a: [-2.0 * z.re, z.norm_sqr()] }
    });

    // Unity gain at the digital image of the analog centre frequency.
    let wc = 2.0 * (w0sq.sqrt() / k).atan();
    let z_inv = Complex64::from_polar(1.0, -wc);
    let g = sections.iter().map(|s| s.response(z_inv)).product::<Complex64>().norm();
    let per = 1.0 / g.sqrt();
    for s in &mut sections {
        for b in &mut s.b {
            *b *= per;
        }
    }
    Ok(sections)
}

/// Causal 4th-order Butterworth bandpass. Output length equals input length.
pub fn bandpass_butterworth4(ts: &TimeSeries, band: FrequencyBand) -> Result<TimeSeries> {
    let sections = butterworth4_bandpass_sections(band, ts.fs)?;
    let mut y = ts.samples.clone();
    for s in &sections {
        s.run(&mut y);
    }
    Ok(ts.with_samples(y))
}

/// Magnitude response of the designed filter at `f` Hz.
pub fn bandpass_gain(band: FrequencyBand, fs: f64, f: f64) -> Result<f64> {
    let sections = butterworth4_bandpass_sections(band, fs)?;
    let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f / fs);
    Ok(sections.iter().map(|s| s.response(z_inv)).product::<Complex64>().norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(v: &[f64], fs: f64) -> TimeSeries {
        TimeSeries::new(v.to_vec(), fs).unwrap()
    }

    fn sine(f: f64, fs: f64, n: usize) -> TimeSeries {
        ts(&(0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect::<Vec<_>>(), fs)
    }

    /// |H|^2 = 1 / (1 + ((W^2 - W0^2) / (W * BW))^4) on the pre-warped axis.
    fn analytic_gain(band: FrequencyBand, fs: f64, f: f64) -> f64 {
        let k = 2.0 * fs;
        let warp = |x: f64| k * (PI * x / fs).tan();
        let (w1, w2, w) = (warp(band.lo()), warp(band.hi()), warp(f));
        let r = (w * w - w1 * w2) / (w * (w2 - w1));
        (1.0 / (1.0 + r.powi(4))).sqrt()
    }

    fn steady_amplitude(y: &[f64]) -> f64 {
        y[y.len() / 2..].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn rejects_bad_series() {
        assert!(TimeSeries::new(vec![], 1.0).is_err());
        assert!(TimeSeries::new(vec![1.0], 0.0).is_err());
        assert!(TimeSeries::new(vec![f64::NAN], 1.0).is_err());
    }

    #[test]
    fn band_validation() {
        assert!(FrequencyBand::new(4.0, 0.5).is_err());
        assert!(FrequencyBand::new(-1.0, 0.5).is_err());
        let b = FrequencyBand::new(0.5, 13.0).unwrap();
        assert!(matches!(b.check_against(25.0), Err(Error::BandOutOfRange { .. })));
    }

    #[test]
    fn segment_counts() {
        let x = ts(&vec![0.0; 700], 25.0);
        let spec = WindowSpec::new(8.0, 2.0).unwrap();
        let w = segment(&x, spec).unwrap();
        assert_eq!(w.len(), 11);
        assert!(w.iter().all(|s| s.len() == 200 && s.fs() == 25.0));

        let x = ts(&vec![0.0; 200], 25.0);
        assert_eq!(segment(&x, spec).unwrap().len(), 1);

        let x = ts(&vec![0.0; 150], 25.0);
        assert!(matches!(segment(&x, spec), Err(Error::SignalTooShort { .. })));
    }

    #[test]
    fn segment_formula_exhaustive() {
        for l in 1..=64usize {
            let x = ts(&(0..l).map(|i| i as f64).collect::<Vec<_>>(), 1.0);
            for w in 1..=l {
                for s in 1..=w {
                    let spec = WindowSpec::new(w as f64, s as f64).unwrap();
                    let out = segment(&x, spec).unwrap();
                    assert_eq!(out.len(), (l - w) / s + 1);
                    for (i, win) in out.iter().enumerate() {
                        assert_eq!(win.samples()[0], (i * s) as f64);
                        assert_eq!(win.len(), w);
                    }
                }
            }
        }
    }

    #[test]
    fn fit_length_pads_and_crops() {
        assert_eq!(fit_length(&[1.0, 2.0], 5), vec![0.0, 1.0, 2.0, 0.0, 0.0]);
        assert_eq!(fit_length(&[1.0, 2.0, 3.0, 4.0], 2), vec![2.0, 3.0]);
        let x: Vec<f64> = (0..200).map(|v| v as f64).collect();
        let y = fit_length(&x, 256);
        assert_eq!(&y[28..228], x.as_slice());
    }

    #[test]
    fn zscore_examples() {
        let z = zscore(&ts(&[1.0, 2.0, 3.0], 1.0)).unwrap();
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in z.samples().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(zscore(&ts(&[5.0, 5.0, 5.0], 1.0)), Err(Error::ZeroVariance)));
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax01(&ts(&[2.0, 4.0, 6.0], 1.0)).unwrap().samples(), &[0.0, 0.5, 1.0]);
        assert_eq!(minmax01(&ts(&[0.0, 1.0], 1.0)).unwrap().samples(), &[0.0, 1.0]);
        assert!(matches!(minmax01(&ts(&[3.0, 3.0], 1.0)), Err(Error::ZeroVariance)));
    }

    #[test]
    fn diff_square_examples() {
        assert_eq!(diff_square(&ts(&[0.0, 1.0, 0.0], 1.0)).unwrap().samples(), &[1.0, 1.0]);
        assert_eq!(diff_square(&ts(&[2.0; 5], 1.0)).unwrap().samples(), &[0.0; 4]);
        assert!(matches!(diff_square(&ts(&[1.0], 1.0)), Err(Error::SignalTooShort { .. })));
    }

    #[test]
    fn resample_examples() {
        let r = resample_linear(&ts(&[0.0, 1.0], 1.0), 2.0).unwrap();
        assert_eq!(r.samples(), &[0.0, 0.5, 1.0]);
        assert_eq!(r.fs(), 2.0);
        let x = ts(&[3.0, 1.0, 4.0, 1.0, 5.0], 7.0);
        assert_eq!(resample_linear(&x, 7.0).unwrap(), x);
    }

    #[test]
    fn resample_keeps_duration() {
        let x = sine(1.25, 25.0, 200);
        for fs_out in [10.0, 33.0, 64.0, 100.0] {
            let r = resample_linear(&x, fs_out).unwrap();
            let d_in = (x.len() - 1) as f64 / x.fs();
            let d_out = (r.len() - 1) as f64 / fs_out;
            assert!((d_in - d_out).abs() <= 1.0 / fs_out, "{fs_out}");
        }
    }

    #[test]
    fn butterworth_gain_matches_analytic_response() {
        let band = FrequencyBand::new(0.5, 4.0).unwrap();
        for f in [0.1, 0.5, 1.0, 1.5, 2.5, 4.0, 6.0, 10.0, 12.0] {
            let g = bandpass_gain(band, 25.0, f).unwrap();
            assert!((g - analytic_gain(band, 25.0, f)).abs() < 1e-9, "f = {f}");
        }
    }

    #[test]
    fn butterworth_rejects_dc() {
        let band = FrequencyBand::new(0.5, 4.0).unwrap();
        let y = bandpass_butterworth4(&ts(&vec![1.0; 2500], 25.0), band).unwrap();
        assert_eq!(y.len(), 2500);
        assert!(steady_amplitude(y.samples()) <= 1e-3);
    }

    #[test]
    fn butterworth_passes_in_band_sine() {
        let band = FrequencyBand::new(0.5, 4.0).unwrap();
        let y = bandpass_butterworth4(&sine(1.5, 25.0, 2500), band).unwrap();
        let a = steady_amplitude(y.samples());
        assert!((0.9..=1.1).contains(&a), "{a}");
        let oracle = analytic_gain(band, 25.0, 1.5);
        assert!((a - oracle).abs() < 5e-3);
    }

    #[test]
    fn butterworth_attenuates_out_of_band_sine() {
        let band = FrequencyBand::new(0.5, 4.0).unwrap();
        let y = bandpass_butterworth4(&sine(10.0, 25.0, 2500), band).unwrap();
        let a = steady_amplitude(y.samples());
        assert!(a <= 0.05, "{a}");
        assert!(analytic_gain(band, 25.0, 10.0) <= 0.05);
    }

    #[test]
    fn butterworth_band_edge_errors() {
        let x = sine(1.0, 25.0, 100);
        let band = FrequencyBand::new(0.5, 12.5).unwrap();
        assert!(matches!(bandpass_butterworth4(&x, band), Err(Error::BandOutOfRange { .. })));
    }
}
