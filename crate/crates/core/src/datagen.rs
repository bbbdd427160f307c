//! Synthetic quasi-periodic benchmark and dataset files.
//!
//! A window is a train of Gaussian-derivative pulses at `f0` (rich in
//! harmonics), plus an in-band sinusoidal interferer and white noise. The
//! pulse morphology is the cue that separates the target from the
//! interferer.
//!
//! `PDTS` container, little-endian:
//! ```text
//! "PDTS" | version u16 | fs f32 | window length u32 | count u32 | band lo f32 | band hi f32
//! has_labels u8 | count x length f32 samples (row-major) | count f32 labels (if present)
//! ```

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bin_io::{Reader, Writer};
use crate::error::{Error, Result};
use crate::signal::{FrequencyBand, TimeSeries};

pub const DATASET_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"PDTS";
/// Minimum distance between the interferer and the target fundamental.
pub const INTERFERER_MARGIN_HZ: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub fs: f64,
    pub win_sec: f64,
    pub band: FrequencyBand,
    pub f0_range: (f64, f64),
    /// Pulse width as a fraction of the period.
    pub width_frac: f64,
    pub interferer_amp_ratio: f64,
    pub noise_sigma: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            fs: 25.0,
            win_sec: 8.0,
            band: FrequencyBand::new(0.5, 4.0).expect("valid"),
            f0_range: (0.8, 2.5),
            width_frac: 0.12,
            interferer_amp_ratio: 2.0,
            noise_sigma: 0.5,
            n_samples: 2048,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn window_len(&self) -> usize {
        (self.win_sec * self.fs).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fs, self.win_sec, self.f0_range.0, self.f0_range.1, self.width_frac, self.interferer_amp_ratio, self.noise_sigma]
            .iter()
            .all(|v| v.is_finite());
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !finite {
            return bad("synthetic config values must be finite".into());
        }
        if !(self.fs > 0.0 && self.win_sec > 0.0) || self.window_len() < 2 {
            return bad(format!("window of {} s at {} Hz is too short", self.win_sec, self.fs));
        }
        self.band.check_against(self.fs)?;
        let (a, b) = self.f0_range;
        if !(a <= b && a >= self.band.lo() && b <= self.band.hi()) {
            return bad(format!("f0 range {a}..{b} must lie inside the band {}..{}", self.band.lo(), self.band.hi()));
        }
        if b > self.fs / 4.0 {
            return Err(Error::BadFrequency { f0: b, max: self.fs / 4.0 });
        }
        if !(self.width_frac > 0.0 && self.width_frac < 0.5) {
            return bad(format!("width fraction must be in (0, 0.5), got {}", self.width_frac));
        }
        if self.interferer_amp_ratio < 0.0 || self.noise_sigma < 0.0 {
            return bad("interferer ratio and noise sigma must be >= 0".into());
        }
        if self.interferer_amp_ratio > 0.0 && self.band.hi() - self.band.lo() <= 2.0 * INTERFERER_MARGIN_HZ {
            return bad(format!("band too narrow for an interferer {INTERFERER_MARGIN_HZ} Hz away from f0"));
        }
        Ok(())
    }
}

fn pulse_samples(f0: f64, fs: f64, n: usize, width_frac: f64, phase_sec: f64) -> Vec<f64> {
    let period = 1.0 / f0;
    let s = width_frac * period;
    let dur = n as f64 / fs;
    let last = (dur * f0).ceil() as i64 + 2;
    let mut x = vec![0.0; n];
    for k in -1..=last {
        let c = k as f64 * period - phase_sec;
        for (i, v) in x.iter_mut().enumerate() {
            let u = (i as f64 / fs - c) / s;
            if u.abs() < 8.0 {
                *v -= u * (-0.5 * u * u).exp();
            }
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    x
}

/// Gaussian-derivative pulses at `f0`, first pulse centred at `t = 0`,
/// scaled to unit peak and then mean-removed.
pub fn gen_pulse_train(f0: f64, fs: f64, dur_sec: f64, width_frac: f64) -> Result<TimeSeries> {
    if !(f0 > 0.0 && f0 <= fs / 4.0) {
        return Err(Error::BadFrequency { f0, max: fs / 4.0 });
    }
    if !(width_frac > 0.0 && width_frac < 0.5) {
        return Err(Error::InvalidInput(format!("width fraction must be in (0, 0.5), got {width_frac}")));
    }
    let n = (dur_sec * fs).round() as usize;
    TimeSeries::new(pulse_samples(f0, fs, n, width_frac, 0.0), fs)
}

/// One generated window with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub series: TimeSeries,
    pub f0: f64,
    pub interferer_hz: f64,
}

/// Draws one window from `rng`. The number of draws is fixed, so a given
/// stream position always yields the same sample.
pub fn gen_sample(cfg: &SyntheticConfig, rng: &mut impl Rng) -> Result<Sample> {
    cfg.validate()?;
    let n = cfg.window_len();
    let f0 = rng.random_range(cfg.f0_range.0..=cfg.f0_range.1);
    let interferer_hz = loop {
        let fi = rng.random_range(cfg.band.lo()..=cfg.band.hi());
        if (fi - f0).abs() >= INTERFERER_MARGIN_HZ {
            break fi;
        }
    };
    let phase = rng.random_range(0.0..1.0) / f0;
    let phi = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = pulse_samples(f0, cfg.fs, n, cfg.width_frac, phase);
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / cfg.fs;
        *v += cfg.interferer_amp_ratio * (2.0 * PI * interferer_hz * t + phi).sin() + cfg.noise_sigma * noise.sample(rng);
    }
    Ok(Sample { series: TimeSeries::new(x, cfg.fs)?, f0, interferer_hz })
}

/// Sample `index` of the dataset defined by `cfg`: its own ChaCha stream
/// under `cfg.seed`, so samples can be generated in any order.
pub fn gen_sample_at(cfg: &SyntheticConfig, index: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    gen_sample(cfg, &mut rng)
}

/// Equal-length windows with optional per-window fundamental frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub windows: Vec<TimeSeries>,
    pub labels: Option<Vec<f64>>,
    pub fs: f64,
    pub band: FrequencyBand,
}

impl LabeledDataset {
    pub fn new(windows: Vec<TimeSeries>, labels: Option<Vec<f64>>, fs: f64, band: FrequencyBand) -> Result<Self> {
        if let Some(first) = windows.first() {
            if let Some(w) = windows.iter().find(|w| w.len() != first.len() || w.fs() != fs) {
                return Err(Error::InvalidInput(format!(
                    "windows must share length {} and rate {fs} Hz; found {} samples at {} Hz",
                    first.len(),
                    w.len(),
                    w.fs()
                )));
            }
        }
        if let Some(l) = &labels {
            if l.len() != windows.len() {
                return Err(Error::LengthMismatch(l.len(), windows.len()));
            }
        }
        Ok(Self { windows, labels, fs, band })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.windows.first().map_or(0, |w| w.len())
    }
}

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

/// `cfg.n_samples` windows, each rounded to 32-bit precision so the dataset
/// survives a file round trip unchanged.
pub fn gen_dataset(cfg: &SyntheticConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let mut windows = Vec::with_capacity(cfg.n_samples);
    let mut labels = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let s = gen_sample_at(cfg, i as u64)?;
        let x = s.series.samples().iter().map(|&v| f32_round(v)).collect();
        windows.push(TimeSeries::new(x, f32_round(cfg.fs))?);
        labels.push(f32_round(s.f0));
    }
    let band = FrequencyBand::new(f32_round(cfg.band.lo()), f32_round(cfg.band.hi()))?;
    LabeledDataset::new(windows, Some(labels), f32_round(cfg.fs), band)
}

pub fn encode_dataset(ds: &LabeledDataset) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u16(DATASET_VERSION);
    w.f32(ds.fs as f32);
    w.u32(ds.window_len() as u32);
    w.u32(ds.len() as u32);
    w.f32(ds.band.lo() as f32);
    w.f32(ds.band.hi() as f32);
    w.u8(ds.labels.is_some() as u8);
    for win in &ds.windows {
        for &v in win.samples() {
            w.f32(v as f32);
        }
    }
    if let Some(labels) = &ds.labels {
        for &l in labels {
            w.f32(l as f32);
        }
    }
    w.buf
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader::new(&bytes[4..]);
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let fs = r.f32()? as f64;
    let len = r.u32()? as usize;
    let count = r.u32()? as usize;
    let band = FrequencyBand::new(r.f32()? as f64, r.f32()? as f64)?;
    let has_labels = r.u8()? != 0;
    let total = len.checked_mul(count).ok_or(Error::Truncated)?;
    let samples = r.f32s(total)?;
    let windows = samples
        .chunks_exact(len.max(1))
        .take(count)
        .map(|c| TimeSeries::new(c.iter().map(|&v| v as f64).collect(), fs))
        .collect::<Result<Vec<_>>>()?;
    let labels = if has_labels { Some(r.f32s(count)?.into_iter().map(f64::from).collect()) } else { None };
    if r.remaining() != 0 {
        return Err(Error::InvalidInput(format!("{} trailing bytes after dataset", r.remaining())));
    }
    LabeledDataset::new(windows, labels, fs, band)
}

pub fn save_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    decode_dataset(&fs::read(path)?)
}

/// One value per row, or `time,value` rows (the second column is used).
pub fn load_csv(path: impl AsRef<Path>, fs: f64, has_header: bool) -> Result<TimeSeries> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, fs, has_header)
}

pub fn parse_csv(text: &str, fs: f64, has_header: bool) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1 + has_header as usize;
        let rec = rec.map_err(|e| Error::ParseError { row, msg: e.to_string() })?;
        let field = match rec.len() {
            0 => continue,
            1 => &rec[0],
            _ => &rec[1],
        };
        if field.is_empty() && rec.len() == 1 {
            continue;
        }
        let v: f64 = field.parse().map_err(|_| Error::ParseError { row, msg: format!("not a number: {field:?}") })?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::EmptyFile);
    }
    TimeSeries::new(values, fs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::detect_fourier;

    fn small_cfg(n: usize) -> SyntheticConfig {
        SyntheticConfig { n_samples: n, seed: 7, ..Default::default() }
    }

    #[test]
    fn pulse_count_matches_rate() {
        let x = gen_pulse_train(1.25, 25.0, 8.0, 0.1).unwrap();
        let s = x.samples();
        let peaks = (1..s.len() - 1).filter(|&i| s[i] > 0.5 && s[i] >= s[i - 1] && s[i] > s[i + 1]).count();
        assert!((9..=11).contains(&peaks), "{peaks}");
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn pulse_spectrum_has_harmonic_comb() {
        let x = gen_pulse_train(1.25, 25.0, 8.0, 0.1).unwrap();
        let p = crate::spectral::dft_power(&x, 1024).unwrap();
        let res = p.resolution();
        for h in 1..=3 {
            let k = (h as f64 * 1.25 / res).round() as usize;
            let local = (k - 3..=k + 3).max_by(|&a, &b| p.power()[a].total_cmp(&p.power()[b])).unwrap();
            assert!(local.abs_diff(k) <= 1, "harmonic {h}: peak at {local}, expected {k}");
            // a real peak, well above the valley between harmonics
            let valley = (h as f64 * 1.25 + 0.625) / res;
            assert!(p.power()[local] > 10.0 * p.power()[valley.round() as usize], "harmonic {h}");
        }
    }

    #[test]
    fn pulse_train_rejects_high_f0() {
        assert!(matches!(gen_pulse_train(7.0, 25.0, 8.0, 0.1), Err(Error::BadFrequency { .. })));
    }

    #[test]
    fn samples_are_deterministic_per_index() {
        let cfg = small_cfg(4);
        assert_eq!(gen_sample_at(&cfg, 3).unwrap(), gen_sample_at(&cfg, 3).unwrap());
        assert_ne!(gen_sample_at(&cfg, 3).unwrap(), gen_sample_at(&cfg, 2).unwrap());
        let other = SyntheticConfig { seed: 8, ..cfg };
        assert_ne!(gen_sample_at(&cfg, 3).unwrap(), gen_sample_at(&other, 3).unwrap());
    }

    #[test]
    fn clean_target_is_found_by_fourier() {
        let cfg = SyntheticConfig { interferer_amp_ratio: 0.0, noise_sigma: 0.0, ..small_cfg(50) };
        for i in 0..50 {
            let s = gen_sample_at(&cfg, i).unwrap();
            let r = detect_fourier(&s.series, cfg.band, 512).unwrap();
            assert!((r.freq_hz - s.f0).abs() <= 25.0 / 512.0, "sample {i}: {} vs {}", r.freq_hz, s.f0);
        }
    }

    #[test]
    fn strong_interferer_dominates_fourier() {
        let cfg = small_cfg(200);
        let mut hits = 0;
        for i in 0..200 {
            let s = gen_sample_at(&cfg, i).unwrap();
            assert!((s.interferer_hz - s.f0).abs() >= INTERFERER_MARGIN_HZ);
            assert!(cfg.band.contains(s.interferer_hz));
            let r = detect_fourier(&s.series, cfg.band, 512).unwrap();
            if (r.freq_hz - s.interferer_hz).abs() <= 25.0 / 512.0 {
                hits += 1;
            }
        }
        assert!(hits >= 180, "{hits}/200");
    }

    #[test]
    fn label_coverage() {
        let cfg = small_cfg(10_000);
        let (a, b) = cfg.f0_range;
        let mut bins = [0usize; 20];
        for i in 0..10_000 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i);
            let f0: f64 = rng.random_range(a..=b);
            bins[(((f0 - a) / (b - a) * 20.0) as usize).min(19)] += 1;
        }
        assert!(bins.iter().all(|&c| c >= 200), "{bins:?}");
        // the full generator makes the same first draw
        assert_eq!(gen_sample_at(&cfg, 5).unwrap().f0, {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(5);
            rng.random_range(a..=b)
        });
    }

    #[test]
    fn windows_are_finite_and_varying() {
        let ds = gen_dataset(&small_cfg(64)).unwrap();
        assert_eq!(ds.len(), 64);
        assert_eq!(ds.window_len(), 200);
        for w in &ds.windows {
            assert!(w.samples().iter().all(|v| v.is_finite()));
            assert!(w.mean_var().1 > 0.0);
        }
        assert!(ds.labels.as_ref().unwrap().iter().all(|&f| ds.band.contains(f)));
    }

    #[test]
    fn dataset_round_trip_and_stability() {
        let ds = gen_dataset(&small_cfg(10)).unwrap();
        let bytes = encode_dataset(&ds);
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);
        assert_eq!(encode_dataset(&gen_dataset(&small_cfg(10)).unwrap()), bytes);
        let unlabeled = LabeledDataset { labels: None, ..ds.clone() };
        assert_eq!(decode_dataset(&encode_dataset(&unlabeled)).unwrap(), unlabeled);
    }

    #[test]
    fn dataset_errors() {
        let bytes = encode_dataset(&gen_dataset(&small_cfg(3)).unwrap());
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_dataset(&bad), Err(Error::BadMagic)));
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(decode_dataset(&v), Err(Error::UnsupportedVersion(2))));
        for cut in [6, 20, bytes.len() - 1] {
            assert!(matches!(decode_dataset(&bytes[..cut]), Err(Error::Truncated)), "cut {cut}");
        }
    }

    #[test]
    fn csv_examples() {
        assert_eq!(parse_csv("0.0\n1.0\n0.0\n", 25.0, false).unwrap().samples(), &[0.0, 1.0, 0.0]);
        assert_eq!(parse_csv("t,v\n0,3\n0.04,4\n", 25.0, true).unwrap().samples(), &[3.0, 4.0]);
        assert!(matches!(parse_csv("abc\n", 25.0, false), Err(Error::ParseError { row: 1, .. })));
        assert!(matches!(parse_csv("1\n2\nx\n", 25.0, false), Err(Error::ParseError { row: 3, .. })));
        assert!(matches!(parse_csv("", 25.0, false), Err(Error::EmptyFile)));
        assert!(matches!(parse_csv("value\n", 25.0, true), Err(Error::EmptyFile)));
    }

    #[test]
    fn config_validation() {
        assert!(SyntheticConfig::default().validate().is_ok());
        let bad = SyntheticConfig { f0_range: (0.2, 1.0), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SyntheticConfig { width_frac: 0.6, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SyntheticConfig { noise_sigma: f64::NAN, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
