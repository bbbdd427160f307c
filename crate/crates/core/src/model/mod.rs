//! The encoder network, the preprocessing it was trained with, and checkpoint I/O.

mod checkpoint;
mod unet;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta, CHECKPOINT_VERSION};
pub use unet::{ForwardPass, UNet, UNetConfig, DEPTH, KERNEL};

use crate::error::{Error, Result};
use crate::signal::{fit_length, zscore, FrequencyBand, TimeSeries};

/// Preprocessing applied to every window before it reaches the model:
/// z-score, then symmetric zero-padding (or centre crop) to `model_len`.
/// Stored with each checkpoint so inference repeats it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub fs: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub nfft: usize,
    pub model_len: usize,
}

impl Pipeline {
    pub fn new(fs: f64, band: FrequencyBand, nfft: usize, model_len: usize) -> Self {
        Self { fs, band_lo: band.lo(), band_hi: band.hi(), nfft, model_len }
    }

    pub fn band(&self) -> Result<FrequencyBand> {
        FrequencyBand::new(self.band_lo, self.band_hi)
    }

    pub fn prepare(&self, x: &TimeSeries) -> Result<TimeSeries> {
        if (x.fs() - self.fs).abs() > 1e-9 * self.fs {
            return Err(Error::InvalidInput(format!("signal is sampled at {} Hz, model expects {} Hz", x.fs(), self.fs)));
        }
        let z = zscore(x)?;
        TimeSeries::new(fit_length(z.samples(), self.model_len), self.fs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::CorruptCheckpoint(format!("pipeline descriptor: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prepare_pads_and_normalizes() {
        let band = FrequencyBand::new(0.5, 4.0).unwrap();
        let p = Pipeline::new(25.0, band, 512, 256);
        let x = TimeSeries::new((0..200).map(|i| (i as f64 * 0.3).sin() * 4.0 + 1.0).collect(), 25.0).unwrap();
        let y = p.prepare(&x).unwrap();
        assert_eq!(y.len(), 256);
        assert_eq!(y.samples()[0], 0.0);
        let inner = &y.samples()[28..228];
        let mean = inner.iter().sum::<f64>() / 200.0;
        assert!(mean.abs() < 1e-12);
        assert_eq!(Pipeline::from_json(&p.to_json()).unwrap(), p);
        let wrong = TimeSeries::new(x.samples().to_vec(), 50.0).unwrap();
        assert!(p.prepare(&wrong).is_err());
    }
}
