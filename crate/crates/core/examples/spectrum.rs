//! Power spectrum, band normalization and entropy of a noisy tone.
//!
//! ```text
//! cargo run --example spectrum
//! ```

use std::f64::consts::PI;

use pdet::signal::{FrequencyBand, TimeSeries};
use pdet::spectral::{autocorr_normalized, dft_power, normalize_band, out_of_band_power, spectral_entropy};

fn main() -> pdet::Result<()> {
    let fs = 25.0;
    let x: Vec<f64> = (0..200)
        .map(|t| {
            let t = t as f64 / fs;
            (2.0 * PI * 1.2 * t).sin() + 0.4 * (2.0 * PI * 6.0 * t).sin()
        })
        .collect();
    let ts = TimeSeries::new(x, fs)?;
    let band = FrequencyBand::new(0.5, 4.0)?;

    let spec = dft_power(&ts, 512)?;
    println!("{} bins, {:.4} Hz apart", spec.power().len(), spec.resolution());
    let peak = (0..spec.power().len()).max_by(|&a, &b| spec.power()[a].total_cmp(&spec.power()[b])).unwrap();
    println!("strongest bin: {:.3} Hz", spec.bin_freq(peak));

    let p = normalize_band(&spec, band)?;
    let (lo, hi) = p.bins();
    println!("band bins {lo}..={hi}, entropy {:.3} of max {:.3}", spectral_entropy(&p), (p.len() as f64).ln());
    println!("power outside band: {:.1}%", 100.0 * out_of_band_power(&spec, band)?);

    let r = autocorr_normalized(&ts, 40)?;
    let lag = (7..=40).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
    println!("autocorrelation peak at lag {lag} ({:.3} Hz), r = {:.3}", fs / lag as f64, r[lag]);
    Ok(())
}
