//! 4th-order Butterworth bandpass: gain at a few frequencies and its effect
//! on a two-tone signal.
//!
//! ```text
//! cargo run --example bandpass
//! ```

use std::f64::consts::PI;

use pdet::signal::{bandpass_butterworth4, bandpass_gain, FrequencyBand, TimeSeries};

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn main() -> pdet::Result<()> {
    let fs = 64.0;
    let band = FrequencyBand::new(0.5, 3.5)?;
    for f in [0.1, 0.5, 1.5, 3.5, 8.0, 20.0] {
        println!("gain at {f:>5.1} Hz: {:.4}", bandpass_gain(band, fs, f)?);
    }

    let x: Vec<f64> = (0..1024)
        .map(|t| {
            let t = t as f64 / fs;
            (2.0 * PI * 1.5 * t).sin() + (2.0 * PI * 12.0 * t).sin()
        })
        .collect();
    let y = bandpass_butterworth4(&TimeSeries::new(x.clone(), fs)?, band)?;
    // skip the start-up transient
    println!("rms before {:.3}, after {:.3}", rms(&x[256..]), rms(&y.samples()[256..]));
    Ok(())
}
