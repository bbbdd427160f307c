//! The three loss terms for a few candidate outputs against one input window.
//!
//! ```text
//! cargo run --example periodicity_loss
//! ```

use std::f64::consts::PI;

use pdet::loss::{periodicity_loss, periodicity_loss_grad, LossWeights};
use pdet::signal::{FrequencyBand, TimeSeries};

fn tone(f: f64, fs: f64, n: usize) -> Vec<f64> {
    (0..n).map(|t| (2.0 * PI * f * t as f64 / fs).sin()).collect()
}

fn main() -> pdet::Result<()> {
    let (fs, n) = (25.0, 256);
    let band = FrequencyBand::new(0.5, 4.0)?;
    let w = LossWeights::default();

    // input: a 1.5 Hz rhythm with a 9 Hz tone riding on it
    let x: Vec<f64> = tone(1.5, fs, n).iter().zip(tone(9.0, fs, n)).map(|(a, b)| a + 0.8 * b).collect();
    let x = TimeSeries::new(x, fs)?;

    let candidates = [
        ("input itself", x.samples().to_vec()),
        ("clean 1.5 Hz", tone(1.5, fs, n)),
        ("clean 3.0 Hz", tone(3.0, fs, n)),
        ("9 Hz plus a little 1.5 Hz", tone(9.0, fs, n).iter().zip(tone(1.5, fs, n)).map(|(a, b)| a + 0.1 * b).collect()),
    ];
    println!("{:<28} {:>8} {:>8} {:>8} {:>8}", "output", "entropy", "kl", "out-band", "total");
    for (name, y) in candidates {
        let b = periodicity_loss(&TimeSeries::new(y, fs)?, &x, band, 256, w)?;
        println!("{name:<28} {:>8.3} {:>8.3} {:>8.3} {:>8.3}", b.se, b.ds, b.bw, b.total);
    }

    let g = periodicity_loss_grad(&x, &x, band, 256, w)?;
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("gradient norm at the input: {norm:.4}");
    Ok(())
}
