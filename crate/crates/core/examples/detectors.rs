//! Classical detectors on a pulse train with a stronger interfering tone.
//!
//! ```text
//! cargo run --example detectors
//! ```

use std::f64::consts::PI;

use pdet::datagen::gen_pulse_train;
use pdet::detect::{detect_acf, detect_fourier, detect_hybrid};
use pdet::signal::{FrequencyBand, TimeSeries};
use pdet::train::{hz_to_rate, RateUnit};

fn main() -> pdet::Result<()> {
    let (fs, dur) = (25.0, 8.0);
    let band = FrequencyBand::new(0.5, 3.5)?;

    for interferer in [0.0, 1.0, 3.0] {
        let pulses = gen_pulse_train(1.2, fs, dur, 0.12)?.into_samples();
        let mixed = pulses.iter().enumerate().map(|(t, v)| v + interferer * 0.3 * (2.0 * PI * 2.6 * t as f64 / fs).sin());
        let x = TimeSeries::new(mixed.collect(), fs)?;
        println!("interferer amplitude {interferer}: target 72 bpm, tone at 156 bpm");
        for r in [detect_fourier(&x, band, 512)?, detect_acf(&x, band)?, detect_hybrid(&x, band, 512)?] {
            println!("  {:<8} {:>6.1} bpm  confidence {:.2}", format!("{:?}", r.method), hz_to_rate(r.freq_hz, RateUnit::Bpm), r.confidence);
        }
    }
    Ok(())
}
