//! Score the classical detectors on a synthetic benchmark and write a
//! per-sample CSV.
//!
//! ```text
//! cargo run --release --example evaluate
//! ```

use pdet::datagen::{gen_dataset, SyntheticConfig};
use pdet::detect::{detect_acf, detect_fourier, detect_hybrid};
use pdet::train::{evaluate, RateUnit};

fn main() -> pdet::Result<()> {
    for ratio in [0.0, 2.0] {
        let ds = gen_dataset(&SyntheticConfig { interferer_amp_ratio: ratio, n_samples: 256, seed: 11, ..Default::default() })?;
        let band = ds.band;
        println!("interferer ratio {ratio}:");
        let runs = [
            ("fourier", evaluate(|x| detect_fourier(x, band, 512), &ds, RateUnit::Bpm)?),
            ("acf", evaluate(|x| detect_acf(x, band), &ds, RateUnit::Bpm)?),
            ("hybrid", evaluate(|x| detect_hybrid(x, band, 512), &ds, RateUnit::Bpm)?),
        ];
        for (name, e) in &runs {
            let m = &e.metrics;
            println!(
                "  {name:<8} MAE {:>6.2}  RMSE {:>6.2}  rho {:>6}  MAPE {:>6.2}%",
                m.mae,
                m.rmse,
                m.pearson_rho.map_or("n/a".into(), |r| format!("{r:.3}")),
                m.mape_percent.unwrap_or(f64::NAN)
            );
        }
        let path = std::env::temp_dir().join(format!("pdet_fourier_ratio{ratio}.csv"));
        runs[0].1.write_csv(&path)?;
        println!("  per-sample results in {}", path.display());
    }
    Ok(())
}
