//! Generate a small synthetic dataset, train a tiny encoder on it without
//! labels, and compare the neural detector with the Fourier baseline.
//!
//! ```text
//! cargo run --release --example train_synthetic
//! ```

use pdet::datagen::{gen_dataset, SyntheticConfig};
use pdet::detect::{detect_fourier, NeuralDetector};
use pdet::model::{UNet, UNetConfig};
use pdet::train::{evaluate, train_with, RateUnit, TrainConfig};

fn main() -> pdet::Result<()> {
    let clean = SyntheticConfig { interferer_amp_ratio: 0.0, n_samples: 512, seed: 1, ..Default::default() };
    let train_set = gen_dataset(&clean)?;
    let test_set = gen_dataset(&SyntheticConfig { n_samples: 128, seed: 2, ..clean })?;
    println!("{} training windows of {} samples at {} Hz", train_set.len(), train_set.window_len(), train_set.fs);

    let cfg = TrainConfig { max_epochs: 10, batch_size: 32, seed: 3, band: train_set.band, ..Default::default() };
    let model = UNet::<f32>::new(UNetConfig::new(8)?, 3)?;
    println!("{} trainable parameters", model.trainable_count());
    let out = train_with(model, &train_set.windows, &cfg, |r| {
        println!("epoch {:>2}: total {:.4} (entropy {:.4}, kl {:.4}, out-band {:.4})", r.epoch, r.total, r.se, r.ds, r.bw)
    })?;

    let neural = NeuralDetector { model: out.model, pipeline: out.pipeline };
    let band = test_set.band;
    let tol = test_set.fs / 512.0;
    for (name, e) in [
        ("fourier", evaluate(|x| detect_fourier(x, band, 512), &test_set, RateUnit::Bpm)?),
        ("neural", evaluate(|x| neural.detect(x), &test_set, RateUnit::Bpm)?),
    ] {
        println!("{name:<8} MAE {:.2} bpm, hit rate {:.1}%", e.metrics.mae, 100.0 * e.hit_rate(tol));
    }
    Ok(())
}
