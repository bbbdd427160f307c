//! Save a model with its preprocessing settings, load it back and run it on
//! a raw window.
//!
//! ```text
//! cargo run --example checkpoint
//! ```

use pdet::datagen::gen_pulse_train;
use pdet::detect::NeuralDetector;
use pdet::model::{load_checkpoint, save_checkpoint, Pipeline, TrainingMeta, UNet, UNetConfig};
use pdet::signal::FrequencyBand;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let band = FrequencyBand::new(0.5, 4.0)?;
    let model = UNet::<f32>::new(UNetConfig::new(8)?, 7)?;
    let meta = TrainingMeta { epochs: 0, final_loss: f64::NAN, seed: 7, pipeline: Pipeline::new(25.0, band, 512, 256) };

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("untrained.pdm");
    save_checkpoint(&model, &meta, &path)?;
    println!("wrote {} bytes", std::fs::metadata(&path)?.len());

    let loaded = load_checkpoint(&path)?;
    println!("base channels {}, pipeline {}", loaded.model.config().base_channels, loaded.meta.pipeline.to_json());

    let det = NeuralDetector { model: loaded.model, pipeline: loaded.meta.pipeline };
    let window = gen_pulse_train(1.4, 25.0, 8.0, 0.12)?;
    let r = det.detect(&window)?;
    println!("untrained model picks {:.3} Hz (confidence {:.2})", r.freq_hz, r.confidence);
    Ok(())
}
