//! Periodicity detection in noisy 1D signals with a self-supervised
//! spectral loss, a small 1D U-Net and classical baselines.

mod bin_io;
pub mod cli;
pub mod datagen;
pub mod detect;
pub mod error;
pub mod loss;
pub mod model;
pub mod nn;
pub mod signal;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
