//! `PDM1` checkpoint container.
//!
//! ```text
//! "PDM1" | version u16 | base_channels u32
//! epochs u32 | final_loss f64 | seed u64 | pipeline (u32 length + utf-8 JSON)
//! tensor count u32
//! per tensor: name (u32 length + utf-8) | trainable u8 | dims 3 x u32 | f32 values
//! ```
//! All integers and floats are little-endian.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::unet::{UNet, UNetConfig};
use super::Pipeline;
use crate::bin_io::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"PDM1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub epochs: u32,
    pub final_loss: f64,
    pub seed: u64,
    pub pipeline: Pipeline,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: UNet<f32>,
    pub meta: TrainingMeta,
}

pub(crate) fn encode(model: &UNet<f32>, meta: &TrainingMeta) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.u32(model.config().base_channels as u32);
    w.u32(meta.epochs);
    w.f64(meta.final_loss);
    w.u64(meta.seed);
    w.str(&meta.pipeline.to_json());
    w.u32(model.params().len() as u32);
    for p in model.params().iter() {
        w.str(&p.name);
        w.u8(p.trainable as u8);
        for d in p.value.shape() {
            w.u32(d as u32);
        }
        for v in p.value.data() {
            w.f32(*v);
        }
    }
    w.buf
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader::new(&bytes[4..]);
    let corrupt = |e: Error| match e {
        Error::Truncated => Error::CorruptCheckpoint("file is truncated".into()),
        e => e,
    };
    let version = r.u16().map_err(corrupt)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let body = (|| -> Result<Checkpoint> {
        let config = UNetConfig::new(r.u32()? as usize)?;
        let epochs = r.u32()?;
        let final_loss = r.f64()?;
        let seed = r.u64()?;
        let pipeline = Pipeline::from_json(&r.str()?)?;
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let name = r.str()?;
            if !seen.insert(name.clone()) {
                return Err(Error::CorruptCheckpoint(format!("tensor {name} appears twice")));
            }
            let trainable = r.u8()? != 0;
            let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(Error::Truncated)?;
            let data = r.f32s(n)?;
            store.add(name, Tensor::from_vec(shape, data)?, trainable);
        }
        if r.remaining() != 0 {
            return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", r.remaining())));
        }
        let model = UNet::from_store(config, store)?;
        Ok(Checkpoint { model, meta: TrainingMeta { epochs, final_loss, seed, pipeline } })
    })();
    body.map_err(corrupt)
}

pub fn save_checkpoint(model: &UNet<f32>, meta: &TrainingMeta, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(model, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
