use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BnIds, BnStats, Mode, NodeId, ParamId, ParamStore, Scalar, Tape, Tensor};

pub const DEPTH: usize = 3;
pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub base_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { base_channels: 32 }
    }
}

impl UNetConfig {
    pub fn new(base_channels: usize) -> Result<Self> {
        if base_channels == 0 {
            return Err(Error::InvalidInput("base_channels must be positive".into()));
        }
        Ok(Self { base_channels })
    }

    /// `(name, in_channels, out_channels)` of every conv in forward order.
    /// Down convs 2 and 3 take one extra channel: the pooled raw input.
    pub fn conv_plan(&self) -> Vec<(&'static str, usize, usize)> {
        let b = self.base_channels;
        vec![
            ("enc0", 1, b),
            ("down1", b, 2 * b),
            ("down2", 2 * b + 1, 3 * b),
            ("down3", 3 * b + 1, 4 * b),
            ("up1", 4 * b + 3 * b, 3 * b),
            ("up2", 3 * b + 2 * b, 2 * b),
            ("up3", 2 * b + b, b),
            ("out", b, 1),
        ]
    }

    pub fn check_length(&self, t: usize) -> Result<()> {
        if t % (1 << DEPTH) != 0 || t < 16 {
            return Err(Error::BadLength(t));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv: ConvIds,
    bn: BnIds,
}

/// Three-stage 1D U-Net with raw-input skips and a tanh output.
#[derive(Debug, Clone)]
pub struct UNet<T> {
    config: UNetConfig,
    store: ParamStore<T>,
    blocks: Vec<Block>,
    out: ConvIds,
}

/// A recorded forward pass, ready for [`Tape::backward`].
pub struct ForwardPass<T> {
    pub tape: Tape<T>,
    pub input: NodeId,
    pub output: NodeId,
    pub stats: Vec<BnStats>,
}

impl<T: Scalar> UNet<T> {
    /// Kaiming-uniform conv weights (bound `sqrt(6 / fan_in)`), zero biases,
    /// unit BN scale and zero shift.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        UNetConfig::new(config.base_channels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut blocks = Vec::new();
        let mut out = None;
        for (name, cin, cout) in config.conv_plan() {
            let fan_in = (cin * KERNEL) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let w: Vec<T> = (0..cout * cin * KERNEL).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
            let conv = ConvIds {
                w: store.add(format!("{name}.weight"), Tensor::from_vec([cout, cin, KERNEL], w)?, true),
                b: store.add(format!("{name}.bias"), Tensor::zeros([1, 1, cout]), true),
            };
            if name == "out" {
                out = Some(conv);
                continue;
            }
            let ones = Tensor::from_vec([1, 1, cout], vec![T::one(); cout])?;
            let bn = BnIds {
                gamma: store.add(format!("{name}.bn.gamma"), ones.clone(), true),
                beta: store.add(format!("{name}.bn.beta"), Tensor::zeros([1, 1, cout]), true),
                running_mean: store.add(format!("{name}.bn.running_mean"), Tensor::zeros([1, 1, cout]), false),
                running_var: store.add(format!("{name}.bn.running_var"), ones, false),
            };
            blocks.push(Block { conv, bn });
        }
        Ok(Self { config, store, blocks, out: out.expect("plan ends with out") })
    }

    pub fn config(&self) -> UNetConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn trainable_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn cast<U: Scalar>(&self) -> UNet<U> {
        UNet { config: self.config, store: self.store.cast(), blocks: self.blocks.clone(), out: self.out }
    }

    /// Records a forward pass of `x` with shape `(batch, 1, T)`.
    pub fn forward(&self, x: Tensor<T>, mode: Mode) -> Result<ForwardPass<T>> {
        if x.channels() != 1 {
            return Err(Error::ShapeMismatch(format!("expected 1 input channel, got {}", x.channels())));
        }
        self.config.check_length(x.length())?;
        let mut tape = Tape::new();
        let mut stats = Vec::new();
        let input = tape.leaf(x);
        let s = &self.store;
        let mut block = |tape: &mut Tape<T>, i: usize, h: NodeId| -> Result<NodeId> {
            let blk = self.blocks[i];
            let c = tape.conv1d(s, h, blk.conv.w, blk.conv.b)?;
            let (n, st) = tape.batchnorm(s, c, blk.bn, mode)?;
            stats.extend(st);
            Ok(tape.relu(n))
        };

        let half = tape.avgpool(input, 2)?;
        let quarter = tape.avgpool(input, 4)?;

        let e0 = block(&mut tape, 0, input)?;
        let p = tape.avgpool(e0, 2)?;
        let e1 = block(&mut tape, 1, p)?;
        let cat = tape.concat(e1, half)?;
        let p = tape.avgpool(cat, 2)?;
        let e2 = block(&mut tape, 2, p)?;
        let cat = tape.concat(e2, quarter)?;
        let p = tape.avgpool(cat, 2)?;
        let e3 = block(&mut tape, 3, p)?;

        let up = tape.upsample(e3, 2)?;
        let cat = tape.concat(up, e2)?;
        let u1 = block(&mut tape, 4, cat)?;
        let up = tape.upsample(u1, 2)?;
        let cat = tape.concat(up, e1)?;
        let u2 = block(&mut tape, 5, cat)?;
        let up = tape.upsample(u2, 2)?;
        let cat = tape.concat(up, e0)?;
        let u3 = block(&mut tape, 6, cat)?;

        let o = tape.conv1d(s, u3, self.out.w, self.out.b)?;
        let output = tape.tanh(o);
        Ok(ForwardPass { tape, input, output, stats })
    }

    /// Eval-mode output for a `(batch, 1, T)` input.
    pub fn predict(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let pass = self.forward(x, Mode::Eval)?;
        Ok(pass.tape.value(pass.output).clone())
    }

    /// Applies the batch statistics of a train-mode pass to the running estimates.
    pub fn commit_stats(&mut self, stats: &[BnStats]) {
        for s in stats {
            s.commit(&mut self.store);
        }
    }

    pub(crate) fn from_store(config: UNetConfig, store: ParamStore<T>) -> Result<Self> {
        let mut fresh = Self::new(config, 0)?;
        if store.len() != fresh.store.len() {
            return Err(Error::CorruptCheckpoint(format!("expected {} tensors, found {}", fresh.store.len(), store.len())));
        }
        for p in fresh.store.iter_mut() {
            let id = store
                .find(&p.name)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {}", p.name)))?;
            let src = store.get(id);
            if src.value.shape() != p.value.shape() {
                return Err(Error::CorruptCheckpoint(format!(
                    "{} has shape {:?}, expected {:?}",
                    p.name,
                    src.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.value.clone();
        }
        Ok(fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::random;

    #[test]
    fn output_shape_and_range() {
        let m = UNet::<f64>::new(UNetConfig::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random([1, 1, 256], &mut rng).scale(5.0);
        let y = m.predict(x).unwrap();
        assert_eq!(y.shape(), [1, 1, 256]);
        assert!(y.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn rejects_bad_lengths() {
        let m = UNet::<f32>::new(UNetConfig::new(4).unwrap(), 1).unwrap();
        assert!(matches!(m.predict(Tensor::zeros([1, 1, 100])), Err(Error::BadLength(100))));
        assert!(matches!(m.predict(Tensor::zeros([1, 1, 8])), Err(Error::BadLength(8))));
        assert!(m.predict(Tensor::zeros([1, 1, 16])).is_ok());
    }

    #[test]
    fn forward_is_deterministic() {
        let m = UNet::<f32>::new(UNetConfig::new(8).unwrap(), 3).unwrap();
        let x = Tensor::from_vec([2, 1, 64], (0..128).map(|i| (i as f32 * 0.3).sin()).collect()).unwrap();
        let a = m.forward(x.clone(), Mode::Train).unwrap();
        let b = m.forward(x, Mode::Train).unwrap();
        assert_eq!(a.tape.value(a.output), b.tape.value(b.output));
    }

    /// Independent count from the layer table: conv `3·in·out + out`,
    /// batch norm `2·out` trainable scalars.
    fn table_count(b: usize) -> usize {
        let conv = |i: usize, o: usize| 3 * i * o + o;
        let bn = |o: usize| 2 * o;
        let c = [b, 2 * b, 3 * b, 4 * b];
        conv(1, c[0]) + bn(c[0])
            + conv(c[0], c[1]) + bn(c[1])
            + conv(c[1] + 1, c[2]) + bn(c[2])
            + conv(c[2] + 1, c[3]) + bn(c[3])
            + conv(c[3] + c[2], c[2]) + bn(c[2])
            + conv(c[2] + c[1], c[1]) + bn(c[1])
            + conv(c[1] + c[0], c[0]) + bn(c[0])
            + conv(c[0], 1)
    }

    #[test]
    fn parameter_count_matches_shape_walk() {
        for b in [4, 8, 32] {
            let m = UNet::<f32>::new(UNetConfig::new(b).unwrap(), 0).unwrap();
            assert_eq!(m.trainable_count(), table_count(b), "base {b}");
        }
        assert_eq!(table_count(32), 168_289);
        assert_eq!(table_count(8), 10_969);
    }

    #[test]
    fn composed_gradcheck() {
        let mut m = UNet::<f64>::new(UNetConfig::new(4).unwrap(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random([2, 1, 32], &mut rng);
        let r = random([2, 1, 32], &mut rng);
        let objective = |m: &UNet<f64>| {
            let p = m.forward(x.clone(), Mode::Train).unwrap();
            p.tape.value(p.output).data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut pass = m.forward(x.clone(), Mode::Train).unwrap();
        m.params_mut().zero_grad();
        pass.tape.backward(m.params_mut(), pass.output, r.clone()).unwrap();

        let h = 1e-4;
        let ids: Vec<ParamId> = (0..m.params().len()).map(ParamId).filter(|&id| m.params().get(id).trainable).collect();
        let mut pairs = Vec::new();
        for id in ids {
            let analytic = m.params().get(id).grad.data().to_vec();
            let mut numeric = vec![0.0; analytic.len()];
            for i in 0..analytic.len() {
                let v = m.params().value(id).data()[i];
                m.params_mut().get_mut(id).value.data_mut()[i] = v + h;
                let a = objective(&m);
                m.params_mut().get_mut(id).value.data_mut()[i] = v - h;
                let b = objective(&m);
                m.params_mut().get_mut(id).value.data_mut()[i] = v;
                numeric[i] = (a - b) / (2.0 * h);
            }
            pairs.push((m.params().get(id).name.clone(), analytic, numeric));
        }
        // Conv biases ahead of train-mode batch norm have an exactly zero
        // gradient; their finite differences are pure rounding noise, so each
        // tensor's scale is floored at a millionth of the largest gradient.
        let global = pairs.iter().flat_map(|p| p.2.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
        let mut worst = 0.0f64;
        for (name, a, n) in &pairs {
            let scale = n.iter().chain(a).fold(1e-6 * global, |m, v| m.max(v.abs()));
            let e = a.iter().zip(n).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale;
            assert!(e <= 1e-3, "{name}: {e}");
            worst = worst.max(e);
        }
        assert!(worst <= 1e-3, "{worst}");
    }

    #[test]
    fn commit_moves_running_stats() {
        let mut m = UNet::<f32>::new(UNetConfig::new(4).unwrap(), 1).unwrap();
        let before = m.params().clone();
        let x = Tensor::from_vec([2, 1, 32], (0..64).map(|i| (i as f32).cos() + 1.0).collect()).unwrap();
        let pass = m.forward(x, Mode::Train).unwrap();
        assert_eq!(pass.stats.len(), 7);
        m.commit_stats(&pass.stats);
        let id = m.params().find("enc0.bn.running_mean").unwrap();
        assert_ne!(m.params().value(id), before.value(id));
    }
}
