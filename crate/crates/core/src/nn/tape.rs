//! Tape-based reverse-mode differentiation over the layer primitives of a
//! 1D convolutional network.
//!
//! Each op records its inputs and whatever cache its adjoint needs.
//! [`Tape::backward`] walks the record in reverse, accumulating parameter
//! gradients into the [`ParamStore`] and returning the gradient of every
//! recorded node.

use super::param::{ParamId, ParamStore};
use super::tensor::{axpy, dot, sum, Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Parameter ids of one batch-norm layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// Batch statistics observed in a train-mode pass, applied to the running
/// estimates with [`BnStats::commit`].
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    ids: BnIds,
    mean: Vec<f64>,
    var_unbiased: Vec<f64>,
}

impl BnStats {
    pub fn commit<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let m = BN_MOMENTUM;
        let rm = &mut store.get_mut(self.ids.running_mean).value;
        for (r, &v) in rm.data_mut().iter_mut().zip(&self.mean) {
            *r = T::from_f64((1.0 - m) * r.as_f64() + m * v);
        }
        let rv = &mut store.get_mut(self.ids.running_var).value;
        for (r, &v) in rv.data_mut().iter_mut().zip(&self.var_unbiased) {
            *r = T::from_f64((1.0 - m) * r.as_f64() + m * v);
        }
    }
}

enum Op<T> {
    Leaf,
    Conv { x: NodeId, w: ParamId, b: ParamId },
    BatchNorm { x: NodeId, ids: BnIds, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Relu(NodeId),
    Tanh(NodeId),
    AvgPool { x: NodeId, k: usize },
    Upsample { x: NodeId, k: usize },
    Concat { a: NodeId, b: NodeId },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of every node reached by a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, shape: [usize; 3]) -> &mut Tensor<T> {
    slot.get_or_insert_with(|| Tensor::zeros(shape))
}

/// Splits a "same"-padded correlation shift into (source range, destination range).
#[inline]
fn shifted(len: usize, s: isize) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let a = s.unsigned_abs();
    if a >= len {
        return None;
    }
    if s >= 0 {
        Some((a..len, 0..len - a))
    } else {
        Some((0..len - a, a..len))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Zero-padded "same" cross-correlation; `weight` is `(out, in, k)` with odd `k`,
    /// `bias` is `(1, 1, out)`.
    pub fn conv1d(&mut self, store: &ParamStore<T>, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let wv = store.value(w);
        let bv = store.value(b);
        let [bs, cin, l] = xv.shape();
        let [cout, wcin, k] = wv.shape();
        if k % 2 == 0 {
            return Err(Error::ShapeMismatch(format!("kernel size {k} must be odd")));
        }
        if wcin != cin {
            return Err(Error::ShapeMismatch(format!("conv expects {wcin} input channels, got {cin}")));
        }
        if bv.len() != cout {
            return Err(Error::ShapeMismatch(format!("bias has {} entries for {cout} channels", bv.len())));
        }
        let pad = (k / 2) as isize;
        let mut y = Tensor::zeros([bs, cout, l]);
        for bi in 0..bs {
            for o in 0..cout {
                let row = y.row_mut(bi, o);
                row.fill(bv.data()[o]);
                for i in 0..cin {
                    let xr = xv.row(bi, i);
                    for j in 0..k {
                        let wt = wv.data()[(o * cin + i) * k + j];
                        if let Some((src, dst)) = shifted(l, j as isize - pad) {
                            axpy(wt, &xr[src], &mut row[dst]);
                        }
                    }
                }
            }
        }
        Ok(self.push(y, Op::Conv { x, w, b }))
    }

    /// Batch normalization per channel over `(batch, length)`. Train mode
    /// normalizes with biased batch variance and returns the statistics to
    /// commit; eval mode uses the running estimates.
    pub fn batchnorm(&mut self, store: &ParamStore<T>, x: NodeId, ids: BnIds, mode: Mode) -> Result<(NodeId, Option<BnStats>)> {
        let xv = &self.nodes[x.0].value;
        let [bs, c, l] = xv.shape();
        let gamma = store.value(ids.gamma).data();
        let beta = store.value(ids.beta).data();
        if gamma.len() != c || beta.len() != c {
            return Err(Error::ShapeMismatch(format!("batch norm has {} channels, input {c}", gamma.len())));
        }
        let n = bs * l;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut stats = None;
        match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::ShapeMismatch("batch norm in train mode needs batch*length >= 2".into()));
                }
                let mut means = vec![0.0; c];
                let mut vars = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for bi in 0..bs {
                        s += sum(xv.row(bi, ch)).as_f64();
                    }
                    let mean = s / n as f64;
                    let mut ss = 0.0;
                    for bi in 0..bs {
                        ss += xv.row(bi, ch).iter().map(|&v| (v.as_f64() - mean).powi(2)).sum::<f64>();
                    }
                    let var = ss / n as f64;
                    means[ch] = mean;
                    vars[ch] = ss / (n - 1) as f64;
                    let is = 1.0 / (var + BN_EPS).sqrt();
                    inv_std[ch] = T::from_f64(is);
                    let (m, is) = (T::from_f64(mean), T::from_f64(is));
                    for bi in 0..bs {
                        let off = (bi * c + ch) * l;
                        for (h, &v) in xhat[off..off + l].iter_mut().zip(xv.row(bi, ch)) {
                            *h = (v - m) * is;
                        }
                    }
                }
                stats = Some(BnStats { ids, mean: means, var_unbiased: vars });
            }
            Mode::Eval => {
                let rm = store.value(ids.running_mean).data();
                let rv = store.value(ids.running_var).data();
                for ch in 0..c {
                    let is = T::from_f64(1.0 / (rv[ch].as_f64() + BN_EPS).sqrt());
                    inv_std[ch] = is;
                    for bi in 0..bs {
                        let off = (bi * c + ch) * l;
                        for (h, &v) in xhat[off..off + l].iter_mut().zip(xv.row(bi, ch)) {
                            *h = (v - rm[ch]) * is;
                        }
                    }
                }
            }
        }
        let mut y = Tensor::zeros([bs, c, l]);
        for bi in 0..bs {
            for ch in 0..c {
                let off = (bi * c + ch) * l;
                for (o, &h) in y.row_mut(bi, ch).iter_mut().zip(&xhat[off..off + l]) {
                    *o = gamma[ch] * h + beta[ch];
                }
            }
        }
        let id = self.push(y, Op::BatchNorm { x, ids, xhat, inv_std, train: mode == Mode::Train });
        Ok((id, stats))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = self.nodes[x.0].value.map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(y, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let y = self.nodes[x.0].value.map(|v| v.tanh());
        self.push(y, Op::Tanh(x))
    }

    /// Non-overlapping mean pooling; a trailing remainder shorter than `k` is dropped.
    pub fn avgpool(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        if k < 2 {
            return Err(Error::InvalidInput(format!("pool size must be >= 2, got {k}")));
        }
        let xv = &self.nodes[x.0].value;
        let [bs, c, l] = xv.shape();
        if l < k {
            return Err(Error::InputTooShort { len: l, k });
        }
        let lo = l / k;
        let inv = T::from_f64(1.0 / k as f64);
        let mut y = Tensor::zeros([bs, c, lo]);
        for bi in 0..bs {
            for ch in 0..c {
                let xr = xv.row(bi, ch);
                for (t, o) in y.row_mut(bi, ch).iter_mut().enumerate() {
                    *o = xr[t * k..t * k + k].iter().fold(T::zero(), |a, &v| a + v) * inv;
                }
            }
        }
        Ok(self.push(y, Op::AvgPool { x, k }))
    }

    /// Nearest-neighbour upsampling: each sample repeated `k` times.
    pub fn upsample(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        if k < 2 {
            return Err(Error::InvalidInput(format!("upsample factor must be >= 2, got {k}")));
        }
        let xv = &self.nodes[x.0].value;
        let [bs, c, l] = xv.shape();
        let mut y = Tensor::zeros([bs, c, l * k]);
        for bi in 0..bs {
            for ch in 0..c {
                let xr = xv.row(bi, ch);
                for (chunk, &v) in y.row_mut(bi, ch).chunks_exact_mut(k).zip(xr) {
                    chunk.fill(v);
                }
            }
        }
        Ok(self.push(y, Op::Upsample { x, k }))
    }

    /// Stacks `b`'s channels after `a`'s.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let [ba, ca, la] = av.shape();
        let [bb, cb, lb] = bv.shape();
        if ba != bb || la != lb {
            return Err(Error::ShapeMismatch(format!("concat {:?} with {:?}", av.shape(), bv.shape())));
        }
        let mut y = Tensor::zeros([ba, ca + cb, la]);
        for bi in 0..ba {
            for ch in 0..ca {
                y.row_mut(bi, ch).copy_from_slice(av.row(bi, ch));
            }
            for ch in 0..cb {
                y.row_mut(bi, ca + ch).copy_from_slice(bv.row(bi, ch));
            }
        }
        Ok(self.push(y, Op::Concat { a, b }))
    }

    /// Propagates `grad` (the gradient of some scalar with respect to `out`)
    /// back through the recorded ops. Parameter gradients are added to
    /// `store`; they keep accumulating until [`ParamStore::zero_grad`].
    pub fn backward(&mut self, store: &mut ParamStore<T>, out: NodeId, grad: Tensor<T>) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let Some(out_node) = self.nodes.get(out.0) else {
            return Err(Error::InvalidInput("node is not on this tape".into()));
        };
        if out_node.value.shape() != grad.shape() {
            return Err(Error::ShapeMismatch(format!("gradient {:?} for output {:?}", grad.shape(), out_node.value.shape())));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(grad);

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Conv { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let [bs, cin, l] = xv.shape();
                    let wv = store.value(*w).clone();
                    let [cout, _, k] = wv.shape();
                    let pad = (k / 2) as isize;
                    let mut dw = vec![T::zero(); wv.len()];
                    let mut db = vec![T::zero(); cout];
                    let dx = accumulate(&mut grads[x.0], xv.shape());
                    for bi in 0..bs {
                        for o in 0..cout {
                            let gr = g.row(bi, o);
                            db[o] = db[o] + sum(gr);
                            for ci in 0..cin {
                                let xr = xv.row(bi, ci);
                                for j in 0..k {
                                    if let Some((src, dst)) = shifted(l, j as isize - pad) {
                                        let widx = (o * cin + ci) * k + j;
                                        dw[widx] = dw[widx] + dot(&gr[dst.clone()], &xr[src.clone()]);
                                        axpy(wv.data()[widx], &gr[dst], &mut dx.row_mut(bi, ci)[src]);
                                    }
                                }
                            }
                        }
                    }
                    for (a, d) in store.get_mut(*w).grad.data_mut().iter_mut().zip(dw) {
                        *a = *a + d;
                    }
                    for (a, d) in store.get_mut(*b).grad.data_mut().iter_mut().zip(db) {
                        *a = *a + d;
                    }
                }
                Op::BatchNorm { x, ids, xhat, inv_std, train } => {
                    let [bs, c, l] = g.shape();
                    let n = (bs * l) as f64;
                    let gamma = store.value(ids.gamma).data().to_vec();
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    for ch in 0..c {
                        let (mut sg, mut sgx) = (0.0, 0.0);
                        for bi in 0..bs {
                            let off = (bi * c + ch) * l;
                            sg += sum(g.row(bi, ch)).as_f64();
                            sgx += dot(g.row(bi, ch), &xhat[off..off + l]).as_f64();
                        }
                        dgamma[ch] = T::from_f64(sgx);
                        dbeta[ch] = T::from_f64(sg);
                        let dx = accumulate(&mut grads[x.0], [bs, c, l]);
                        if *train {
                            // dx = gamma * inv_std / n * (n g - sum g - xhat * sum(g xhat))
                            let scale = gamma[ch] * inv_std[ch] * T::from_f64(1.0 / n);
                            let (tn, tsg, tsgx) = (T::from_f64(n), T::from_f64(sg), T::from_f64(sgx));
                            for bi in 0..bs {
                                let off = (bi * c + ch) * l;
                                for ((d, &gv), &h) in dx.row_mut(bi, ch).iter_mut().zip(g.row(bi, ch)).zip(&xhat[off..off + l]) {
                                    *d = *d + scale * (tn * gv - tsg - h * tsgx);
                                }
                            }
                        } else {
                            let scale = gamma[ch] * inv_std[ch];
                            for bi in 0..bs {
                                axpy(scale, g.row(bi, ch), dx.row_mut(bi, ch));
                            }
                        }
                    }
                    for (a, d) in store.get_mut(ids.gamma).grad.data_mut().iter_mut().zip(dgamma) {
                        *a = *a + d;
                    }
                    for (a, d) in store.get_mut(ids.beta).grad.data_mut().iter_mut().zip(dbeta) {
                        *a = *a + d;
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = accumulate(&mut grads[x.0], xv.shape());
                    for ((d, &gv), &v) in dx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        if v > T::zero() {
                            *d = *d + gv;
                        }
                    }
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let dx = accumulate(&mut grads[x.0], y.shape());
                    for ((d, &gv), &yv) in dx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d = *d + gv * (T::one() - yv * yv);
                    }
                }
                Op::AvgPool { x, k } => {
                    let shape = self.nodes[x.0].value.shape();
                    let [bs, c, _] = shape;
                    let inv = T::from_f64(1.0 / *k as f64);
                    let dx = accumulate(&mut grads[x.0], shape);
                    for bi in 0..bs {
                        for ch in 0..c {
                            let dr = dx.row_mut(bi, ch);
                            for (t, &gv) in g.row(bi, ch).iter().enumerate() {
                                for d in &mut dr[t * k..t * k + k] {
                                    *d = *d + gv * inv;
                                }
                            }
                        }
                    }
                }
                Op::Upsample { x, k } => {
                    let shape = self.nodes[x.0].value.shape();
                    let [bs, c, _] = shape;
                    let dx = accumulate(&mut grads[x.0], shape);
                    for bi in 0..bs {
                        for ch in 0..c {
                            let gr = g.row(bi, ch);
                            for (d, chunk) in dx.row_mut(bi, ch).iter_mut().zip(gr.chunks_exact(*k)) {
                                *d = *d + chunk.iter().fold(T::zero(), |a, &v| a + v);
                            }
                        }
                    }
                }
                Op::Concat { a, b } => {
                    let sa = self.nodes[a.0].value.shape();
                    let sb = self.nodes[b.0].value.shape();
                    let [bs, ca, _] = sa;
                    {
                        let da = accumulate(&mut grads[a.0], sa);
                        for bi in 0..bs {
                            for ch in 0..ca {
                                axpy(T::one(), g.row(bi, ch), da.row_mut(bi, ch));
                            }
                        }
                    }
                    let db = accumulate(&mut grads[b.0], sb);
                    for bi in 0..bs {
                        for ch in 0..sb[1] {
                            axpy(T::one(), g.row(bi, ca + ch), db.row_mut(bi, ch));
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}
