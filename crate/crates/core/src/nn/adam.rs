use super::param::ParamStore;
use super::tensor::{Scalar, Tensor};

/// Bias-corrected Adam. Moments are kept for every entry of the store;
/// non-trainable entries are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step_count: 0, m: zeros(), v: zeros() }
    }
}

pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut AdamState<T>) {
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (tb1, tb2) = (T::from_f64(b1), T::from_f64(b2));
    let (ob1, ob2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
    let step = T::from_f64(state.lr / c1);
    let inv_c2 = T::from_f64(1.0 / c2);
    let eps = T::from_f64(state.eps);
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if !p.trainable {
            continue;
        }
        let iter = p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.data_mut()).zip(v.data_mut());
        for (((w, &g), m), v) in iter {
            *m = tb1 * *m + ob1 * g;
            *v = tb2 * *v + ob2 * g * g;
            *w = *w - step * *m / ((*v * inv_c2).sqrt() + eps);
        }
    }
}
