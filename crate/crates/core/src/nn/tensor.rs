use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of tensors: `f32` for training, `f64` for gradient checks.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense `(batch, channels, length)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<T>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Self { shape, data })
    }

    /// A `(channels, length)` tensor seen as batch 1.
    pub fn from_2d(channels: usize, length: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec([1, channels, length], data)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn length(&self) -> usize {
        self.shape[2]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Samples of `(b, c, ..)`.
    pub fn row(&self, b: usize, c: usize) -> &[T] {
        let l = self.shape[2];
        let start = (b * self.shape[1] + c) * l;
        &self.data[start..start + l]
    }

    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let l = self.shape[2];
        let start = (b * self.shape[1] + c) * l;
        &mut self.data[start..start + l]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `y += a * x`
#[inline]
pub(crate) fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}

/// Dot product with eight independent accumulators (fixed summation order).
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + x * y;
    }
    let s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    s + tail
}

#[inline]
pub(crate) fn sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut chunks = a.chunks_exact(8);
    for x in &mut chunks {
        for i in 0..8 {
            acc[i] = acc[i] + x[i];
        }
    }
    let mut tail = T::zero();
    for &x in chunks.remainder() {
        tail = tail + x;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checked() {
        assert!(Tensor::<f64>::from_vec([1, 2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::from_2d(2, 3, (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.row(0, 1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn dot_and_sum_match_naive() {
        let a: Vec<f64> = (0..37).map(|v| (v as f64).sin()).collect();
        let b: Vec<f64> = (0..37).map(|v| (v as f64 * 0.3).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
        assert!((sum(&a) - a.iter().sum::<f64>()).abs() < 1e-12);
    }
}
