//! Dense rank-4 tensors. Values are immutable once built; clones share
//! storage, so keeping tensors alive inside the autodiff graph is cheap.

use std::sync::Arc;

use rand::Rng;

use crate::scalar::Scalar;
use crate::shape::Shape;

#[derive(Clone)]
pub struct Tensor<T> {
    shape: Shape,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            shape.len(),
            "tensor data length {} does not match shape {}",
            data.len(),
            shape
        );
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::new(shape, vec![T::zero(); shape.len()])
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Tensor::new(shape, vec![v; shape.len()])
    }

    pub fn scalar(v: T) -> Self {
        Tensor::new(Shape::scalar(), vec![v])
    }

    pub fn from_f64s(shape: Shape, vals: &[f64]) -> Self {
        Tensor::new(shape, vals.iter().map(|&v| T::of_f64(v)).collect())
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor::new(shape, data)
    }

    pub fn rand_uniform(shape: Shape, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.len())
            .map(|_| T::of_f64(rng.gen_range(lo..hi)))
            .collect();
        Tensor::new(shape, data)
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.idx(n, c, y, x)]
    }

    /// Mutable access; copies the storage when it is shared.
    pub fn make_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data)
    }

    /// Same storage, different shape (element count must match).
    pub fn reshaped(&self, shape: Shape) -> Self {
        assert_eq!(
            self.len(),
            shape.len(),
            "cannot reshape {} to {}",
            self.shape,
            shape
        );
        Tensor {
            shape,
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::new(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip(&self, rhs: &Tensor<T>, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, rhs.shape, "shape mismatch in zip");
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::new(self.shape, data)
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Self {
        self.zip(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Self {
        self.zip(rhs, |a, b| a - b)
    }

    pub fn mul_elem(&self, rhs: &Tensor<T>) -> Self {
        self.zip(rhs, |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of_f64(self.len() as f64)
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// Max |a - b| over all elements.
    pub fn max_abs_diff(&self, rhs: &Tensor<T>) -> T {
        assert_eq!(self.shape, rhs.shape, "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(rhs.data.iter())
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    pub fn bitwise_eq(&self, rhs: &Tensor<T>) -> bool {
        self.shape == rhs.shape
            && self
                .data
                .iter()
                .zip(rhs.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }

    /// Cast element type (used at the fp64 gradcheck / fp32 training seam).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::new(
            self.shape,
            self.data.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
        )
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor<{}>{}", T::NAME, self.shape)?;
        if self.len() <= 8 {
            write!(f, " {:?}", self.data())?;
        }
        Ok(())
    }
}
