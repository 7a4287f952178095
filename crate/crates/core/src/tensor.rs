//! Dense `(C, H, W)` real-valued grids.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Shape of a [`TensorGrid`]: channels (or classes), height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// Number of spatial positions, `H * W`.
    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major flat index of `(c, r, col)`.
    #[inline]
    pub const fn index(&self, c: usize, r: usize, col: usize) -> usize {
        (c * self.height + r) * self.width + col
    }
}

/// Row-major `(C, H, W)` array of finite `f64` values.
///
/// Images, perturbations, gradients and logits all use this carrier. Values
/// are checked for finiteness on construction and never mutated afterwards;
/// transformations return new grids.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    shape: Shape,
    data: Vec<f64>,
}

impl TensorGrid {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::PayloadMismatch {
                expected: shape.len(),
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for r in 0..shape.height {
                for col in 0..shape.width {
                    data.push(f(c, r, col));
                }
            }
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[self.shape.index(c, r, col)]
    }

    /// Maximum absolute component; zero for an empty grid.
    pub fn linf_norm(&self) -> f64 {
        linf_norm(&self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &TensorGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_shape(other.shape)?;
        Self::new(
            self.shape,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add(&self, other: &TensorGrid) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &TensorGrid) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        self.map(|v| v * factor)
    }

    pub fn dot(&self, other: &TensorGrid) -> Result<f64> {
        self.expect_shape(other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn expect_shape(&self, shape: Shape) -> Result<()> {
        if self.shape != shape {
            return Err(shape_err(shape, self.shape));
        }
        Ok(())
    }

    /// Values of channel `c`, length `H * W`.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    /// Logit (or channel) vector at pixel `i = r * W + col`.
    pub fn pixel_vector(&self, pixel: usize) -> Vec<f64> {
        let n = self.shape.pixels();
        (0..self.shape.channels)
            .map(|c| self.data[c * n + pixel])
            .collect()
    }
}

pub(crate) fn linf_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = TensorGrid::new(Shape::new(1, 1, 2), vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1 }));
        assert!(TensorGrid::new(Shape::new(1, 1, 1), vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn rejects_length_mismatch() {
        let err = TensorGrid::new(Shape::new(2, 2, 2), vec![0.0; 7]).unwrap_err();
        assert!(matches!(err, Error::PayloadMismatch { expected: 8, got: 7 }));
    }

    #[test]
    fn row_major_indexing() {
        let shape = Shape::new(2, 2, 3);
        let t = TensorGrid::from_fn(shape, |c, r, col| (100 * c + 10 * r + col) as f64).unwrap();
        assert_eq!(t.data()[shape.index(1, 1, 2)], 112.0);
        assert_eq!(t.get(0, 1, 0), 10.0);
        assert_eq!(t.pixel_vector(4), vec![11.0, 111.0]);
        assert_eq!(t.channel(1)[0], 100.0);
    }

    #[test]
    fn linf() {
        let t = TensorGrid::new(Shape::new(1, 1, 3), vec![0.1, -0.7, 0.3]).unwrap();
        assert_eq!(t.linf_norm(), 0.7);
        assert_eq!(TensorGrid::zeros(Shape::new(1, 2, 2)).linf_norm(), 0.0);
    }
}
