//! Dense rank-4 tensors in double precision.
//!
//! Layout is row-major `(batch, channels, height, width)`: element
//! `(b, c, h, w)` lives at `((b·C + c)·H + h)·W + w`. One sample occupies a
//! contiguous chunk of `C·H·W` values, which is what the batch-parallel
//! helpers iterate over.

use crate::assembly::TensorShape;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: TensorShape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: TensorShape) -> Self {
        Tensor { data: vec![0.0; shape.len()], shape }
    }

    pub fn from_vec(shape: TensorShape, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), shape.len(), "data length must match shape");
        Tensor { shape, data }
    }

    /// Elements per sample (`C·H·W`).
    pub fn sample_len(&self) -> usize {
        self.shape.channels * self.shape.height * self.shape.width
    }

    #[inline]
    pub fn idx(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.shape.channels + c) * self.shape.height + h) * self.shape.width + w
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.idx(b, c, h, w)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_row_major() {
        let shape = TensorShape::new(2, 3, 4, 5);
        let t = Tensor::zeros(shape);
        assert_eq!(t.idx(0, 0, 0, 1), 1);
        assert_eq!(t.idx(0, 0, 1, 0), 5);
        assert_eq!(t.idx(0, 1, 0, 0), 20);
        assert_eq!(t.idx(1, 0, 0, 0), 60);
        assert_eq!(t.sample_len(), 60);
        assert_eq!(t.data.len(), 120);
    }
}
