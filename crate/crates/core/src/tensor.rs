//! Dense 4-axis tensors in (batch, channel, height, width) order.
//!
//! Every array in the crate — images, feature maps, convolution weights,
//! biases, PReLU slopes, scalar losses — is a `Tensor`. Weights use the
//! layout (C_out, C_in, kH, kW) mapped onto the same four axes; biases and
//! slopes are (1, C, 1, 1); scalars are (1, 1, 1, 1).

use crate::error::{Error, Result};
use std::fmt;

/// Element dtype tag, also used in the checkpoint wire format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
    U8 = 3,
    U64 = 4,
}

impl Dtype {
    pub fn from_tag(tag: u8) -> Option<Dtype> {
        match tag {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            3 => Some(Dtype::U8),
            4 => Some(Dtype::U64),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
            Dtype::U64 => 8,
        }
    }
}

/// Scalar element of a tensor: `f32` for training, `f64` for gradient checking.
pub trait Element:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const DTYPE: Dtype;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
}

/// Shape of a 4-axis tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    pub fn scalar() -> Shape {
        Shape::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat offset of element (n, c, h, w) in row-major (N,C,H,W) order.
    #[inline(always)]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Dense 4-axis array with row-major (N,C,H,W) storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Shape,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn zeros(shape: Shape) -> Tensor<E> {
        Tensor {
            shape,
            data: vec![E::zero(); shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: E) -> Tensor<E> {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn ones(shape: Shape) -> Tensor<E> {
        Tensor::full(shape, E::one())
    }

    pub fn scalar(value: E) -> Tensor<E> {
        Tensor::full(Shape::scalar(), value)
    }

    pub fn from_vec(shape: Shape, data: Vec<E>) -> Result<Tensor<E>> {
        if data.len() != shape.numel() {
            return Err(Error::contract(format!(
                "tensor data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> E) -> Tensor<E> {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> E {
        self.data[self.shape.index(n, c, h, w)]
    }

    #[inline(always)]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut E {
        &mut self.data[self.shape.index(n, c, h, w)]
    }

    /// True when this tensor holds exactly one element.
    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// The single element of a scalar tensor.
    pub fn scalar_value(&self) -> E {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Tensor<E> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise sum of `other` into `self`. Shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<E>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
    }

    pub fn sum(&self) -> E {
        let mut acc = E::zero();
        for &v in &self.data {
            acc = acc + v;
        }
        acc
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts every element to another precision.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| F::from_f64(v.as_f64())).collect(),
        }
    }

    /// Bit-exact equality (same shape, identical element bits).
    pub fn bit_eq(&self, other: &Tensor<E>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor<E>) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.index(0, 0, 0, 0), 0);
        assert_eq!(s.index(0, 0, 0, 1), 1);
        assert_eq!(s.index(0, 0, 1, 0), 5);
        assert_eq!(s.index(0, 1, 0, 0), 20);
        assert_eq!(s.index(1, 0, 0, 0), 60);
        assert_eq!(s.index(1, 2, 3, 4), 119);
        assert_eq!(s.numel(), 120);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]);
        assert!(err.is_err());
    }

    #[test]
    fn cast_roundtrip_f64_to_f32() {
        let t = Tensor::<f64>::from_fn(Shape::new(1, 1, 2, 2), |_, _, h, w| (h * 2 + w) as f64);
        let f: Tensor<f32> = t.cast();
        assert_eq!(f.data(), &[0.0f32, 1.0, 2.0, 3.0]);
    }
}
