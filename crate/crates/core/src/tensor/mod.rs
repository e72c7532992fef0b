//! Dense row-major tensors and the forward/backward kernels of the network.
//!
//! All convolutions are cross-correlations (no kernel flip) over the "valid"
//! extent with unit stride and dilation.

pub mod gradcheck;
pub mod ops;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use thiserror::Error;

pub use gradcheck::{finite_diff_check, finite_diff_check_with, GradCheck};
pub use ops::*;

#[derive(Debug, Error, PartialEq)]
pub enum ShapeError {
    #[error("{op}: {message}")]
    Mismatch { op: &'static str, message: String },
    #[error("shape {shape:?} needs {expected} values, got {got}")]
    Length { shape: Vec<usize>, expected: usize, got: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
}

pub(crate) fn mismatch(op: &'static str, message: impl Into<String>) -> ShapeError {
    ShapeError::Mismatch { op, message: message.into() }
}

/// Floating-point element type: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn from_sample(v: f32) -> Self;
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
    fn from_sample(v: f32) -> Self {
        v
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
    fn from_sample(v: f32) -> Self {
        f64::from(v)
    }
}

/// Dense tensor with an explicit shape; values are row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, ShapeError> {
        let expected = shape.iter().product();
        if data.len() != expected || shape.contains(&0) {
            return Err(ShapeError::Length { shape: shape.to_vec(), expected, got: data.len() });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self, ShapeError> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Same values under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self, ShapeError> {
        Self::new(shape, self.data)
    }

    pub fn flatten(self) -> Self {
        let n = self.data.len();
        Tensor { shape: vec![n], data: self.data }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    /// Checked mode: errors on the first NaN or infinity.
    pub fn check_finite(&self) -> Result<(), ShapeError> {
        match self.data.iter().position(|x| !x.is_finite()) {
            Some(index) => Err(ShapeError::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| U::of(v.as_f64())).collect() }
    }
}
