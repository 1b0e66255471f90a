//! Shape-tagged dense arrays of `f64`, the value type flowing through the tape.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    Length { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero dimension")]
    ZeroDim(Vec<usize>),
    #[error("{op} produced non-finite values")]
    NonFinite { op: &'static str },
    #[error("contract violated: {0}")]
    Contract(String),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, expected: impl fmt::Display, found: impl fmt::Debug) -> Self {
        TensorError::Shape {
            op,
            expected: expected.to_string(),
            found: format!("{found:?}"),
        }
    }
}

/// Row-major multidimensional array. An empty shape denotes a scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct NdArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl NdArray {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim(shape));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::Length { shape, len: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "NdArray::new" });
        }
        Ok(NdArray { shape, data })
    }

    /// Skips validation; callers inside the crate guarantee the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        NdArray { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        NdArray {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        NdArray {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element array.
    pub fn item(&self) -> Option<f64> {
        self.is_scalar().then(|| self.data[0])
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(TensorError::Length {
                shape,
                len: self.data.len(),
            });
        }
        Ok(NdArray { shape, data: self.data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Stacks equally shaped arrays along a new leading axis.
    pub fn stack(items: &[NdArray]) -> Result<Self, TensorError> {
        let first = items
            .first()
            .ok_or_else(|| TensorError::Contract("stack of zero arrays".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for item in items {
            if item.shape != first.shape {
                return Err(TensorError::shape("stack", format!("{:?}", first.shape), &item.shape));
            }
            data.extend_from_slice(&item.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(NdArray { shape, data })
    }

    /// Copies out the `index`-th slice along the leading axis.
    pub fn slice_first(&self, index: usize) -> NdArray {
        let inner: usize = self.shape[1..].iter().product();
        NdArray {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    /// Largest relative difference, measured against `max(1, |other|_inf)`.
    pub fn rel_diff(&self, other: &NdArray) -> f64 {
        let denom = other.max_abs().max(1.0);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / denom
    }
}
