use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// A flat parameter vector partitioned into named tensors.
///
/// The partition always covers `values` exactly, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: Vec<TensorSpec>,
    values: Vec<f64>,
}

impl ModelParams {
    /// Zero-initialized parameters for the given `(name, shape)` list.
    pub fn zeros(shapes: &[(String, Vec<usize>)]) -> Self {
        let mut offset = 0;
        let tensors: Vec<TensorSpec> = shapes
            .iter()
            .map(|(name, shape)| {
                let spec = TensorSpec {
                    name: name.clone(),
                    shape: shape.clone(),
                    offset,
                };
                offset += spec.len();
                spec
            })
            .collect();
        ModelParams {
            tensors,
            values: vec![0.0; offset],
        }
    }

    pub fn from_parts(tensors: Vec<TensorSpec>, values: Vec<f64>) -> Result<Self> {
        let mut offset = 0;
        for t in &tensors {
            if t.offset != offset {
                return Err(Error::InvalidArgument(format!(
                    "tensor `{}` starts at {} but the previous tensor ends at {offset}",
                    t.name, t.offset
                )));
            }
            offset += t.len();
        }
        if offset != values.len() {
            return Err(Error::dims("parameter partition", offset, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter value".into()));
        }
        Ok(ModelParams { tensors, values })
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.spec(name).map(|t| &self.values[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.spec(name)?.range();
        Some(&mut self.values[range])
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.tensors == other.tensors
    }
}
