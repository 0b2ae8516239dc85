// SPDX-License-Identifier: MIT OR Apache-2.0

//! N-dimensional tensors and named collections of them. A task vector, the
//! difference between fine-tuned and base weights, is a map from layer names
//! to tensors; only entries with at least two axes take part in subspace
//! decomposition, the rest ride along unchanged.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Error;
use crate::matrix::Matrix;
use crate::Result;

/// Dense row-major tensor. `dims` may be empty (a scalar holds one value).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if expect != data.len() {
            return Err(Error::InvalidMatrix(format!(
                "tensor dims {dims:?} need {expect} entries, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidMatrix(format!("non-finite entry {bad}")));
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: Matrix) -> Self {
        Self {
            dims: alloc::vec![m.rows(), m.cols()],
            data: m.into_data(),
        }
    }

    pub fn from_vec(v: Vec<f64>) -> Result<Self> {
        let dims = alloc::vec![v.len()];
        Self::new(dims, v)
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            data: alloc::vec![0.0; self.data.len()],
        }
    }

    /// True when the tensor has at least two axes and every extent is
    /// nonzero, i.e. it can be viewed as a nonempty matrix.
    pub fn is_decomposable(&self) -> bool {
        self.ndim() >= 2 && self.dims.iter().all(|&d| d > 0)
    }

    /// Row-major view with the leading axis as rows and all remaining axes
    /// flattened into columns. For 2-D tensors this is the matrix itself.
    /// The buffer is reinterpreted, not shuffled.
    pub fn as_matrix_2d(&self) -> Result<Matrix> {
        if !self.is_decomposable() {
            return Err(Error::InvalidMatrix(format!(
                "tensor of shape {:?} has no 2-D view",
                self.dims
            )));
        }
        let rows = self.dims[0];
        let cols: usize = self.dims[1..].iter().product();
        Matrix::new(rows, cols, self.data.clone())
    }

    /// Inverse of [`as_matrix_2d`]: wraps matrix data back into `dims`.
    pub fn from_matrix_2d(m: Matrix, dims: &[usize]) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if m.rows() * m.cols() != expect || dims.first() != Some(&m.rows()) {
            return Err(Error::DimensionMismatch(format!(
                "matrix {}x{} does not reshape to {dims:?}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data: m.into_data(),
        })
    }
}

/// Named map from layer identifiers to dense tensors. Iteration order is the
/// lexicographic layer order, which keeps every downstream artifact
/// deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskVector {
    layers: BTreeMap<String, Tensor>,
}

impl TaskVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a layer, rejecting duplicate names.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.layers.contains_key(&name) {
            return Err(Error::LayerMismatch(format!("duplicate layer {name:?}")));
        }
        self.layers.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.layers.get(name)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.layers.iter()
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &String> {
        self.layers.keys()
    }

    /// Checks that `other` has exactly the same layer names and shapes.
    pub fn same_structure(&self, other: &TaskVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LayerMismatch(format!(
                "{} layers vs {}",
                self.len(),
                other.len()
            )));
        }
        for (name, t) in self.iter() {
            match other.get(name) {
                None => return Err(Error::LayerMismatch(format!("missing layer {name:?}"))),
                Some(o) if o.dims() != t.dims() => {
                    return Err(Error::LayerMismatch(format!(
                        "layer {name:?}: shape {:?} vs {:?}",
                        t.dims(),
                        o.dims()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

impl FromIterator<(String, Tensor)> for TaskVector {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self {
            layers: iter.into_iter().collect(),
        }
    }
}

/// `base + sum_t lambda_t * term_t`, layer by layer and entry by entry.
/// Terms must match the base's layer structure. An entry whose accumulated
/// delta is exactly zero keeps the base entry bit for bit, so an empty term
/// list (or all-zero coefficients) reproduces `base` exactly.
pub fn combine(base: &TaskVector, terms: &[(&TaskVector, f64)]) -> Result<TaskVector> {
    for (tv, _) in terms {
        base.same_structure(tv)?;
    }
    let mut out = TaskVector::new();
    for (name, t) in base.iter() {
        let mut delta = alloc::vec![0.0; t.len()];
        for (tv, lambda) in terms {
            let src = tv.get(name).expect("structure checked").data();
            for (d, s) in delta.iter_mut().zip(src.iter()) {
                *d += lambda * s;
            }
        }
        let data: Vec<f64> = t
            .data()
            .iter()
            .zip(delta.iter())
            .map(|(&b, &d)| if d == 0.0 { b } else { b + d })
            .collect();
        out.insert(name.clone(), Tensor::new(t.dims().to_vec(), data)?)?;
    }
    Ok(out)
}
