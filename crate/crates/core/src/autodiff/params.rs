use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tape::{Grads, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Names and shapes of the tensors stored in a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<(String, usize, usize)>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a `rows × cols` tensor and returns its slot index.
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.entries.push((name.into(), rows, cols));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.entries.iter().map(|(_, r, c)| r * c).sum()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.entries[slot].0
    }

    pub fn shape(&self, slot: usize) -> (usize, usize) {
        (self.entries[slot].1, self.entries[slot].2)
    }

    pub fn offset(&self, slot: usize) -> usize {
        self.entries[..slot].iter().map(|(_, r, c)| r * c).sum()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _, _)| n == name)
    }
}

/// Flat real vector over a named collection of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<ParamLayout>,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let n = layout.size();
        Self {
            layout,
            data: vec![0.0; n],
        }
    }

    pub fn from_flat(layout: Arc<ParamLayout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.size() {
            return Err(Error::DimensionMismatch(format!(
                "flat vector has {} entries, layout needs {}",
                data.len(),
                layout.size()
            )));
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slice(&self, slot: usize) -> &[f64] {
        let o = self.layout.offset(slot);
        let (r, c) = self.layout.shape(slot);
        &self.data[o..o + r * c]
    }

    pub fn slice_mut(&mut self, slot: usize) -> &mut [f64] {
        let o = self.layout.offset(slot);
        let (r, c) = self.layout.shape(slot);
        &mut self.data[o..o + r * c]
    }

    pub fn tensor(&self, slot: usize) -> Tensor {
        let (r, c) = self.layout.shape(slot);
        Tensor::new(r, c, self.slice(slot).to_vec())
    }

    /// Splits into one tensor per slot.
    pub fn unflatten(&self) -> Vec<Tensor> {
        (0..self.layout.len()).map(|s| self.tensor(s)).collect()
    }

    /// Inverse of [`unflatten`](Self::unflatten).
    pub fn flatten(layout: Arc<ParamLayout>, tensors: &[Tensor]) -> Result<Self> {
        if tensors.len() != layout.len()
            || tensors
                .iter()
                .enumerate()
                .any(|(s, t)| t.shape() != layout.shape(s))
        {
            return Err(Error::DimensionMismatch(
                "tensors do not match the parameter layout".into(),
            ));
        }
        let data = tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect();
        Ok(Self { layout, data })
    }

    /// Registers every slot as a differentiable leaf on `tape`.
    pub fn attach(&self, tape: &mut Tape) -> Vec<Var> {
        (0..self.layout.len())
            .map(|s| tape.param(self.tensor(s)))
            .collect()
    }

    /// Registers every slot as a constant on `tape`.
    pub fn attach_constant(&self, tape: &mut Tape) -> Vec<Var> {
        (0..self.layout.len())
            .map(|s| tape.constant(self.tensor(s)))
            .collect()
    }
}

/// Flat gradient over a [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub flat: Vec<f64>,
    /// Names of slots the loss does not depend on (their gradient is zero).
    pub disconnected: Vec<String>,
}

/// Collects the adjoints of the leaves returned by [`ParamVector::attach`].
pub fn gradient(grads: &Grads, leaves: &[Var], layout: &ParamLayout) -> Gradient {
    let mut flat = Vec::with_capacity(layout.size());
    let mut disconnected = Vec::new();
    for (slot, &v) in leaves.iter().enumerate() {
        match grads.get(v) {
            Some(g) => flat.extend_from_slice(g.data()),
            None => {
                let (r, c) = layout.shape(slot);
                flat.extend(std::iter::repeat_n(0.0, r * c));
                disconnected.push(layout.name(slot).to_string());
            }
        }
    }
    Gradient { flat, disconnected }
}
