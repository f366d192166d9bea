//! Named parameter storage shared by the model and its position encoder.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Optimizer groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Embeddings, attention, feed-forward, norms, output head.
    Base,
    /// Position-encoder parameters that are not part of a flow.
    Encoder,
    /// Dynamics weights and trajectory initial vectors.
    Flow,
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    tensor: Tensor,
    group: ParamGroup,
}

/// Insertion-ordered named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

/// Tape handles for every parameter, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, group: ParamGroup) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry {
            name,
            tensor: tensor.with_grad(true),
            group,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id.0].group
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// `(id, name, tensor, group)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor, ParamGroup)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &e.tensor, e.group))
    }

    pub fn count(&self, group: Option<ParamGroup>) -> usize {
        self.entries
            .iter()
            .filter(|e| group.is_none_or(|g| g == e.group))
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn count_ids(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.get(id).len()).sum()
    }

    /// Records every parameter as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.entries.iter().map(|e| tape.param(&e.tensor)).collect())
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_constants(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.entries
                .iter()
                .map(|e| tape.constant(e.tensor.clone()))
                .collect(),
        )
    }

    /// Adds the tape gradients of a bound store into each tensor's grad slot.
    pub fn absorb_grads(&mut self, tape: &Tape, bound: &Bound) {
        for (e, &v) in self.entries.iter_mut().zip(&bound.0) {
            if let Some(g) = tape.grad_data(v) {
                e.tensor.accumulate_grad(g);
            }
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        self.entries[id.0].tensor.accumulate_grad(g);
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    /// Replaces a tensor's values, keeping its shape.
    pub fn set(&mut self, id: ParamId, values: &Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.tensor.shape() != values.shape() {
            return Err(Error::dim(format!(
                "{}: shape {:?} cannot take values of shape {:?}",
                e.name,
                e.tensor.shape(),
                values.shape()
            )));
        }
        e.tensor.data_mut().copy_from_slice(values.data());
        Ok(())
    }
}
