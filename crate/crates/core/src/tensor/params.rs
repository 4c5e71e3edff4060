use std::collections::BTreeMap;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a named parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter. Names are hierarchical (`extractor.block0.weight`).
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Overwrites a parameter by name, checking the stored shape.
    pub fn assign(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .id_of(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        let slot = &mut self.values[id.0];
        if slot.shape() != value.shape() {
            return Err(Error::shape("assign", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    /// Records every parameter on `tape`, as trainable leaves when
    /// `trainable` and as constants otherwise.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// The parameters of a [`ParamStore`] as recorded on one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Per-parameter gradients aligned with the store; parameters that did
    /// not reach the loss get zeros.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(&v.shape()))
            })
            .collect()
    }
}
