use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Patch embedding, positional table and every transformer block weight.
    Backbone,
    /// Shared factors and per-layer cores.
    Fact,
    /// Frequency-branch CNN and its stage projections.
    Ffm,
    /// Cross-branch attention projections.
    Fusion,
    Decoder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub group: ParamGroup,
    pub trainable: bool,
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value,
            group,
            trainable: true,
        });
        Ok(self.params.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.params[self.index_of(name)?].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = self.index_of(name)?;
        Ok(&mut self.params[i].value)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        self.params.iter_mut().for_each(|p| p.trainable = trainable);
    }

    pub fn set_group_trainable(&mut self, group: ParamGroup, trainable: bool) {
        self.params
            .iter_mut()
            .filter(|p| p.group == group)
            .for_each(|p| p.trainable = trainable);
    }

    /// Backbone frozen, every other group trainable.
    pub fn freeze_backbone(&mut self) {
        for p in &mut self.params {
            p.trainable = p.group != ParamGroup::Backbone;
        }
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn group_count(&self, group: ParamGroup) -> usize {
        self.params.iter().filter(|p| p.group == group).map(|p| p.value.len()).sum()
    }

    /// Records every parameter as a tape leaf; only trainable ones collect gradients.
    pub fn bind<'a>(&'a self, tape: &Tape) -> Result<Bound<'a>> {
        self.bind_with(tape, true)
    }

    /// Records every parameter without gradient tracking.
    pub fn bind_frozen<'a>(&'a self, tape: &Tape) -> Result<Bound<'a>> {
        self.bind_with(tape, false)
    }

    fn bind_with<'a>(&'a self, tape: &Tape, track: bool) -> Result<Bound<'a>> {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), track && p.trainable))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { store: self, vars })
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Result<Var> {
        Ok(self.vars[self.store.index_of(name)?])
    }

    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    /// Substitutes an externally recorded variable for a named parameter.
    pub fn replace(&mut self, name: &str, var: Var) -> Result<()> {
        let i = self.store.index_of(name)?;
        self.vars[i] = var;
        Ok(())
    }

    /// Gradients in parameter order; `None` for frozen or unused parameters.
    pub fn collect(&self, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}
