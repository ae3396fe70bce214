use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::Array2;

/// A parameter together with its gradient and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Array2,
    pub grad: Array2,
    pub moment1: Array2,
    pub moment2: Array2,
}

impl ParamEntry {
    fn new(value: Array2) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Array2::zeros(r, c),
            moment1: Array2::zeros(r, c),
            moment2: Array2::zeros(r, c),
        }
    }
}

/// Named parameters, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {name}"
            )));
        }
        self.entries.insert(name, ParamEntry::new(value));
        Ok(())
    }

    /// Inserts a fully populated entry (used when restoring checkpoints).
    pub fn insert_entry(&mut self, name: impl Into<String>, entry: ParamEntry) -> Result<()> {
        let name = name.into();
        let shape = entry.value.shape();
        if entry.grad.shape() != shape
            || entry.moment1.shape() != shape
            || entry.moment2.shape() != shape
        {
            return Err(Error::Shape(format!("entry {name} has mismatched arrays")));
        }
        if self.entries.insert(name.clone(), entry).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {name}"
            )));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    /// Parameter value by name; panics if missing, since layer code only asks
    /// for names it registered itself.
    pub fn value(&self, name: &str) -> &Array2 {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Array2 {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .map(|e| e.grad.sum_squares())
            .sum::<f64>()
            .sqrt()
    }
}
