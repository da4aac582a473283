use std::sync::atomic::{AtomicU64, Ordering};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a [`ParamStore`], recorded on tapes so gradients can be
/// routed back to the store that owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StoreId(u64);

impl StoreId {
    fn fresh() -> Self {
        StoreId(NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// One trainable tensor with its gradient slot and Adagrad accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Matrix,
    pub grad: Matrix,
    pub accum: Matrix,
    pub frozen: bool,
}

impl ParamEntry {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        ParamEntry {
            value,
            grad: Matrix::zeros(r, c),
            accum: Matrix::zeros(r, c),
            frozen: false,
        }
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Cloning keeps the [`StoreId`], so a clone is interchangeable with its
/// source when replaying a tape. Use [`ParamStore::detached`] for a copy with
/// a new identity.
#[derive(Clone, Debug)]
pub struct ParamStore {
    id: StoreId,
    label: String,
    entries: IndexMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new(label: impl Into<String>) -> Self {
        ParamStore {
            id: StoreId::fresh(),
            label: label.into(),
            entries: IndexMap::new(),
        }
    }

    pub fn detached(&self) -> Self {
        ParamStore {
            id: StoreId::fresh(),
            ..self.clone()
        }
    }

    pub fn id(&self) -> StoreId {
        self.id
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<usize> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Structural(format!(
                "parameter `{name}` already present in store `{}`",
                self.label
            )));
        }
        let (idx, _) = self.entries.insert_full(name, ParamEntry::new(value));
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| self.missing(name))
    }

    pub fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        let label = self.label.clone();
        self.entries.get_mut(name).ok_or_else(|| {
            Error::Structural(format!("no parameter `{name}` in store `{label}`"))
        })
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        Ok(&self.entry(name)?.value)
    }

    pub fn at(&self, index: usize) -> Option<(&str, &ParamEntry)> {
        self.entries.get_index(index).map(|(k, v)| (k.as_str(), v))
    }

    pub fn at_mut(&mut self, index: usize) -> Option<(&str, &mut ParamEntry)> {
        self.entries
            .get_index_mut(index)
            .map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    /// Replaces a tensor's value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Matrix) -> Result<()> {
        let entry = self.entry_mut(name)?;
        if entry.value.shape() != value.shape() {
            return Err(Error::DimMismatch {
                what: format!("parameter `{name}`"),
                expected: format!("{:?}", entry.value.shape()),
                found: format!("{:?}", value.shape()),
            });
        }
        entry.value = value;
        Ok(())
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.entry_mut(name)?.frozen = frozen;
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        self.entries.values_mut().for_each(|e| e.frozen = true);
    }

    pub fn zero_grads(&mut self) {
        self.entries.values_mut().for_each(|e| e.grad.fill(0.0));
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn grad_sum_squares(&self) -> f64 {
        self.entries
            .values()
            .filter(|e| !e.frozen)
            .map(|e| e.grad.sum_squares())
            .sum()
    }

    fn missing(&self, name: &str) -> Error {
        Error::Structural(format!("no parameter `{name}` in store `{}`", self.label))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new("s");
        s.insert("w", Matrix::zeros(2, 2)).unwrap();
        assert!(s.insert("w", Matrix::zeros(1, 1)).is_err());
        assert_eq!(s.count(), 4);
    }

    #[test]
    fn grad_shape_follows_value() {
        let mut s = ParamStore::new("s");
        s.insert("w", Matrix::zeros(3, 5)).unwrap();
        let e = s.entry("w").unwrap();
        assert_eq!(e.grad.shape(), (3, 5));
        assert_eq!(e.accum.shape(), (3, 5));
        assert!(s.set_value("w", Matrix::zeros(5, 3)).is_err());
    }

    #[test]
    fn detached_gets_new_identity() {
        let s = ParamStore::new("s");
        assert_eq!(s.clone().id(), s.id());
        assert_ne!(s.detached().id(), s.id());
    }
}
