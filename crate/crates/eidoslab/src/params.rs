//! Named, ordered storage for all learnable weights.
//!
//! Entries keep their insertion order, which fixes the layout of optimizer
//! state, checkpoints and gradient reduction. Names are dotted paths grouped
//! by module, e.g. `backbone.3.attn.wq`.

use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "param {name}: data length must match shape"
        );
        assert!(
            !self.index.contains_key(&name),
            "duplicate param name {name}"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, shape, data });
    }

    pub fn index_of(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown param {name}"))
    }

    pub fn get(&self, name: &str) -> &ParamEntry {
        &self.entries[self.index_of(name)]
    }

    pub fn data(&self, name: &str) -> &[f64] {
        &self.get(name).data
    }

    pub fn entry(&self, i: usize) -> &ParamEntry {
        &self.entries[i]
    }

    pub fn entry_mut(&mut self, i: usize) -> &mut ParamEntry {
        &mut self.entries[i]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.data.iter().all(|v| v.is_finite()))
    }

    /// Zero-filled buffers matching every entry, in order. Used for gradient
    /// accumulation and optimizer moments.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| vec![0.0; e.data.len()]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_is_preserved() {
        let mut s = ParamStore::new();
        s.insert("b.x", vec![2], vec![1.0, 2.0]);
        s.insert("a.y", vec![1], vec![3.0]);
        assert_eq!(s.entry(0).name, "b.x");
        assert_eq!(s.entry(1).name, "a.y");
        assert_eq!(s.index_of("a.y"), 1);
        assert_eq!(s.scalar_count(), 3);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_panic() {
        let mut s = ParamStore::new();
        s.insert("w", vec![1], vec![0.0]);
        s.insert("w", vec![1], vec![0.0]);
    }
}
