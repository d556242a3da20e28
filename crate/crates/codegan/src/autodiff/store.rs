use std::collections::HashMap;

use super::value::{Tensor, Value};
use crate::error::{Error, Result};

/// Ordered map of named trainable parameters. Iteration order is insertion
/// order, which the checkpoint format and determinism tests rely on.
pub struct ParameterStore {
    entries: Vec<(String, Value)>,
    index: HashMap<String, usize>,
    rng_seed: u64,
}

impl ParameterStore {
    pub fn new(rng_seed: u64) -> ParameterStore {
        ParameterStore {
            entries: Vec::new(),
            index: HashMap::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn add(&mut self, name: &str, value: Value) -> Result<Value> {
        if self.index.contains_key(name) {
            return Err(Error::Internal(format!("duplicate parameter name {name}")));
        }
        if !value.requires_grad() {
            return Err(Error::Internal(format!(
                "parameter {name} must require gradients"
            )));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), value.clone()));
        Ok(value)
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn values(&self) -> impl Iterator<Item = &Value> {
        self.entries.iter().map(|(_, v)| v)
    }

    pub fn zero_grads(&self) {
        for (_, v) in &self.entries {
            v.zero_grad();
        }
    }

    pub fn total_scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.numel()).sum()
    }

    /// Copy of every parameter's data, in insertion order.
    pub fn snapshot(&self) -> Vec<Vec<f32>> {
        self.entries.iter().map(|(_, v)| v.data().clone()).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<f32>]) -> Result<()> {
        if snapshot.len() != self.entries.len() {
            return Err(Error::Internal(format!(
                "snapshot has {} entries, store has {}",
                snapshot.len(),
                self.entries.len()
            )));
        }
        for ((name, v), s) in self.entries.iter().zip(snapshot.iter()) {
            if v.numel() != s.len() {
                return Err(Error::Internal(format!(
                    "snapshot entry {name} has {} values, parameter has {}",
                    s.len(),
                    v.numel()
                )));
            }
            v.data_mut().copy_from_slice(s);
        }
        Ok(())
    }

    /// Replace a parameter's data after a checkpoint load.
    pub fn load_data(&self, name: &str, data: &[f32]) -> Result<()> {
        let v = self
            .get(name)
            .ok_or_else(|| Error::Internal(format!("unknown parameter {name} in checkpoint")))?;
        if v.numel() != data.len() {
            return Err(Error::Internal(format!(
                "parameter {name} expects {} values, checkpoint has {}",
                v.numel(),
                data.len()
            )));
        }
        v.data_mut().copy_from_slice(data);
        Ok(())
    }

    /// Fresh leaf bound into the store.
    pub fn add_tensor(&mut self, name: &str, tensor: Tensor) -> Result<Value> {
        self.add(name, Value::parameter(tensor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_is_preserved() {
        let mut store = ParameterStore::new(0);
        for name in ["w", "b", "emb", "a0"] {
            store
                .add(name, Value::parameter(Tensor::scalar(1.0)))
                .unwrap();
        }
        let names: Vec<&str> = store.iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["w", "b", "emb", "a0"]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::new(0);
        store
            .add("w", Value::parameter(Tensor::scalar(1.0)))
            .unwrap();
        assert!(store.add("w", Value::parameter(Tensor::scalar(2.0))).is_err());
    }

    #[test]
    fn snapshot_restore_roundtrip() {
        let mut store = ParameterStore::new(0);
        let w = store
            .add("w", Value::parameter(Tensor::new(vec![1.0, 2.0], vec![2])))
            .unwrap();
        let snap = store.snapshot();
        w.data_mut()[0] = 99.0;
        store.restore(&snap).unwrap();
        assert_eq!(*w.data(), vec![1.0, 2.0]);
    }
}
