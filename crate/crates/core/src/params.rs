//! Named trainable parameters with matching gradient buffers.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

struct Entry {
    value: Tensor,
    grad: Tensor,
}

/// All trainable parameters of a model, keyed by unique name.
///
/// Iteration order is always name order, so every consumer (optimizer,
/// checkpointing, gradient checking) sees the same deterministic sequence.
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
    rng_seed: u64,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        ParamStore {
            entries: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Register a parameter with an explicit initial value.
    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        self.entries.insert(name.to_string(), Entry { value, grad });
        Ok(())
    }

    /// Register a weight drawn uniformly from [-1/√fan_in, +1/√fan_in].
    pub fn register_uniform(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
        self.register(name, Tensor::new(shape, data)?)
    }

    pub fn register_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<()> {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn register_ones(&mut self, name: &str, shape: Vec<usize>) -> Result<()> {
        self.register(name, Tensor::full(shape, 1.0))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.grad)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn set_grad(&mut self, name: &str, grad: &Tensor) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if entry.value.shape() != grad.shape() {
            return Err(Error::Shape {
                op: "set_grad",
                lhs: entry.value.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        entry.grad = grad.clone();
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter_values(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn iter_grads(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.grad))
    }

    /// Number of registered tensors.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    /// Deep copy of values only (fresh zero gradients).
    pub fn snapshot(&self) -> ParamStore {
        let mut copy = ParamStore::new(self.rng_seed);
        for (name, entry) in &self.entries {
            copy.register(name, entry.value.clone()).expect("unique");
        }
        copy
    }

    /// Overwrite values from another store with identical entry layout.
    pub fn restore(&mut self, snapshot: &ParamStore) -> Result<()> {
        for (name, entry) in &snapshot.entries {
            let dst = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            dst.value = entry.value.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_name_rejected() {
        let mut store = ParamStore::new(1);
        store.register("w", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(
            store.register("w", Tensor::scalar(2.0)),
            Err(Error::DuplicateParam(_))
        ));
    }

    #[test]
    fn zero_grads_clears_every_element() {
        let mut store = ParamStore::new(1);
        store.register("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        store
            .set_grad("w", &Tensor::vector(vec![3.0, -4.0]))
            .unwrap();
        store.zero_grads();
        assert_eq!(store.grad("w").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut store = ParamStore::new(7);
        store
            .register_uniform("w", vec![16, 16], 16, &mut rng)
            .unwrap();
        let bound = 1.0 / 4.0;
        assert!(store
            .value("w")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() <= bound));
    }

    #[test]
    fn grad_shape_must_match_value() {
        let mut store = ParamStore::new(1);
        store.register("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(store.set_grad("w", &Tensor::scalar(1.0)).is_err());
    }
}
