//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use std::collections::BTreeMap;

/// Per-parameter first/second moment estimates plus the shared step count.
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zero moments mirroring every parameter of `store`.
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self::with_hyperparams(store, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, value) in store.iter_values() {
            m.insert(name.to_string(), Tensor::zeros(value.shape().to_vec()));
            v.insert(name.to_string(), Tensor::zeros(value.shape().to_vec()));
        }
        AdamState {
            m,
            v,
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update over every parameter in the store.
///
/// Update rule per element, with t incremented once per call:
///   m ← β1·m + (1−β1)·g
///   v ← β2·v + (1−β2)·g²
///   w ← w − lr·√(1−β2ᵗ)/(1−β1ᵗ) · m/(√v + ε)
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let scale = state.lr * (1.0 - state.beta2.powi(t)).sqrt() / (1.0 - state.beta1.powi(t));

    let names: Vec<String> = store.names().map(String::from).collect();
    for name in names {
        let m = state
            .m
            .get_mut(&name)
            .ok_or_else(|| Error::MissingState(name.clone()))?;
        let v = state
            .v
            .get_mut(&name)
            .ok_or_else(|| Error::MissingState(name.clone()))?;
        let grad = store.grad(&name)?.clone();
        let value = store.value_mut(&name)?;
        for i in 0..grad.numel() {
            let g = grad.data()[i];
            let mi = state.beta1 * m.data()[i] + (1.0 - state.beta1) * g;
            let vi = state.beta2 * v.data()[i] + (1.0 - state.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            value.data_mut()[i] -= scale * mi / (vi.sqrt() + state.eps);
        }
    }
    Ok(())
}
