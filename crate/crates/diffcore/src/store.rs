//! Named parameter storage and the adaptive-moment optimizer.

use std::collections::HashMap;

use indexmap::IndexMap;

use crate::checkpoint;
use crate::error::{DiffError, Result};
use crate::rng::DetRng;
use crate::tensor::Tensor;

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Ordered map from dotted parameter names to tensors, plus the optimizer
/// state that travels with them. Registration order is the iteration order,
/// which makes initialization and checkpoint layout deterministic.
#[derive(Default)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
    moments: HashMap<String, Moments>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    /// Registers a weight matrix initialized uniform in ±1/sqrt(fan_in),
    /// where fan_in is the first extent.
    pub fn weight(&mut self, name: &str, shape: &[usize], rng: &mut DetRng) -> Result<Tensor> {
        let fan_in = shape.first().copied().unwrap_or(1).max(1);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.range(-bound, bound)).collect();
        let t = Tensor::param(shape, data)?;
        self.register(name, t.clone())?;
        Ok(t)
    }

    /// Registers a zero-initialized bias vector.
    pub fn bias(&mut self, name: &str, len: usize) -> Result<Tensor> {
        let t = Tensor::param(&[len], vec![0.0; len])?;
        self.register(name, t.clone())?;
        Ok(t)
    }

    pub fn register(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(DiffError::Contract(format!(
                "parameter {name:?} registered twice"
            )));
        }
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        self.params.get(name).cloned()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.values().cloned().collect()
    }

    pub fn total_parameters(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for t in self.params.values() {
            t.zero_grad();
        }
    }

    /// One adaptive-moment update with bias correction. Requires every
    /// parameter to carry a gradient; clears gradients afterwards.
    pub fn adam_step(&mut self, lr: f64, betas: (f64, f64), eps: f64) -> Result<()> {
        let (b1, b2) = betas;
        let t = self.step + 1;
        let corr1 = 1.0 - b1.powi(t as i32);
        let corr2 = 1.0 - b2.powi(t as i32);
        for (name, tensor) in &self.params {
            let grad = tensor.grad().ok_or_else(|| {
                DiffError::Contract(format!("adam_step: parameter {name:?} has no gradient"))
            })?;
            let n = tensor.numel();
            let mom = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let mut data = tensor.value();
            for i in 0..n {
                let g = grad[i];
                mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g;
                mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g * g;
                let mhat = mom.m[i] / corr1;
                let vhat = mom.v[i] / corr2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            tensor.set_value(&data)?;
            tensor.zero_grad();
        }
        self.step = t;
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let entries: Vec<(String, Vec<usize>, Vec<f64>)> = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), t.shape(), t.value()))
            .collect();
        checkpoint::write_checkpoint(path, &entries)
    }

    /// Overwrites the values of already-registered parameters from a
    /// checkpoint. The name sets and shapes must match exactly.
    pub fn load_values(&mut self, path: &std::path::Path) -> Result<()> {
        let entries = checkpoint::read_checkpoint(path)?;
        if entries.len() != self.params.len() {
            return Err(DiffError::Checkpoint(format!(
                "checkpoint has {} parameters, store has {}",
                entries.len(),
                self.params.len()
            )));
        }
        for (name, shape, data) in entries {
            let tensor = self.params.get(&name).ok_or_else(|| {
                DiffError::Checkpoint(format!("checkpoint parameter {name:?} not in store"))
            })?;
            if tensor.shape() != shape {
                return Err(DiffError::Checkpoint(format!(
                    "parameter {name:?}: checkpoint shape {:?} vs store shape {:?}",
                    shape,
                    tensor.shape()
                )));
            }
            tensor.set_value(&data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut store = ParamStore::new();
        let p = Tensor::param(&[1], vec![0.5]).unwrap();
        store.register("p", p.clone()).unwrap();
        // loss = (p - p0)^2 at the minimum: gradient is exactly zero
        let loss = p.mse_loss(&[0.5]).unwrap();
        loss.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![0.0]);
        store.adam_step(0.1, (0.9, 0.999), 1e-8).unwrap();
        assert_eq!(p.value(), vec![0.5]);
    }

    #[test]
    fn single_step_with_unit_gradient_moves_by_lr() {
        // g = 1 on the first step gives m_hat = v_hat = 1, so the
        // bias-corrected update is -lr / (1 + eps)
        let mut store = ParamStore::new();
        let p = Tensor::param(&[1], vec![0.0]).unwrap();
        store.register("p", p.clone()).unwrap();
        p.backward().unwrap(); // loss = p itself
        assert_eq!(p.grad().unwrap(), vec![1.0]);
        store.adam_step(0.1, (0.9, 0.999), 1e-8).unwrap();
        assert!((p.value()[0] + 0.1).abs() < 1e-8);
        assert_eq!(store.step_count(), 1);
        assert!(p.grad().is_none(), "grads cleared after step");
    }

    #[test]
    fn repeated_steps_descend_convex_quadratic() {
        let mut store = ParamStore::new();
        let mut rng = DetRng::seed_from(3);
        let p = store.weight("p", &[1], &mut rng).unwrap();
        let loss_at = |v: f64| (v - 2.0) * (v - 2.0);
        let mut prev = loss_at(p.value()[0]);
        for _ in 0..2 {
            let loss = p.mse_loss(&[2.0]).unwrap();
            loss.backward().unwrap();
            store.adam_step(0.05, (0.9, 0.999), 1e-8).unwrap();
            let now = loss_at(p.value()[0]);
            assert!(now < prev, "loss should decrease: {now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut store = ParamStore::new();
        let p = Tensor::param(&[2], vec![0.0, 0.0]).unwrap();
        store.register("p", p).unwrap();
        assert!(store.adam_step(0.1, (0.9, 0.999), 1e-8).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.register("p", Tensor::zeros(&[1])).unwrap();
        assert!(store.register("p", Tensor::zeros(&[1])).is_err());
    }
}
