//! Trainable parameters.
//!
//! A [`Parameter`] owns its master values and a gradient accumulator behind
//! locks, so a model shared across threads can run read-only forward passes
//! in parallel. Graphs themselves are single-threaded; only the parameter
//! store is shared.

use std::sync::{Arc, Mutex, RwLock};

use rand::RngCore;

use crate::ops::Op;
use crate::tensor::Tensor;

/// Shared handle to a parameter.
pub type Param = Arc<Parameter>;

pub struct Parameter {
    name: String,
    shape: Vec<usize>,
    value: RwLock<Vec<f64>>,
    grad: Mutex<Vec<f64>>,
}

impl Parameter {
    pub fn new(name: &str, shape: &[usize], data: Vec<f64>) -> Param {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "parameter {name}: data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Arc::new(Parameter {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: Mutex::new(vec![0.0; numel]),
            value: RwLock::new(data),
        })
    }

    pub fn zeros(name: &str, shape: &[usize]) -> Param {
        let n: usize = shape.iter().product();
        Parameter::new(name, shape, vec![0.0; n])
    }

    pub fn constant(name: &str, shape: &[usize], v: f64) -> Param {
        let n: usize = shape.iter().product();
        Parameter::new(name, shape, vec![v; n])
    }

    /// Gaussian init with standard deviation `std`.
    pub fn randn(name: &str, shape: &[usize], std: f64, rng: &mut dyn RngCore) -> Param {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal(rng) * std).collect();
        Parameter::new(name, shape, data)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Snapshot of the current values as a differentiable leaf. Gradients
    /// reaching the leaf accumulate into this parameter.
    pub fn leaf(self: &Arc<Self>) -> Tensor {
        let data = self.value.read().unwrap().clone();
        Tensor::make(self.shape.clone(), data, Op::Leaf, Some(self.clone()))
    }

    /// Snapshot of the current values with no gradient tracking.
    pub fn frozen(&self) -> Tensor {
        Tensor::from_vec(&self.shape, self.value.read().unwrap().clone())
    }

    pub fn value(&self) -> Vec<f64> {
        self.value.read().unwrap().clone()
    }

    pub fn set_value(&self, data: Vec<f64>) {
        assert_eq!(data.len(), self.numel(), "set_value length mismatch");
        *self.value.write().unwrap() = data;
    }

    /// In-place edit of the master values (used by optimizers).
    pub fn update_value(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.value.write().unwrap());
    }

    pub fn grad(&self) -> Vec<f64> {
        self.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        for g in self.grad.lock().unwrap().iter_mut() {
            *g = 0.0;
        }
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut g = self.grad.lock().unwrap();
        for (a, d) in g.iter_mut().zip(delta) {
            *a += d;
        }
    }
}

impl std::fmt::Debug for Parameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Parameter")
            .field("name", &self.name)
            .field("shape", &self.shape)
            .finish()
    }
}

/// Standard normal sample via Box-Muller, driven by any `RngCore`.
pub fn normal(rng: &mut dyn RngCore) -> f64 {
    // Map u64 draws into (0, 1]; the first operand must stay away from zero
    // because it goes through a log.
    let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let u2 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
