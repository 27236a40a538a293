use indexmap::IndexMap;

use super::graph::{Gradients, Graph, Var};
use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{GeneError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameter tensors with gradient slots, iterated in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
    rng_seed: u64,
}

/// Graph handles for every entry of one store, in store order.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Handles supplied by the caller, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn var(&self, index: usize) -> Var {
        self.0[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        ParamStore {
            entries: IndexMap::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<usize> {
        if self.entries.contains_key(name) {
            return Err(GeneError::dim(format!("duplicate parameter name {name:?}")));
        }
        let grad = Tensor::zeros(value.shape());
        let (idx, _) = self.entries.insert_full(name.to_string(), Param { value, grad });
        Ok(idx)
    }

    /// Glorot-uniform initialised `fan_in×fan_out` matrix:
    /// U(±sqrt(6/(fan_in+fan_out))).
    pub fn insert_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<usize> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit)).collect();
        self.insert(name, Tensor::matrix(fan_in, fan_out, data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<usize> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn value_at(&self, index: usize) -> &Tensor {
        &self.entries[index].value
    }

    pub fn value_at_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    /// Overwrites the value of an existing entry, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| GeneError::dim(format!("unknown parameter {name:?}")))?;
        if p.value.shape() != value.shape() {
            return Err(GeneError::dim(format!(
                "parameter {name:?}: shape {:?} vs stored {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    /// Records every value as a leaf on `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.entries.values().map(|p| g.input(p.value.clone())).collect())
    }

    /// Adds the adjoints of `bound` into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &Bound) {
        for (p, v) in self.entries.values_mut().zip(&bound.0) {
            if let Some(g) = grads.get(*v) {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// `value -= lr * grad` for every entry, then clears gradients.
    /// A non-finite gradient aborts before any value changes.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(GeneError::numeric(format!("invalid learning rate {lr}")));
        }
        if let Some((name, _)) = self.entries.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(GeneError::numeric(format!("non-finite gradient for {name}")));
        }
        for p in self.entries.values_mut() {
            for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *v -= lr * g;
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|p| p.value.is_finite())
    }
}
