//! Named parameter collections.
//!
//! Model weights live in a flat, insertion-ordered name -> tensor map. The
//! fixed iteration order is what makes optimizer state, checkpoints, and
//! gradient checks line up without extra bookkeeping.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::numerics::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    items: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        let prev = self.items.insert(name.to_string(), tensor);
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.items
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.items
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Result<&Tensor> {
        self.items
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.items.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.items.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.items.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn all_finite(&self) -> bool {
        self.items.values().all(Tensor::all_finite)
    }

    /// Register every parameter as a leaf on `tape`, returning the handle map
    /// used by forward passes and gradient extraction.
    pub fn leaves(&self, tape: &Tape) -> ParamVars {
        let mut vars = IndexMap::with_capacity(self.items.len());
        for (name, t) in &self.items {
            vars.insert(name.clone(), tape.leaf(t.clone()));
        }
        ParamVars { vars }
    }
}

/// Per-tape `Var` handles for a [`ParamSet`], keyed by parameter name.
pub struct ParamVars {
    vars: IndexMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> &Var {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Truncated-normal init (std `std`, resampling outside two std), the
/// conventional transformer projection init.
pub fn trunc_normal(shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std must be positive");
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        let v = dist.sample(rng);
        if v.abs() <= 2.0 * std {
            data.push(v);
        }
    }
    Tensor::new(shape, data).expect("shape/data consistent by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn insertion_order_is_preserved() {
        let mut p = ParamSet::new();
        p.insert("b", Tensor::zeros(vec![1]));
        p.insert("a", Tensor::zeros(vec![1]));
        let names: Vec<&str> = p.iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["b", "a"]);
    }

    #[test]
    fn trunc_normal_stays_within_two_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = trunc_normal(vec![64, 64], 0.02, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
    }
}
