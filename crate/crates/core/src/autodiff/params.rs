use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::rng::SplitMix64;

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Copy of every parameter whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Overwrite (or add) every entry of `other`.
    pub fn merge(&mut self, other: &ParamStore) {
        for (k, v) in &other.params {
            self.params.insert(k.clone(), v.clone());
        }
    }

    /// Uniform Glorot initialization for a `(fan_in, fan_out)` matrix.
    pub fn init_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut SplitMix64) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.init_uniform(name, &[fan_in, fan_out], bound, rng);
    }

    pub fn init_uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut SplitMix64) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        self.insert(name, Tensor::from_parts(shape.to_vec(), data));
    }

    pub fn init_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut SplitMix64) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * rng.normal()).collect();
        self.insert(name, Tensor::from_parts(shape.to_vec(), data));
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) {
        self.insert(name, Tensor::full(shape, value));
    }
}
