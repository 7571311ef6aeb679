use super::tensor::Tensor;
use crate::scalar::Scalar;
use crate::seed;
use crate::{Error, Result};
use rand::Rng as _;
use std::collections::BTreeMap;

/// Named collection of parameter tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Param("empty parameter name".into()));
        }
        if t.data.len() != t.shape.iter().product::<usize>() {
            return Err(Error::Param(format!("{name}: value count does not match shape")));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::Param(format!("duplicate parameter {name}")));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Param(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Param(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape.clone())))
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &ParamStore<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((ka, ta), (kb, tb))| ka == kb && ta.shape == tb.shape)
    }

    pub fn check_layout(&self, other: &ParamStore<T>) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Param("parameter names or shapes differ".into()))
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.entries.values_mut() {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// `self += other`, element-wise over matching layouts.
    pub fn add_assign(&mut self, other: &ParamStore<T>) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.entries.values_mut().zip(other.entries.values()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in self.entries.values_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Global L2 norm accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.data.iter())
            .map(|v| {
                let x = v.f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, t)| (k.clone(), t.cast()))
                .collect(),
        }
    }

    /// Register a tensor drawn uniformly from `[-scale, scale]`.
    pub fn insert_uniform(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        scale: f64,
        rng: &mut seed::Rng,
    ) -> Result<()> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(rng.random_range(-scale..=scale)))
            .collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    /// Flat view of every value in name order.
    pub fn flatten(&self) -> Vec<T> {
        self.entries
            .values()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    /// Mutable references to every value in name order.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.entries.values_mut().flat_map(|t| t.data.iter_mut())
    }
}
