//! Named trainable arrays and their gradient buffers.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::array::DenseArray;
use crate::error::{contract, shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<DenseArray>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseArray) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return contract(format!("parameter {name} registered twice"));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// Glorot-uniform weight matrix: entries in `±sqrt(6/(fan_in+fan_out))`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.add(name, DenseArray::uniform(fan_in, fan_out, bound, rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, DenseArray::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(DenseArray::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &DenseArray {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseArray {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: DenseArray) -> Result<()> {
        if !self.values[id.0].same_shape(&value) {
            return shape_err("ParameterStore::set", self.names[id.0].clone());
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &DenseArray)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Rebuilds the name index, e.g. after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }
}

/// One gradient array per parameter of a store, aligned by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    arrays: Vec<DenseArray>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self {
            arrays: store
                .values
                .iter()
                .map(|v| {
                    let mut z = v.clone();
                    z.data_mut().iter_mut().for_each(|x| *x = 0.0);
                    z
                })
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &DenseArray {
        &self.arrays[id.0]
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &DenseArray) {
        self.arrays[id.0].add_assign(g);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.arrays {
            a.scale_in_place(s);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.arrays.iter().map(DenseArray::sq_norm).sum()
    }

    /// Squared norm restricted to a subset of parameters.
    pub fn sq_norm_of(&self, ids: &[ParamId]) -> f64 {
        ids.iter().map(|id| self.arrays[id.0].sq_norm()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(DenseArray::is_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &DenseArray)> {
        self.arrays.iter().enumerate().map(|(i, a)| (ParamId(i), a))
    }
}
