use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: bool,
}

/// Named parameter arrays in construction order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor, frozen: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            tensor,
            frozen,
        });
        ParamId(self.params.len() - 1)
    }

    pub(crate) fn normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        frozen: bool,
        rng: &mut impl Rng,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.push(name, Tensor::new(shape.to_vec(), data).expect("shape"), frozen)
    }

    pub(crate) fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64, frozen: bool) -> ParamId {
        self.push(name, Tensor::filled(shape, value), frozen)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn set_tensor(&mut self, id: ParamId, tensor: Tensor) {
        debug_assert_eq!(tensor.shape(), self.params[id.0].tensor.shape());
        self.params[id.0].tensor = tensor;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Leaf for `id`; trainable only when `train` is set and the parameter is not frozen.
    pub fn var(&self, g: &mut Graph, id: ParamId, train: bool) -> Var {
        let p = &self.params[id.0];
        g.param(id.0, &p.tensor, train && !p.frozen)
    }

    /// SHA-256 over names, shapes and little-endian values of the selected parameters.
    pub fn checksum(&self, mut select: impl FnMut(&Param) -> bool) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| select(p)) {
            h.update(p.name.as_bytes());
            for d in p.tensor.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn frozen_checksum(&self) -> String {
        self.checksum(|p| p.frozen)
    }
}
