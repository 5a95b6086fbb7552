//! Named parameter storage with persistent gradient accumulators.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<R> {
    pub name: String,
    pub value: Tensor<R>,
    pub grad: Tensor<R>,
    /// Non-trainable entries (e.g. batch-norm running stats) are skipped by
    /// the optimizer but still checkpointed.
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<R> {
    entries: Vec<ParamEntry<R>>,
    by_name: BTreeMap<String, usize>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<R>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.entries.len();
        let grad = Tensor::zeros(value.shape());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<R> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<R> {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.entries[id.0].grad
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<R> {
        &self.entries[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<R>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(R::ZERO);
        }
    }

    /// Clone of all parameter values, in insertion order.
    pub fn snapshot(&self) -> Vec<Tensor<R>> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor<R>]) {
        debug_assert_eq!(snapshot.len(), self.entries.len());
        for (e, s) in self.entries.iter_mut().zip(snapshot.iter()) {
            e.value = s.clone();
        }
    }

    pub fn add_grad_dense(&mut self, id: ParamId, g: &Tensor<R>) {
        self.entries[id.0].grad.add_assign(g);
    }

    /// Row-sparse accumulation for embedding-style tables.
    pub fn add_grad_rows(&mut self, id: ParamId, indices: &[usize], rows: &Tensor<R>) {
        let grad = &mut self.entries[id.0].grad;
        let d = grad.last_dim();
        debug_assert_eq!(rows.last_dim(), d);
        for (slot, &row) in indices.iter().enumerate() {
            let dst = grad.row_mut(row);
            let src = rows.row(slot);
            for (a, b) in dst.iter_mut().zip(src.iter()) {
                *a += *b;
            }
        }
    }
}
