//! Minimal reverse-mode autodiff: a per-batch tape of tensor ops.
//!
//! The tape records exactly the operations the policy and the score models
//! need. Forward ops push a value plus a backward closure; [`Tape::backward`]
//! walks the tape in reverse and accumulates gradients into node slots and,
//! for leaf parameters, into the [`ParamStore`]'s persistent accumulators.
//!
//! Tapes are cheap, short-lived values: training builds one per batch,
//! inference builds throwaway tapes and extracts values.

mod adam;
mod nn;
mod ops;
mod params;

pub use adam::Adam;
pub use nn::{BnAxes, LstmLayer};
pub use params::{ParamEntry, ParamId, ParamStore};

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

pub(crate) type BackFn<R> = Box<dyn Fn(&Tensor<R>, &mut BackwardCtx<'_, R>)>;

pub struct Tape<R: Real> {
    values: Vec<Tensor<R>>,
    backs: Vec<Option<BackFn<R>>>,
    /// One node per parameter, shared across uses so gradients accumulate
    /// on the tape before a single store write.
    param_cache: alloc::collections::BTreeMap<usize, NodeId>,
    training: bool,
}

pub struct BackwardCtx<'a, R: Real> {
    values: &'a [Tensor<R>],
    grads: &'a mut [Option<Tensor<R>>],
    store: &'a mut ParamStore<R>,
}

impl<'a, R: Real> BackwardCtx<'a, R> {
    pub fn value(&self, id: NodeId) -> &Tensor<R> {
        &self.values[id.0]
    }

    pub fn add_grad(&mut self, id: NodeId, g: Tensor<R>) {
        match &mut self.grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    pub fn add_param_grad(&mut self, id: ParamId, g: &Tensor<R>) {
        self.store.add_grad_dense(id, g);
    }

    pub fn add_param_grad_rows(&mut self, id: ParamId, indices: &[usize], rows: &Tensor<R>) {
        self.store.add_grad_rows(id, indices, rows);
    }
}

impl<R: Real> Tape<R> {
    pub fn new(training: bool) -> Self {
        Tape {
            values: Vec::new(),
            backs: Vec::new(),
            param_cache: alloc::collections::BTreeMap::new(),
            training,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<R> {
        &self.values[id.0]
    }

    pub(crate) fn push(&mut self, value: Tensor<R>, back: Option<BackFn<R>>) -> NodeId {
        let id = NodeId(self.values.len());
        self.values.push(value);
        self.backs.push(back);
        id
    }

    /// Index the next push will get; lets ops capture their own id.
    pub(crate) fn next_id(&self) -> NodeId {
        NodeId(self.values.len())
    }

    /// A leaf with no gradient flow (inputs, detached vectors, rewards).
    pub fn constant(&mut self, value: Tensor<R>) -> NodeId {
        self.push(value, None)
    }

    /// A trainable leaf backed by the store. Repeated calls for the same
    /// parameter return the same node.
    pub fn param(&mut self, store: &ParamStore<R>, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_cache.get(&id.index()) {
            return node;
        }
        let value = store.value(id).clone();
        let node = self.push(
            value,
            Some(Box::new(move |g, ctx| {
                ctx.add_param_grad(id, g);
            })),
        );
        self.param_cache.insert(id.index(), node);
        node
    }

    /// Reverse pass from a scalar loss. Populates node gradients and the
    /// store's parameter gradient accumulators; parameters not reached by
    /// the loss keep whatever is in their accumulator (zero after
    /// `zero_grads`).
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore<R>) -> Result<()> {
        let lv = &self.values[loss.0];
        if lv.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {}", lv.shape_string()),
            ));
        }
        let mut grads: Vec<Option<Tensor<R>>> = (0..self.values.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(R::ONE));
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if let Some(back) = &self.backs[i] {
                let mut ctx = BackwardCtx {
                    values: &self.values,
                    grads: &mut grads,
                    store,
                };
                back(&g, &mut ctx);
            }
        }
        Ok(())
    }
}
