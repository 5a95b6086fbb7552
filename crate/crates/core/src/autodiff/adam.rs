//! Adam optimizer over a parameter store.

use alloc::collections::BTreeMap;

use super::params::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Adam<R> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<usize, Tensor<R>>,
    v: BTreeMap<usize, Tensor<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one bias-corrected Adam update from the accumulated gradients,
    /// then leave the gradients untouched (callers zero them per batch).
    pub fn step(&mut self, store: &mut ParamStore<R>) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = R::from_f64(self.beta1);
        let b2 = R::from_f64(self.beta2);
        let one_m_b1 = R::from_f64(1.0 - self.beta1);
        let one_m_b2 = R::from_f64(1.0 - self.beta2);
        let bc1 = R::from_f64(1.0 - libm::pow(self.beta1, t as f64));
        let bc2 = R::from_f64(1.0 - libm::pow(self.beta2, t as f64));
        let lr = R::from_f64(self.lr);
        let eps = R::from_f64(self.eps);

        let ids: alloc::vec::Vec<usize> = store
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(id, _)| id.index())
            .collect();
        for idx in ids {
            let id = super::ParamId(idx);
            let shape = store.value(id).shape().to_vec();
            let m = self.m.entry(idx).or_insert_with(|| Tensor::zeros(&shape));
            let v = self.v.entry(idx).or_insert_with(|| Tensor::zeros(&shape));
            // Split borrows: copy the gradient view pointer-wise per element.
            let n = store.grad(id).numel();
            for k in 0..n {
                let g = store.grad(id).data()[k];
                let mk = b1 * m.data()[k] + one_m_b1 * g;
                let vk = b2 * v.data()[k] + one_m_b2 * g * g;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let update = lr * (mk / bc1) / ((vk / bc2).sqrt() + eps);
                store.value_mut(id).data_mut()[k] -= update;
            }
        }
    }
}
