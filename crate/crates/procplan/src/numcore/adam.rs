//! Adam with bias correction. Moment buffers are keyed by parameter index,
//! so optimizer state can be checkpointed alongside the parameters and a
//! resumed run continues bit-identically.

use super::{Array, NumError, ParamId, ParamStore};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LR: f64 = 1e-4;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        Self::with_lr(store, DEFAULT_LR)
    }

    pub fn with_lr(store: &ParamStore, lr: f64) -> Self {
        let m = store.iter().map(|(_, _, a)| Array::zeros(a.shape())).collect();
        let v = store.iter().map(|(_, _, a)| Array::zeros(a.shape())).collect();
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Parameters absent from `grads` are left untouched
    /// (moments included). Rejects non-finite gradients before mutating
    /// anything.
    pub fn apply(
        &mut self,
        store: &mut ParamStore,
        grads: &[(ParamId, Array)],
    ) -> Result<(), NumError> {
        for (id, g) in grads {
            if !g.is_finite() {
                return Err(NumError::NanGradient { param: id.0 });
            }
            if g.shape() != store.get(*id).shape() {
                return Err(NumError::shape(
                    "adam_step",
                    format!(
                        "grad {:?} vs param {:?} for {}",
                        g.shape(),
                        store.get(*id).shape(),
                        store.name(*id)
                    ),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads {
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = store.get_mut(*id).data_mut();
            for ((pj, gj), (mj, vj)) in
                p.iter_mut().zip(g.data()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *pj -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
