//! Momentum SGD for the model parameters and Adam for the learnable radius.
//! The two optimizers never share state: the training loop gives each its own
//! tape and parameter set.

use crate::autodiff::Tensor;
use crate::events::{EventKind, EventLog};

/// Momentum SGD state. Velocity buffers are created zeroed, one per
/// parameter tensor, in the caller's fixed parameter order.
#[derive(Clone, Debug)]
pub struct SgdState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl SgdState {
    pub fn new(params: &[&Tensor], lr: f64, momentum: f64, weight_decay: f64) -> Self {
        SgdState {
            lr,
            momentum,
            weight_decay,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// `v = momentum v + g + wd p; p -= lr v`, applied in place. The whole
    /// step is skipped (with an event) if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
        events: &mut EventLog,
    ) -> bool {
        assert_eq!(params.len(), self.velocity.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        if grads.iter().any(|g| !g.all_finite()) {
            events.record(EventKind::StepSkippedNonFinite, None, "sgd gradient non-finite");
            return false;
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, gv), vv) in
                p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut())
            {
                *vv = self.momentum * *vv + *gv + self.weight_decay * *pv;
                *pv -= self.lr * *vv;
            }
        }
        true
    }
}

/// Adam state (defaults beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor], lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// Bias-corrected Adam update in place; skipped (with an event) on
    /// non-finite gradients.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
        events: &mut EventLog,
    ) -> bool {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        if grads.iter().any(|g| !g.all_finite()) {
            events.record(EventKind::StepSkippedNonFinite, None, "adam gradient non-finite");
            return false;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for ((pv, gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(self.m[i].data_mut().iter_mut().zip(self.v[i].data_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * *gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * *gv * *gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        true
    }
}
