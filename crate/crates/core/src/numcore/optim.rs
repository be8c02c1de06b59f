//! Adam with linear warmup and linear decay to zero.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct OptimizerState<F: Scalar> {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    /// Number of adam_step calls made so far (0-based schedule index).
    pub step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(
        base_lr: f64,
        warmup_fraction: f64,
        total_steps: u64,
        param_shapes: &[Vec<usize>],
    ) -> Self {
        let warmup_steps = (warmup_fraction * total_steps as f64).round() as u64;
        OptimizerState {
            base_lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            warmup_steps,
            total_steps,
            step: 0,
            m: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }

    /// Effective learning rate at a 0-based step: linear ramp over the warmup
    /// steps, then linear decay reaching 0 at total_steps. Steps at or beyond
    /// total_steps get 0 (a no-op update).
    pub fn lr_at_step(&self, step: u64) -> f64 {
        if step >= self.total_steps {
            return 0.0;
        }
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            step as f64 / self.warmup_steps as f64
        };
        let decay_den = (self.total_steps - self.warmup_steps) as f64;
        let decay = if decay_den <= 0.0 {
            1.0
        } else {
            (self.total_steps - step) as f64 / decay_den
        };
        self.base_lr * warm.min(decay)
    }
}

/// One Adam update with bias correction, in place. Moment tensors always
/// advance; the parameter delta is scaled by the scheduled learning rate,
/// so an lr of 0 leaves parameters unchanged.
pub fn adam_step<F: Scalar>(
    params: &mut [Tensor<F>],
    grads: &[Tensor<F>],
    state: &mut OptimizerState<F>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidConfig(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let lr = state.lr_at_step(state.step);
    state.step += 1;
    let t = state.step as f64; // updates applied, 1-based for bias correction
    let b1 = F::from_f64(state.beta1);
    let b2 = F::from_f64(state.beta2);
    let one_m_b1 = F::from_f64(1.0 - state.beta1);
    let one_m_b2 = F::from_f64(1.0 - state.beta2);
    let corr1 = F::from_f64(1.0 / (1.0 - state.beta1.powf(t)));
    let corr2 = F::from_f64(1.0 / (1.0 - state.beta2.powf(t)));
    let lr_f = F::from_f64(lr);
    let eps = F::from_f64(state.epsilon);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        for ((pv, &gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mv = b1 * *mv + one_m_b1 * gv;
            *vv = b2 * *vv + one_m_b2 * gv * gv;
            let m_hat = *mv * corr1;
            let v_hat = *vv * corr2;
            *pv = *pv - lr_f * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
