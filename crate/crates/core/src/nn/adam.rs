use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<R> {
    pub m: Vec<R>,
    pub v: Vec<R>,
    pub step: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![R::zero(); len],
            v: vec![R::zero(); len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<R: Real>(params: &mut [R], grad: &[R], hyper: &AdamHyper, state: &mut AdamState<R>) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::ShapeMismatch("parameter, gradient and moment lengths differ".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let (b1, b2) = (R::of(hyper.beta1), R::of(hyper.beta2));
    let (nb1, nb2) = (R::of(1.0 - hyper.beta1), R::of(1.0 - hyper.beta2));
    // lr * m_hat / (sqrt(v_hat) + eps) with the corrections folded in.
    let step_size = R::of(hyper.learning_rate / c1);
    let inv_c2 = R::of(1.0 / c2);
    let eps = R::of(hyper.epsilon);
    for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = b1 * *m + nb1 * g;
        *v = b2 * *v + nb2 * g * g;
        *p = *p - step_size * *m / ((*v * inv_c2).sqrt() + eps);
    }
    Ok(())
}
