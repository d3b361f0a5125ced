use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one per parameter in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[&Param<T>]) -> Self {
        Self {
            config,
            t: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update of every parameter from its `grad`.
///
/// The whole step is rejected, leaving parameters and state untouched, if
/// any gradient is non-finite.
pub fn adam_step<T: Scalar>(params: &mut [&mut Param<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameters", state.m.len()),
            format!("{} parameters", params.len()),
        ));
    }
    for (p, m) in params.iter().zip(&state.m) {
        if p.len() != m.len() || p.grad.len() != p.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} = {} values", p.name, m.len()),
                p.len(),
            ));
        }
        if p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.value.len() {
            let g = p.grad[i].f64();
            let mi = beta1 * m[i].f64() + (1.0 - beta1) * g;
            let vi = beta2 * v[i].f64() + (1.0 - beta2) * g * g;
            m[i] = T::of(mi);
            v[i] = T::of(vi);
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            p.value[i] = T::of(p.value[i].f64() - update);
        }
    }
    Ok(())
}
