//! Parameter updates: plain gradient descent for the convergence harness
//! and a bias-corrected adaptive-moment optimizer for the real trainer.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Apply θ ← θ − η·∇ in place. Gradients must cover every parameter.
pub fn gd_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    eta: f64,
) -> Result<()> {
    if eta <= 0.0 {
        return Err(Error::param("eta", format!("must be positive, got {eta}")));
    }
    for (name, tensor) in store.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::param(name.clone(), "missing gradient"))?;
        if g.len() != tensor.numel() {
            return Err(Error::shape(
                "gd_step",
                format!("gradient of {name}: {} values vs {}", g.len(), tensor.numel()),
            ));
        }
        for (p, gv) in tensor.data.iter_mut().zip(g) {
            *p -= eta * gv;
        }
    }
    Ok(())
}

/// Adaptive-moment state: first/second moment buffers per parameter plus
/// the shared step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(eta: f64) -> Result<Self> {
        if eta <= 0.0 {
            return Err(Error::param("eta", format!("must be positive, got {eta}")));
        }
        Ok(AdamState {
            eta,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }
}

/// One bias-corrected adaptive-moment update in place.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, tensor) in store.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::param(name.clone(), "missing gradient"))?;
        if g.len() != tensor.numel() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient of {name}: {} values vs {}", g.len(), tensor.numel()),
            ));
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            tensor.data[i] -= state.eta * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
