//! Linear-rate convergence harness. Plain gradient descent runs on the
//! diagnostic quadratic ℒ(θ) = ½(μθ₁² + Lθ₂²) — exactly μ-strongly convex
//! with L-Lipschitz gradient — and every iterate distance is checked
//! against the q-linear bound.
//!
//! The contraction factor used for the bound is max(|1−ημ|, |1−ηL|), the
//! exact per-step factor of GD on this quadratic. At the optimal step size
//! η = 2/(μ+L) it equals the advertised rate (L−μ)/(L+μ); at smaller steps
//! the exact factor is the one the iterates actually obey, so the check
//! stays meaningful across the whole admissible step-size range.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub mu: f64,
    pub l: f64,
    pub eta: f64,
    pub steps: usize,
    /// ‖θ_k − θ*‖ for k = 0..=steps.
    pub distances: Vec<f64>,
    /// factor^k · ‖θ₀ − θ*‖ for k = 0..=steps.
    pub bounds: Vec<f64>,
    /// Exact per-step contraction factor max(|1−ημ|, |1−ηL|).
    pub factor: f64,
    /// The optimal-step rate (L−μ)/(L+μ) quoted by the theorem.
    pub optimal_factor: f64,
    pub slack: f64,
    pub passed: bool,
}

/// Run GD from `theta0` and verify q-linear convergence to θ* = 0.
pub fn convergence_harness(
    mu: f64,
    l: f64,
    eta: f64,
    steps: usize,
    theta0: [f64; 2],
) -> Result<ConvergenceReport> {
    if !(mu > 0.0 && l >= mu) {
        return Err(Error::param(
            "mu/L",
            format!("need 0 < mu <= L, got mu={mu}, L={l}"),
        ));
    }
    let eta_max = 2.0 / (mu + l);
    if !(eta > 0.0 && eta <= eta_max) {
        return Err(Error::param(
            "eta",
            format!("need 0 < eta <= 2/(mu+L) = {eta_max}, got {eta}"),
        ));
    }
    let factor = (1.0 - eta * mu).abs().max((1.0 - eta * l).abs());
    let optimal_factor = (l - mu) / (l + mu);

    let mut theta = theta0;
    let d0 = (theta[0] * theta[0] + theta[1] * theta[1]).sqrt();
    let mut distances = Vec::with_capacity(steps + 1);
    let mut bounds = Vec::with_capacity(steps + 1);
    let mut bound = d0;
    distances.push(d0);
    bounds.push(bound);
    for _ in 0..steps {
        theta[0] -= eta * mu * theta[0];
        theta[1] -= eta * l * theta[1];
        bound *= factor;
        distances.push((theta[0] * theta[0] + theta[1] * theta[1]).sqrt());
        bounds.push(bound);
    }
    let passed = distances
        .iter()
        .zip(&bounds)
        .all(|(d, b)| *d <= b + DEFAULT_SLACK);
    Ok(ConvergenceReport {
        mu,
        l,
        eta,
        steps,
        distances,
        bounds,
        factor,
        optimal_factor,
        slack: DEFAULT_SLACK,
        passed,
    })
}
