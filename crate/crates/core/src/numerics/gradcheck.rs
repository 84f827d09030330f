//! Finite-difference verification of recorded gradients.
//!
//! The checker rebuilds the loss from scratch for every probe, so the
//! function under test must be a pure closure over its inputs.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Outcome of checking one input tensor.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} elements, max rel err {:.3e} at [{}] ({})",
            self.name,
            self.elements,
            self.max_rel_err,
            self.worst_index,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

/// Relative error between analytic and numeric derivatives, floored so
/// near-zero gradients compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Check the gradient of a scalar-valued function of one tensor.
///
/// `build` receives a fresh graph and the input leaf and must return the
/// scalar loss node.
pub fn grad_check<F>(name: &str, input: &Tensor, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let report = grad_check_multi(&[(name, input)], |g, ids| build(g, ids[0]))?;
    Ok(report.into_iter().next().expect("one input, one report"))
}

/// Check gradients of a scalar-valued function of several named tensors.
/// Every input is treated as requiring a gradient.
pub fn grad_check_multi<F>(inputs: &[(&str, &Tensor)], build: F) -> Result<Vec<GradCheckReport>>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if inputs.is_empty() {
        return Err(Error::Contract("grad_check_multi needs at least one input".into()));
    }

    // Analytic pass.
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|(_, t)| graph.leaf((*t).clone().with_grad()))
        .collect();
    let loss = build(&mut graph, &ids)?;
    if !graph.value(loss).is_scalar() {
        return Err(Error::Contract(format!(
            "grad check target must be scalar, got {:?}",
            graph.shape(loss)
        )));
    }
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, (name, t))| {
            graph
                .grad(id)
                .map(|g| g.to_vec())
                .ok_or_else(|| Error::Contract(format!("no gradient reached input '{name}'")))
                .unwrap_or_else(|_| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.data(loss)[0])
    };

    let base: Vec<Tensor> = inputs.iter().map(|(_, t)| (*t).clone()).collect();
    let h = DEFAULT_STEP;
    let mut reports = Vec::with_capacity(inputs.len());
    for (which, (name, tensor)) in inputs.iter().enumerate() {
        let mut max_rel = 0.0f64;
        let mut worst = 0usize;
        for i in 0..tensor.numel() {
            let mut probe = base.clone();
            probe[which].data[i] += h;
            let up = eval(&probe)?;
            probe[which].data[i] -= 2.0 * h;
            let down = eval(&probe)?;
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err(analytic[which][i], numeric);
            if e > max_rel {
                max_rel = e;
                worst = i;
            }
        }
        reports.push(GradCheckReport {
            name: name.to_string(),
            elements: tensor.numel(),
            max_rel_err: max_rel,
            worst_index: worst,
            tolerance: DEFAULT_TOLERANCE,
        });
    }
    Ok(reports)
}

/// Fail with a contract error if any report exceeds its tolerance.
pub fn require_all_pass(reports: &[GradCheckReport]) -> Result<()> {
    for r in reports {
        if !r.passed() {
            return Err(Error::Contract(format!("gradient check failed: {r}")));
        }
    }
    Ok(())
}
