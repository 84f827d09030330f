//! Dual-task loss: mean-squared error on the return head plus focal loss
//! on the response-class head, combined with configurable weights.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};

/// Weights and focal parameters of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_reg: f64,
    pub lambda_cls: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl LossWeights {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let lw = LossWeights {
            lambda_reg: cfg.lambda_reg,
            lambda_cls: cfg.lambda_cls,
            focal_alpha: cfg.focal_alpha,
            focal_gamma: cfg.focal_gamma,
        };
        lw.validate()?;
        Ok(lw)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_reg < 0.0
            || self.lambda_cls < 0.0
            || self.focal_alpha < 0.0
            || self.focal_gamma < 0.0
        {
            return Err(Error::param("loss weights", "must all be non-negative"));
        }
        Ok(())
    }
}

/// Mean squared error between equal-shape prediction and target nodes.
pub fn l2_loss(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::shape(
            "l2_loss",
            format!("{:?} vs {:?}", g.shape(pred), g.shape(target)),
        ));
    }
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    g.mean_all(sq)
}

/// Focal loss −α(1−p_t)^γ·log p_t over 3-class logits.
pub fn focal_loss(
    g: &mut Graph,
    logits: NodeId,
    label: usize,
    alpha: f64,
    gamma: f64,
) -> Result<NodeId> {
    if g.shape(logits) != [3] {
        return Err(Error::shape(
            "focal_loss",
            format!("expected 3 logits, got {:?}", g.shape(logits)),
        ));
    }
    if label > 2 {
        return Err(Error::Input(format!("class label {label} outside 0..=2")));
    }
    let probs = g.softmax(logits)?;
    let p_t = g.select(probs, label)?;
    let one_minus = g.affine(p_t, -1.0, 1.0)?;
    let focus = g.pow_const(one_minus, gamma)?;
    let log_p = g.ln(p_t)?;
    let prod = g.mul(focus, log_p)?;
    g.affine(prod, -alpha, 0.0)
}

/// Joint objective over one batch: λ_reg·MSE(ŷ, y) + λ_cls·mean focal.
/// `y_hats` and `logits` come from per-sample forward passes; targets are
/// plain host values.
pub fn total_loss(
    g: &mut Graph,
    y_hats: &[NodeId],
    targets: &[f64],
    logits: &[NodeId],
    labels: &[usize],
    lw: &LossWeights,
) -> Result<NodeId> {
    lw.validate()?;
    if y_hats.len() != targets.len() || logits.len() != labels.len() || y_hats.len() != logits.len()
    {
        return Err(Error::Input(format!(
            "batch arrays disagree: {} preds, {} targets, {} logits, {} labels",
            y_hats.len(),
            targets.len(),
            logits.len(),
            labels.len()
        )));
    }
    if y_hats.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let pred = g.concat_vec(y_hats)?;
    let target = g.constant_vec(targets.to_vec());
    let reg = l2_loss(g, pred, target)?;
    let reg = g.affine(reg, lw.lambda_reg, 0.0)?;

    let mut focals = Vec::with_capacity(logits.len());
    for (&lg, &lb) in logits.iter().zip(labels) {
        focals.push(focal_loss(g, lg, lb, lw.focal_alpha, lw.focal_gamma)?);
    }
    let stacked = g.concat_vec(&focals)?;
    let cls = g.mean_all(stacked)?;
    let cls = g.affine(cls, lw.lambda_cls, 0.0)?;
    g.add(reg, cls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(g: &Graph, id: NodeId) -> f64 {
        g.data(id)[0]
    }

    #[test]
    fn l2_matches_hand_values() {
        let mut g = Graph::new();
        let a = g.constant_vec(vec![1.0, 2.0]);
        let b = g.constant_vec(vec![3.0, 0.0]);
        let l_ab = l2_loss(&mut g, a, b).unwrap();
        assert_eq!(scalar(&g, l_ab), 4.0);

        let c = g.constant_vec(vec![0.0, 0.0]);
        let d = g.constant_vec(vec![1.0, 1.0]);
        let l_cd = l2_loss(&mut g, c, d).unwrap();
        assert_eq!(scalar(&g, l_cd), 1.0);

        let same = g.constant_vec(vec![0.3, -0.7, 2.0]);
        let l_same = l2_loss(&mut g, same, same).unwrap();
        assert_eq!(scalar(&g, l_same), 0.0);

        let short = g.constant_vec(vec![1.0]);
        assert!(l2_loss(&mut g, a, short).is_err());
    }

    /// Logits chosen so softmax puts exactly the wanted mass on class 0.
    fn logits_with_p0(g: &mut Graph, p0: f64) -> NodeId {
        // softmax([x,0,0])[0] = e^x/(e^x+2) = p0  ⇒  x = ln(2p0/(1−p0)).
        let x = (2.0 * p0 / (1.0 - p0)).ln();
        g.constant_vec(vec![x, 0.0, 0.0])
    }

    #[test]
    fn focal_reduces_to_cross_entropy_at_gamma_zero() {
        let mut g = Graph::new();
        let logits = logits_with_p0(&mut g, 0.5);
        let loss = focal_loss(&mut g, logits, 0, 1.0, 0.0).unwrap();
        assert!((scalar(&g, loss) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn focal_vanishes_as_p_approaches_one() {
        let mut g = Graph::new();
        let logits = logits_with_p0(&mut g, 1.0 - 1e-9);
        let loss = focal_loss(&mut g, logits, 0, 0.25, 2.0).unwrap();
        assert!(scalar(&g, loss) < 1e-18);
    }

    #[test]
    fn focal_matches_hand_value_at_p09() {
        let mut g = Graph::new();
        let logits = logits_with_p0(&mut g, 0.9);
        let loss = focal_loss(&mut g, logits, 0, 0.25, 2.0).unwrap();
        let want = 0.25 * 0.01 * (-(0.9f64.ln()));
        assert!((scalar(&g, loss) - want).abs() < 1e-9);
        assert!((want - 2.634e-4).abs() < 1e-6);
    }

    #[test]
    fn focal_rejects_bad_label() {
        let mut g = Graph::new();
        let logits = g.constant_vec(vec![0.0, 0.0, 0.0]);
        assert!(focal_loss(&mut g, logits, 3, 0.25, 2.0).is_err());
    }

    #[test]
    fn total_loss_reduces_and_recomputes() {
        let lw = LossWeights {
            lambda_reg: 0.7,
            lambda_cls: 1.3,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 6;
        let mut g = Graph::new();
        let mut y_hats = Vec::new();
        let mut targets = Vec::new();
        let mut logits = Vec::new();
        let mut labels = Vec::new();
        let mut logit_vals = Vec::new();
        for _ in 0..n {
            let yv = rng.gen_range(-1.0..1.0);
            y_hats.push(g.constant_vec(vec![yv]));
            targets.push(rng.gen_range(-1.0..1.0) as f64);
            let lv: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            logits.push(g.constant_vec(lv.clone()));
            logit_vals.push((yv, lv));
            labels.push(rng.gen_range(0..3usize));
        }
        let total = total_loss(&mut g, &y_hats, &targets, &logits, &labels, &lw).unwrap();

        // Independent recomputation with plain floats.
        let mut reg = 0.0;
        let mut cls = 0.0;
        for i in 0..n {
            let (yv, lv) = &logit_vals[i];
            reg += (yv - targets[i]).powi(2);
            let mx = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = lv.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            let p_t = exps[labels[i]] / z;
            cls += -lw.focal_alpha * (1.0 - p_t).powf(lw.focal_gamma) * p_t.ln();
        }
        let want = lw.lambda_reg * reg / n as f64 + lw.lambda_cls * cls / n as f64;
        assert!((scalar(&g, total) - want).abs() < 1e-12);

        // λ_cls = 0 leaves the weighted regression term alone.
        let only_reg = LossWeights {
            lambda_cls: 0.0,
            ..lw
        };
        let t2 = total_loss(&mut g, &y_hats, &targets, &logits, &labels, &only_reg).unwrap();
        assert!((scalar(&g, t2) - lw.lambda_reg * reg / n as f64).abs() < 1e-12);

        // Both weights zero → exactly zero.
        let zero = LossWeights {
            lambda_reg: 0.0,
            lambda_cls: 0.0,
            ..lw
        };
        let t3 = total_loss(&mut g, &y_hats, &targets, &logits, &labels, &zero).unwrap();
        assert_eq!(scalar(&g, t3), 0.0);
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        use crate::numerics::gradcheck::{grad_check, require_all_pass};
        use crate::numerics::tensor::Tensor;
        let logits = Tensor::new(vec![3], vec![0.4, -0.3, 0.8]).unwrap();
        for label in 0..3 {
            let report = grad_check("focal", &logits, |g, x| {
                focal_loss(g, x, label, 0.25, 2.0)
            })
            .unwrap();
            require_all_pass(std::slice::from_ref(&report)).unwrap();
        }
    }
}
