//! Scaled dot-product attention built from graph primitives.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};

/// softmax(QKᵀ/√d_k)·V with queries from one source and keys/values from
/// another. Differentiable through all three inputs.
pub fn cross_attention(g: &mut Graph, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
    let (_, d_q) = g.value(q).dims2()?;
    let (n_k, d_k) = g.value(k).dims2()?;
    if d_q != d_k {
        return Err(Error::shape(
            "cross_attention",
            format!("query dim {d_q} vs key dim {d_k}"),
        ));
    }
    let (n_v, _) = g.value(v).dims2()?;
    if n_v != n_k {
        return Err(Error::shape(
            "cross_attention",
            format!("{n_k} keys vs {n_v} values"),
        ));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.affine(scores, 1.0 / (d_k as f64).sqrt(), 0.0)?;
    let weights = g.softmax(scaled)?;
    g.matmul(weights, v)
}

/// Self-attention over a sequence with a strict causal mask: position i
/// attends to positions 0..=i only.
pub fn causal_self_attention(g: &mut Graph, x: NodeId, d_k: usize) -> Result<NodeId> {
    let xt = g.transpose(x)?;
    let scores = g.matmul(x, xt)?;
    let scaled = g.affine(scores, 1.0 / (d_k as f64).sqrt(), 0.0)?;
    let weights = g.softmax_causal(scaled)?;
    g.matmul(weights, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{grad_check_multi, require_all_pass};
    use crate::numerics::tensor::Tensor;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn single_key_returns_its_value() {
        let mut g = Graph::new();
        let q = g.constant(t2(&[&[5.0, -2.0], &[0.1, 0.3]]));
        let k = g.constant(t2(&[&[1.0, 1.0]]));
        let v = g.constant(t2(&[&[7.0, 8.0, 9.0]]));
        let out = cross_attention(&mut g, q, k, v).unwrap();
        assert_eq!(g.shape(out), &[2, 3]);
        assert_eq!(g.data(out), &[7.0, 8.0, 9.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut g = Graph::new();
        let q = g.constant(t2(&[&[0.4, -1.0]]));
        let k = g.constant(t2(&[&[2.0, 3.0], &[2.0, 3.0]]));
        let v = g.constant(t2(&[&[1.0, 5.0], &[3.0, 7.0]]));
        let out = cross_attention(&mut g, q, k, v).unwrap();
        let d = g.data(out);
        assert!((d[0] - 2.0).abs() < 1e-12);
        assert!((d[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn two_key_case_matches_hand_computation() {
        let mut g = Graph::new();
        let q = g.constant(t2(&[&[1.0, 0.0]]));
        let k = g.constant(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let v = g.constant(t2(&[&[1.0], &[2.0]]));
        let out = cross_attention(&mut g, q, k, v).unwrap();
        // Scores 1/√2 and 0; softmax gives w = e^{1/√2} / (e^{1/√2} + 1).
        let s = 1.0 / std::f64::consts::SQRT_2;
        let w = s.exp() / (s.exp() + 1.0);
        let expect = w * 1.0 + (1.0 - w) * 2.0;
        assert!((g.data(out)[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros(vec![1, 3]));
        let k = g.constant(Tensor::zeros(vec![2, 2]));
        let v = g.constant(Tensor::zeros(vec![2, 2]));
        assert!(cross_attention(&mut g, q, k, v).is_err());
        let k2 = g.constant(Tensor::zeros(vec![2, 3]));
        let v2 = g.constant(Tensor::zeros(vec![3, 2]));
        assert!(cross_attention(&mut g, q, k2, v2).is_err());
    }

    #[test]
    fn causal_attention_ignores_future() {
        let base = t2(&[&[0.1, 0.2], &[0.3, -0.4], &[0.5, 0.6]]);
        let mut perturbed = base.clone();
        perturbed.data[4] += 10.0;
        perturbed.data[5] -= 3.0;

        let run = |x: &Tensor| {
            let mut g = Graph::new();
            let id = g.constant(x.clone());
            let out = causal_self_attention(&mut g, id, 2).unwrap();
            g.data(out).to_vec()
        };
        let a = run(&base);
        let b = run(&perturbed);
        // Rows 0 and 1 must be bit-identical; only row 2 may move.
        assert_eq!(&a[..4], &b[..4]);
        assert_ne!(&a[4..], &b[4..]);
    }

    #[test]
    fn attention_gradients_check_out() {
        let q = t2(&[&[0.3, -0.2], &[0.8, 0.5]]);
        let k = t2(&[&[0.1, 0.9], &[-0.4, 0.2], &[0.6, -0.7]]);
        let v = t2(&[&[0.5, 1.0], &[-1.2, 0.3], &[0.9, -0.8]]);
        let reports = grad_check_multi(&[("q", &q), ("k", &k), ("v", &v)], |g, ids| {
            let out = cross_attention(g, ids[0], ids[1], ids[2])?;
            let sq = g.mul(out, out)?;
            g.mean_all(sq)
        })
        .unwrap();
        require_all_pass(&reports).unwrap();
    }
}
