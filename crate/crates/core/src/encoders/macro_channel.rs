//! Macro channel: an LSTM over the interpolation-aligned daily indicator
//! panel, with each day's inputs scaled by a recency weight
//! exp(−ρ·staleness) so interpolated stretches far from a true observation
//! contribute less than fresh data.

use std::collections::BTreeMap;

use crate::config::RunConfig;
use crate::encoders::bound;
use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::init;
use crate::numerics::tensor::Tensor;
use crate::params::ParamStore;

/// Aligned `[lookback × Q]` indicator values plus, per cell, the trading
/// days since that indicator's last true observation.
#[derive(Debug, Clone)]
pub struct MacroPanel {
    pub values: Tensor,
    pub staleness: Tensor,
}

impl MacroPanel {
    pub fn new(values: Tensor, staleness: Tensor) -> Result<Self> {
        let dims = values.dims2()?;
        if staleness.dims2()? != dims {
            return Err(Error::shape(
                "macro_panel",
                format!("values {:?} vs staleness {:?}", values.shape, staleness.shape),
            ));
        }
        if !values.all_finite() || !staleness.all_finite() {
            return Err(Error::numeric("macro panel"));
        }
        Ok(MacroPanel { values, staleness })
    }

    /// Per-cell recency weights exp(−ρ·staleness).
    pub fn recency_weights(&self, rho: f64) -> Tensor {
        let data = self.staleness.data.iter().map(|s| (-rho * s).exp()).collect();
        Tensor {
            shape: self.staleness.shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        }
    }
}

pub fn init_params(store: &mut ParamStore, cfg: &RunConfig, seed: u64, n_indicators: usize) {
    let h = cfg.macro_hidden;
    store.insert(
        "macro.w_ih",
        init::xavier_matrix(seed, "macro.w_ih", n_indicators, 4 * h),
    );
    store.insert("macro.w_hh", init::xavier_matrix(seed, "macro.w_hh", h, 4 * h));
    store.insert("macro.b", init::zeros(&[4 * h]));
    store.insert("macro.proj.w", init::xavier_matrix(seed, "macro.proj.w", h, cfg.d_model));
    store.insert("macro.proj.b", init::zeros(&[cfg.d_model]));
}

/// One LSTM cell step. Gate layout along the 4H axis: input, forget,
/// candidate, output. Returns the new (cell, hidden) pair, both `[1 × H]`.
pub fn mf_lstm_step(
    g: &mut Graph,
    x: NodeId,
    cell: NodeId,
    hidden: NodeId,
    w_ih: NodeId,
    w_hh: NodeId,
    b: NodeId,
) -> Result<(NodeId, NodeId)> {
    let (_, four_h) = g.value(w_ih).dims2()?;
    if four_h % 4 != 0 {
        return Err(Error::shape("mf_lstm_step", "gate width not divisible by 4"));
    }
    let h = four_h / 4;
    if g.value(cell).dims2()? != (1, h) || g.value(hidden).dims2()? != (1, h) {
        return Err(Error::shape(
            "mf_lstm_step",
            format!("state shapes must be [1,{h}]"),
        ));
    }
    let zx = g.matmul(x, w_ih)?;
    let zh = g.matmul(hidden, w_hh)?;
    let z = g.add(zx, zh)?;
    let z = g.add_row(z, b)?;

    let zi = g.slice_cols(z, 0, h)?;
    let zf = g.slice_cols(z, h, h)?;
    let zc = g.slice_cols(z, 2 * h, h)?;
    let zo = g.slice_cols(z, 3 * h, h)?;

    let i = g.sigmoid(zi)?;
    let f = g.sigmoid(zf)?;
    let c_cand = g.tanh(zc)?;
    let o = g.sigmoid(zo)?;

    let keep = g.mul(f, cell)?;
    let write = g.mul(i, c_cand)?;
    let c_new = g.add(keep, write)?;
    let c_act = g.tanh(c_new)?;
    let h_new = g.mul(o, c_act)?;
    Ok((c_new, h_new))
}

/// Run the recency-weighted LSTM over the panel rows (oldest first) and
/// project the final hidden state to `[d_model]`. The panel values enter
/// as a graph node so gradients can flow to the raw inputs.
pub fn encode_macro(
    g: &mut Graph,
    params: &BTreeMap<String, NodeId>,
    cfg: &RunConfig,
    values: NodeId,
    recency: NodeId,
) -> Result<NodeId> {
    let (steps, _q) = g.value(values).dims2()?;
    if g.shape(recency) != g.shape(values) {
        return Err(Error::shape(
            "encode_macro",
            format!(
                "recency weights {:?} vs values {:?}",
                g.shape(recency),
                g.shape(values)
            ),
        ));
    }
    let weighted = g.mul(values, recency)?;
    let w_ih = bound(params, "macro.w_ih")?;
    let w_hh = bound(params, "macro.w_hh")?;
    let b = bound(params, "macro.b")?;
    let h = cfg.macro_hidden;
    let mut cell = g.constant(Tensor::zeros(vec![1, h]));
    let mut hidden = g.constant(Tensor::zeros(vec![1, h]));
    for t in 0..steps {
        let x = g.slice_rows(weighted, t, 1)?;
        let (c2, h2) = mf_lstm_step(g, x, cell, hidden, w_ih, w_hh, b)?;
        cell = c2;
        hidden = h2;
    }
    let proj = g.linear(hidden, bound(params, "macro.proj.w")?, bound(params, "macro.proj.b")?)?;
    g.reshape(proj, vec![cfg.d_model])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::require_all_pass;
    use crate::params::grad_check_store;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.d_model = 3;
        cfg.macro_hidden = 2;
        cfg.macro_lookback = 5;
        cfg
    }

    #[test]
    fn zero_weights_unit_cell_gives_half() {
        // With all weights and biases zero every gate sits at σ(0) = 0.5
        // and the candidate at tanh(0) = 0, so c' = 0.5·c = 0.5.
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 3]));
        let cell = g.constant(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let hidden = g.constant(Tensor::zeros(vec![1, 2]));
        let w_ih = g.constant(Tensor::zeros(vec![3, 8]));
        let w_hh = g.constant(Tensor::zeros(vec![2, 8]));
        let b = g.constant(Tensor::zeros(vec![8]));
        let (c2, h2) = mf_lstm_step(&mut g, x, cell, hidden, w_ih, w_hh, b).unwrap();
        for v in g.data(c2) {
            assert!((v - 0.5).abs() < 1e-15);
        }
        // h' = σ(0)·tanh(0.5)
        let expect = 0.5 * 0.5f64.tanh();
        for v in g.data(h2) {
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_everything_stays_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 2]));
        let cell = g.constant(Tensor::zeros(vec![1, 2]));
        let hidden = g.constant(Tensor::zeros(vec![1, 2]));
        let w_ih = g.constant(Tensor::zeros(vec![2, 8]));
        let w_hh = g.constant(Tensor::zeros(vec![2, 8]));
        let b = g.constant(Tensor::zeros(vec![8]));
        let (c2, h2) = mf_lstm_step(&mut g, x, cell, hidden, w_ih, w_hh, b).unwrap();
        assert!(g.data(c2).iter().all(|&v| v == 0.0));
        assert!(g.data(h2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn state_shape_mismatch_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 2]));
        let cell = g.constant(Tensor::zeros(vec![1, 3]));
        let hidden = g.constant(Tensor::zeros(vec![1, 2]));
        let w_ih = g.constant(Tensor::zeros(vec![2, 8]));
        let w_hh = g.constant(Tensor::zeros(vec![2, 8]));
        let b = g.constant(Tensor::zeros(vec![8]));
        assert!(mf_lstm_step(&mut g, x, cell, hidden, w_ih, w_hh, b).is_err());
    }

    #[test]
    fn five_step_unroll_gradients_check_out() {
        let cfg = small_cfg();
        let mut store = ParamStore::new();
        init_params(&mut store, &cfg, 21, 2);
        let values = Tensor::new(
            vec![5, 2],
            vec![0.3, -0.1, 0.5, 0.2, -0.4, 0.8, 0.1, 0.0, 0.6, -0.3],
        )
        .unwrap();
        let panel = MacroPanel::new(values.clone(), Tensor::zeros(vec![5, 2])).unwrap();
        let recency = panel.recency_weights(cfg.rho);
        let reports = grad_check_store(&store, &[("values", &values)], |g, params, extras| {
            let w = g.constant(recency.clone());
            let h = encode_macro(g, params, &cfg, extras[0], w)?;
            let sq = g.mul(h, h)?;
            g.mean_all(sq)
        })
        .unwrap();
        require_all_pass(&reports).unwrap();
    }

    #[test]
    fn doubling_rho_never_raises_stale_input_influence() {
        // Gradient norm w.r.t. the oldest row of the panel must not grow
        // when ρ doubles. Measured at the zero panel so the LSTM trajectory
        // is the same for every ρ and only the recency factor moves.
        let cfg = small_cfg();
        let mut store = ParamStore::new();
        init_params(&mut store, &cfg, 4, 2);
        store.insert("macro.b", Tensor::from_vec(vec![0.3, -0.2, 0.4, 0.1, 0.2, -0.3, 0.5, 0.6]));
        store.insert("macro.proj.b", Tensor::from_vec(vec![0.2, -0.1, 0.3]));
        let values = Tensor::zeros(vec![4, 2]);
        // Staleness decreasing toward the present: oldest row stalest.
        let staleness =
            Tensor::new(vec![4, 2], vec![9.0, 9.0, 6.0, 6.0, 3.0, 3.0, 0.0, 0.0]).unwrap();
        let panel = MacroPanel::new(values.clone(), staleness).unwrap();

        let oldest_grad_norm = |rho: f64| {
            let mut g = Graph::new();
            let params = store.bind(&mut g);
            let vals = g.leaf(values.clone().with_grad());
            let w = g.constant(panel.recency_weights(rho));
            let h = encode_macro(&mut g, &params, &cfg, vals, w).unwrap();
            let sq = g.mul(h, h).unwrap();
            let loss = g.mean_all(sq).unwrap();
            g.backward(loss).unwrap();
            let grad = g.grad(vals).unwrap();
            (grad[0] * grad[0] + grad[1] * grad[1]).sqrt()
        };

        let mut rho = 0.05;
        let mut prev = oldest_grad_norm(rho);
        for _ in 0..4 {
            rho *= 2.0;
            let cur = oldest_grad_norm(rho);
            assert!(
                cur <= prev + 1e-12,
                "rho {rho}: oldest-input influence grew from {prev} to {cur}"
            );
            prev = cur;
        }
    }
}
