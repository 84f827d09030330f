//! Gated fusion of the four channel embeddings, the three-part position
//! encoding added before the trunk, the causal pre-norm transformer trunk,
//! and the dual prediction heads. [`Model`] ties the full forward path
//! together for one (symbol, day) window.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::config::RunConfig;
use crate::encoders::event::EventGraph;
use crate::encoders::macro_channel::MacroPanel;
use crate::encoders::technical::TechnicalWindow;
use crate::encoders::text::TokenSequence;
use crate::encoders::{bound, event, macro_channel, technical, text, Channel};
use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::init;
use crate::numerics::tensor::Tensor;
use crate::params::ParamStore;
use crate::timebase::{enc_calendar, enc_event, EventTimeline, TradingCalendar};

/// Seed of the fixed (non-learned) position-encoding projection patterns.
/// These are regenerated deterministically instead of being stored, so
/// checkpoints stay lean and every process sees identical patterns.
const PATTERN_SEED: u64 = 0x00c0_ffee;

// ── dynamic gate ──────────────────────────────────────────────────────

pub fn init_gate_params(store: &mut ParamStore, cfg: &RunConfig, seed: u64) {
    let d = cfg.d_model;
    for ch in Channel::ALL {
        let w = format!("gate.w.{ch}");
        store.insert(w.clone(), init::xavier_uniform(seed, &w, d, 1, &[d]));
        // Stand-in embedding a channel presents when ablated; trained like
        // any other parameter so dropped-channel runs stay comparable.
        let n = format!("null.{ch}");
        store.insert(n.clone(), init::xavier_uniform(seed, &n, d, 1, &[d]));
    }
}

/// Softmax gate over the four channel logits w_kᵀh^k, in T/F/M/E order.
pub fn gate_weights(
    g: &mut Graph,
    params: &BTreeMap<String, NodeId>,
    h: &[NodeId; 4],
) -> Result<NodeId> {
    let mut logits = Vec::with_capacity(4);
    for (ch, &hk) in Channel::ALL.iter().zip(h) {
        let w = bound(params, &format!("gate.w.{ch}"))?;
        logits.push(g.dot(w, hk)?);
    }
    let stacked = g.concat_vec(&logits)?;
    g.softmax(stacked)
}

/// Convex combination Σ_k α_k·h^k of the channel embeddings.
pub fn fuse(g: &mut Graph, h: &[NodeId; 4], alpha: NodeId) -> Result<NodeId> {
    if g.shape(alpha) != [4] {
        return Err(Error::shape(
            "fuse",
            format!("expected four gate weights, got {:?}", g.shape(alpha)),
        ));
    }
    let mut out: Option<NodeId> = None;
    for (k, &hk) in h.iter().enumerate() {
        let ak = g.select(alpha, k)?;
        let term = g.scale_by_scalar(hk, ak)?;
        out = Some(match out {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    Ok(out.expect("four channels"))
}

// ── position encoding ─────────────────────────────────────────────────

pub fn init_posenc_params(store: &mut ParamStore, cfg: &RunConfig, _seed: u64) {
    store.insert("posenc.gamma", init::ones(&[3]));
    store.insert(
        "posenc.log_lambda",
        init::full(&[1], cfg.lambda_init.ln()),
    );
}

fn pattern(name: &str, rows: usize, d: usize) -> Tensor {
    init::xavier_matrix(PATTERN_SEED, name, rows, d)
}

/// Position encoding for a run of days: γ₁·proj(calendar sin/cos) +
/// γ₂·(event proximity)·pattern + γ₃·exp(−λ·Δ)·pattern, where Δ counts
/// days since the most recent past event and λ = exp(log λ) stays
/// positive while training. Output is `[len(days) × d_model]`.
pub fn pos_enc_seq(
    g: &mut Graph,
    params: &BTreeMap<String, NodeId>,
    cfg: &RunConfig,
    cal: &TradingCalendar,
    tl: &EventTimeline,
    days: &[usize],
) -> Result<NodeId> {
    if days.is_empty() {
        return Err(Error::Input("position encoding needs at least one day".into()));
    }
    let t_len = days.len();
    let d = cfg.d_model;
    let gamma = bound(params, "posenc.gamma")?;

    let mut cal_rows = Vec::with_capacity(t_len * 6);
    for &t in days {
        cal_rows.extend(enc_calendar(t, cal)?);
    }
    let cal_mat = g.constant(Tensor::new(vec![t_len, 6], cal_rows)?);
    let p_cal = g.constant(pattern("posenc.pattern.cal", 6, d));
    let term1 = g.matmul(cal_mat, p_cal)?;
    let g1 = g.select(gamma, 0)?;
    let term1 = g.scale_by_scalar(term1, g1)?;

    let prox: Vec<f64> = days
        .iter()
        .map(|&t| enc_event(t, tl, cfg.sigma_event))
        .collect::<Result<_>>()?;
    let prox_col = g.constant(Tensor::new(vec![t_len, 1], prox)?);
    let p_event = g.constant(pattern("posenc.pattern.event", 1, d));
    let term2 = g.matmul(prox_col, p_event)?;
    let g2 = g.select(gamma, 1)?;
    let term2 = g.scale_by_scalar(term2, g2)?;

    // Decay input: Δ days since the last event at or before t, with a mask
    // that zeroes days that precede every event.
    let mut delta = vec![0.0; t_len];
    let mut mask = vec![0.0; t_len];
    for (i, &t) in days.iter().enumerate() {
        if let Some(e) = tl.events.iter().filter(|e| e.ordinal <= t).max_by_key(|e| e.ordinal) {
            delta[i] = (t - e.ordinal) as f64;
            mask[i] = 1.0;
        }
    }
    let delta_col = g.constant(Tensor::new(vec![t_len, 1], delta)?);
    let mask_col = g.constant(Tensor::new(vec![t_len, 1], mask)?);
    let lambda = g.exp(bound(params, "posenc.log_lambda")?)?;
    let neg_lambda = g.affine(lambda, -1.0, 0.0)?;
    let decayed = g.scale_by_scalar(delta_col, neg_lambda)?;
    let decayed = g.exp(decayed)?;
    let decayed = g.mul(decayed, mask_col)?;
    let p_decay = g.constant(pattern("posenc.pattern.decay", 1, d));
    let term3 = g.matmul(decayed, p_decay)?;
    let g3 = g.select(gamma, 2)?;
    let term3 = g.scale_by_scalar(term3, g3)?;

    let sum = g.add(term1, term2)?;
    g.add(sum, term3)
}

/// Position encoding of a single day as a `[d_model]` vector.
pub fn pos_enc(
    g: &mut Graph,
    params: &BTreeMap<String, NodeId>,
    cfg: &RunConfig,
    cal: &TradingCalendar,
    tl: &EventTimeline,
    t: usize,
) -> Result<NodeId> {
    let seq = pos_enc_seq(g, params, cfg, cal, tl, &[t])?;
    g.reshape(seq, vec![cfg.d_model])
}

// ── transformer trunk ─────────────────────────────────────────────────

pub fn init_trunk_params(store: &mut ParamStore, cfg: &RunConfig, seed: u64) {
    let d = cfg.d_model;
    let dh = d / cfg.heads;
    let f = cfg.ff_mult * d;
    for l in 1..=cfg.layers {
        for h in 0..cfg.heads {
            for part in ["wq", "wk", "wv"] {
                let name = format!("trunk.l{l}.attn.h{h}.{part}");
                store.insert(name.clone(), init::xavier_matrix(seed, &name, d, dh));
            }
        }
        let wo = format!("trunk.l{l}.attn.wo");
        store.insert(wo.clone(), init::xavier_matrix(seed, &wo, d, d));
        store.insert(format!("trunk.l{l}.attn.bo"), init::zeros(&[d]));
        store.insert(format!("trunk.l{l}.ln1.g"), init::ones(&[d]));
        store.insert(format!("trunk.l{l}.ln1.b"), init::zeros(&[d]));
        store.insert(format!("trunk.l{l}.ln2.g"), init::ones(&[d]));
        store.insert(format!("trunk.l{l}.ln2.b"), init::zeros(&[d]));
        let w1 = format!("trunk.l{l}.ffn.w1");
        store.insert(w1.clone(), init::xavier_matrix(seed, &w1, d, f));
        store.insert(format!("trunk.l{l}.ffn.b1"), init::zeros(&[f]));
        let w2 = format!("trunk.l{l}.ffn.w2");
        store.insert(w2.clone(), init::xavier_matrix(seed, &w2, f, d));
        store.insert(format!("trunk.l{l}.ffn.b2"), init::zeros(&[d]));
    }
}

/// Pre-norm causal transformer: per layer, x += MHA(LN(x)) then
/// x += FFN(LN(x)). The causal softmax guarantees position t only ever
/// reads positions ≤ t.
pub fn trunk_forward(
    g: &mut Graph,
    params: &BTreeMap<String, NodeId>,
    cfg: &RunConfig,
    seq: NodeId,
) -> Result<NodeId> {
    let (_t_len, d) = g.value(seq).dims2()?;
    if d != cfg.d_model {
        return Err(Error::shape(
            "trunk_forward",
            format!("sequence width {d} vs d_model {}", cfg.d_model),
        ));
    }
    let dh = d / cfg.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut x = seq;
    for l in 1..=cfg.layers {
        let p = |name: &str| bound(params, &format!("trunk.l{l}.{name}"));
        let ln1g = p("ln1.g")?;
        let ln1b = p("ln1.b")?;
        let h = g.layer_norm(x, ln1g, ln1b, 1e-5)?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let q = g.matmul(h, p(&format!("attn.h{hd}.wq"))?)?;
            let k = g.matmul(h, p(&format!("attn.h{hd}.wk"))?)?;
            let v = g.matmul(h, p(&format!("attn.h{hd}.wv"))?)?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.affine(scores, scale, 0.0)?;
            let alpha = g.softmax_causal(scores)?;
            heads.push(g.matmul(alpha, v)?);
        }
        let cat = g.concat_cols(&heads)?;
        let proj = g.linear(cat, p("attn.wo")?, p("attn.bo")?)?;
        x = g.add(x, proj)?;

        let ln2g = p("ln2.g")?;
        let ln2b = p("ln2.b")?;
        let h2 = g.layer_norm(x, ln2g, ln2b, 1e-5)?;
        let f1 = g.linear(h2, p("ffn.w1")?, p("ffn.b1")?)?;
        let f1 = g.gelu(f1)?;
        let f2 = g.linear(f1, p("ffn.w2")?, p("ffn.b2")?)?;
        x = g.add(x, f2)?;
    }
    Ok(x)
}

// ── prediction heads ──────────────────────────────────────────────────

pub fn init_head_params(store: &mut ParamStore, cfg: &RunConfig, seed: u64) {
    let d = cfg.d_model;
    store.insert("head.reg.w", init::xavier_matrix(seed, "head.reg.w", d, 1));
    store.insert("head.reg.b", init::zeros(&[1]));
    store.insert("head.cls.w", init::xavier_matrix(seed, "head.cls.w", d, 3));
    store.insert("head.cls.b", init::zeros(&[3]));
}

/// Dual-head output: next-day return and down/flat/up logits.
#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    pub y_hat: NodeId,
    pub class_logits: NodeId,
}

/// Read both heads off the last trunk position.
pub fn predict(
    g: &mut Graph,
    params: &BTreeMap<String, NodeId>,
    trunk_out: NodeId,
) -> Result<Prediction> {
    let (t_len, _d) = g.value(trunk_out).dims2()?;
    let last = g.slice_rows(trunk_out, t_len - 1, 1)?;
    let y = g.linear(last, bound(params, "head.reg.w")?, bound(params, "head.reg.b")?)?;
    let y_hat = g.reshape(y, vec![1])?;
    let logits = g.linear(last, bound(params, "head.cls.w")?, bound(params, "head.cls.b")?)?;
    let class_logits = g.reshape(logits, vec![3])?;
    Ok(Prediction { y_hat, class_logits })
}

// ── whole-model assembly ──────────────────────────────────────────────

/// Dataset-dependent sizes the parameter shapes hang off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataDims {
    pub n_symbols: usize,
    pub n_indicators: usize,
    pub n_event_types: usize,
    pub event_feat_dim: usize,
}

/// Per-dataset context shared by every window: the trading calendar, the
/// event timeline driving the position encoding, and the event graph.
#[derive(Debug, Clone, Copy)]
pub struct MarketView<'a> {
    pub calendar: &'a TradingCalendar,
    pub timeline: &'a EventTimeline,
    pub events: &'a EventGraph,
}

/// One training/evaluation window: per-day channel inputs (oldest first)
/// plus the forward-looking targets.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub symbol: usize,
    /// Grid ordinals of the window days, oldest → newest.
    pub days: Vec<usize>,
    pub tech: Vec<TechnicalWindow>,
    pub text: Vec<TokenSequence>,
    pub macros: Vec<MacroPanel>,
    /// Next-day return after the final window day.
    pub target_return: f64,
    /// 0 down, 1 flat, 2 up over the classification horizon.
    pub target_class: usize,
}

/// The assembled network: four channel encoders, gate, position encoding,
/// trunk, and heads, all hanging off one parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: RunConfig,
    pub dims: DataDims,
    pub store: ParamStore,
}

impl Model {
    pub fn init(cfg: &RunConfig, dims: DataDims, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if dims.n_symbols == 0 {
            return Err(Error::Input("model needs at least one symbol".into()));
        }
        let mut store = ParamStore::new();
        technical::init_params(&mut store, cfg, seed);
        text::init_params(&mut store, cfg, seed);
        macro_channel::init_params(&mut store, cfg, seed, dims.n_indicators);
        event::init_params(&mut store, cfg, seed, dims.n_event_types, dims.event_feat_dim);
        init_gate_params(&mut store, cfg, seed);
        init_posenc_params(&mut store, cfg, seed);
        init_trunk_params(&mut store, cfg, seed);
        init_head_params(&mut store, cfg, seed);
        store.insert(
            "symbol.embed",
            init::xavier_matrix(seed, "symbol.embed", dims.n_symbols, cfg.d_model),
        );
        Ok(Model {
            cfg: cfg.clone(),
            dims,
            store,
        })
    }
}

/// Run the full forward path for one window. Channels named in `ablate`
/// are replaced by their learned null embeddings; the gate still weighs
/// all four slots.
pub fn forward_window(
    g: &mut Graph,
    params: &BTreeMap<String, NodeId>,
    cfg: &RunConfig,
    view: &MarketView,
    sample: &WindowSample,
    ablate: &[Channel],
) -> Result<Prediction> {
    let t_len = sample.days.len();
    if t_len == 0 {
        return Err(Error::Input("window has no days".into()));
    }
    if sample.tech.len() != t_len || sample.text.len() != t_len || sample.macros.len() != t_len {
        return Err(Error::Input(format!(
            "window arrays disagree: {} days, {} tech, {} text, {} macro",
            t_len,
            sample.tech.len(),
            sample.text.len(),
            sample.macros.len()
        )));
    }
    let off = |ch: Channel| ablate.contains(&ch);
    let mut rows = Vec::with_capacity(t_len);
    for i in 0..t_len {
        let day = sample.days[i];
        let h_t = if off(Channel::Technical) {
            bound(params, "null.T")?
        } else {
            let w = g.constant(sample.tech[i].0.clone());
            technical::encode_technical(g, params, cfg, w)?
        };
        let h_f = if off(Channel::Text) {
            bound(params, "null.F")?
        } else {
            let embed = bound(params, "symbol.embed")?;
            let query = g.gather_rows(embed, Rc::new(vec![sample.symbol]))?;
            text::encode_text(g, params, cfg, &sample.text[i], query)?
        };
        let h_m = if off(Channel::Macro) {
            bound(params, "null.M")?
        } else {
            let values = g.constant(sample.macros[i].values.clone());
            let recency = g.constant(sample.macros[i].recency_weights(cfg.rho));
            macro_channel::encode_macro(g, params, cfg, values, recency)?
        };
        let h_e = if off(Channel::Event) {
            bound(params, "null.E")?
        } else {
            event::event2vec(g, params, cfg, view.events, day)?
        };
        let h = [h_t, h_f, h_m, h_e];
        let alpha = gate_weights(g, params, &h)?;
        rows.push(fuse(g, &h, alpha)?);
    }
    let flat = g.concat_vec(&rows)?;
    let z = g.reshape(flat, vec![t_len, cfg.d_model])?;
    let pe = pos_enc_seq(g, params, cfg, view.calendar, view.timeline, &sample.days)?;
    let seq = g.add(z, pe)?;
    let out = trunk_forward(g, params, cfg, seq)?;
    predict(g, params, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::require_all_pass;
    use crate::params::grad_check_store;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn gate_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.d_model = 2;
        cfg.heads = 1;
        cfg
    }

    /// Bind gate params crafted so logit k equals the first coordinate of
    /// h^k, then evaluate the gate on given logits.
    fn gate_on_logits(logits: [f64; 4]) -> Vec<f64> {
        let cfg = gate_cfg();
        let mut store = ParamStore::new();
        init_gate_params(&mut store, &cfg, 7);
        for ch in Channel::ALL {
            *store.get_mut(&format!("gate.w.{ch}")).unwrap() =
                Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        }
        let mut g = Graph::new();
        let params = store.bind(&mut g);
        let h: Vec<NodeId> = logits
            .iter()
            .map(|&l| g.constant_vec(vec![l, -3.0]))
            .collect();
        let alpha = gate_weights(&mut g, &params, &[h[0], h[1], h[2], h[3]]).unwrap();
        g.data(alpha).to_vec()
    }

    #[test]
    fn equal_logits_share_the_gate() {
        let alpha = gate_on_logits([0.7, 0.7, 0.7, 0.7]);
        for a in &alpha {
            assert!((a - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn log_integer_logits_give_proportional_gate() {
        let alpha = gate_on_logits([1f64.ln(), 2f64.ln(), 3f64.ln(), 4f64.ln()]);
        let want = [0.1, 0.2, 0.3, 0.4];
        for (a, w) in alpha.iter().zip(want) {
            assert!((a - w).abs() < 1e-12, "{a} vs {w}");
        }
    }

    #[test]
    fn dominant_logit_saturates() {
        let alpha = gate_on_logits([50.3, 0.3, 0.1, 0.2]);
        assert!(alpha[0] > 1.0 - 1e-9);
    }

    #[test]
    fn gate_is_shift_invariant_and_normalized() {
        let base = gate_on_logits([0.4, -1.2, 2.2, 0.9]);
        let shifted = gate_on_logits([0.4 + 17.5, -1.2 + 17.5, 2.2 + 17.5, 0.9 + 17.5]);
        let mut sum = 0.0;
        for (b, s) in base.iter().zip(&shifted) {
            assert!((b - s).abs() < 1e-12);
            sum += b;
        }
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fuse_endpoints_and_random_mix() {
        let mut g = Graph::new();
        let h: Vec<NodeId> = (0..4)
            .map(|k| g.constant_vec(vec![k as f64, 1.0 - k as f64, 0.5 * k as f64]))
            .collect();
        let h = [h[0], h[1], h[2], h[3]];

        // One-hot α picks that channel exactly.
        let one_hot = g.constant_vec(vec![0.0, 0.0, 1.0, 0.0]);
        let out = fuse(&mut g, &h, one_hot).unwrap();
        assert_eq!(g.data(out), g.data(h[2]));

        // Identical channels are a fixed point for any convex α.
        let same = g.constant_vec(vec![0.8, -0.2, 0.05]);
        let alpha = g.constant_vec(vec![0.1, 0.25, 0.35, 0.3]);
        let out = fuse(&mut g, &[same, same, same, same], alpha).unwrap();
        for (o, s) in g.data(out).iter().zip([0.8, -0.2, 0.05]) {
            assert!((o - s).abs() < 1e-12);
        }

        // Random case against a direct weighted sum.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hv: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let av: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let mut g = Graph::new();
        let hn: Vec<NodeId> = hv.iter().map(|v| g.constant_vec(v.clone())).collect();
        let alpha = g.constant_vec(av.clone());
        let out = fuse(&mut g, &[hn[0], hn[1], hn[2], hn[3]], alpha).unwrap();
        for j in 0..3 {
            let direct: f64 = (0..4).map(|k| av[k] * hv[k][j]).sum();
            assert!((g.data(out)[j] - direct).abs() < 1e-12);
            // Convexity: inside the per-coordinate envelope.
            let lo = hv.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min);
            let hi = hv.iter().map(|v| v[j]).fold(f64::NEG_INFINITY, f64::max);
            assert!(g.data(out)[j] >= lo - 1e-12 && g.data(out)[j] <= hi + 1e-12);
        }
    }

    fn posenc_fixture() -> (RunConfig, TradingCalendar, EventTimeline, ParamStore) {
        let mut cfg = RunConfig::default();
        cfg.d_model = 4;
        cfg.heads = 2;
        let cal = crate::timebase::build_calendar(d("2021-03-01"), d("2021-04-30")).unwrap();
        let date = cal.day(10).unwrap();
        let tl = EventTimeline::from_dates(&cal, [(date, 0, "policy".to_string())]).unwrap();
        let mut store = ParamStore::new();
        init_posenc_params(&mut store, &cfg, 1);
        (cfg, cal, tl, store)
    }

    #[test]
    fn calendar_only_gamma_matches_projection() {
        let (cfg, cal, tl, mut store) = posenc_fixture();
        *store.get_mut("posenc.gamma").unwrap() =
            Tensor::new(vec![3], vec![1.0, 0.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let params = store.bind(&mut g);
        let out = pos_enc(&mut g, &params, &cfg, &cal, &tl, 7).unwrap();
        let feats = enc_calendar(7, &cal).unwrap();
        let pat = pattern("posenc.pattern.cal", 6, cfg.d_model);
        for j in 0..cfg.d_model {
            let want: f64 = (0..6).map(|i| feats[i] * pat.data[i * cfg.d_model + j]).sum();
            assert!((g.data(out)[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gammas_kill_the_encoding() {
        let (cfg, cal, tl, mut store) = posenc_fixture();
        *store.get_mut("posenc.gamma").unwrap() = Tensor::zeros(vec![3]);
        let mut g = Graph::new();
        let params = store.bind(&mut g);
        let out = pos_enc_seq(&mut g, &params, &cfg, &cal, &tl, &[0, 5, 10, 20]).unwrap();
        assert!(g.data(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decay_gamma_at_event_day_is_the_pattern() {
        let (cfg, cal, tl, mut store) = posenc_fixture();
        *store.get_mut("posenc.gamma").unwrap() =
            Tensor::new(vec![3], vec![0.0, 0.0, 1.0]).unwrap();
        let mut g = Graph::new();
        let params = store.bind(&mut g);
        // Day 10 is the event day: Δ = 0, so the decay factor is exactly 1.
        let out = pos_enc(&mut g, &params, &cfg, &cal, &tl, 10).unwrap();
        let pat = pattern("posenc.pattern.decay", 1, cfg.d_model);
        assert_eq!(g.data(out), &pat.data[..]);
        // A day before the event sees no decay term at all.
        let before = pos_enc(&mut g, &params, &cfg, &cal, &tl, 3).unwrap();
        assert!(g.data(before).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn posenc_gradients_flow_to_gamma_and_lambda() {
        let (cfg, cal, tl, store) = posenc_fixture();
        let reports = grad_check_store(&store, &[], |g, params, _| {
            let out = pos_enc_seq(g, params, &cfg, &cal, &tl, &[4, 10, 11, 17])?;
            let sq = g.mul(out, out)?;
            g.mean_all(sq)
        })
        .unwrap();
        require_all_pass(&reports).unwrap();
    }

    fn trunk_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.d_model = 4;
        cfg.heads = 2;
        cfg.layers = 2;
        cfg.ff_mult = 2;
        cfg
    }

    #[test]
    fn zeroed_output_projections_leave_identity() {
        let cfg = trunk_cfg();
        let mut store = ParamStore::new();
        init_trunk_params(&mut store, &cfg, 3);
        for l in 1..=cfg.layers {
            let dims = store.get(&format!("trunk.l{l}.attn.wo")).unwrap().shape.clone();
            *store.get_mut(&format!("trunk.l{l}.attn.wo")).unwrap() = Tensor::zeros(dims);
            let dims = store.get(&format!("trunk.l{l}.ffn.w2")).unwrap().shape.clone();
            *store.get_mut(&format!("trunk.l{l}.ffn.w2")).unwrap() = Tensor::zeros(dims);
        }
        let mut g = Graph::new();
        let params = store.bind(&mut g);
        let seq_data: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let seq = g.constant(Tensor::new(vec![5, 4], seq_data.clone()).unwrap());
        let out = trunk_forward(&mut g, &params, &cfg, seq).unwrap();
        assert_eq!(g.data(out), &seq_data[..]);
    }

    #[test]
    fn future_rows_cannot_reach_the_past() {
        let cfg = trunk_cfg();
        let mut store = ParamStore::new();
        init_trunk_params(&mut store, &cfg, 11);
        let run = |rows: &[Vec<f64>]| {
            let mut g = Graph::new();
            let params = store.bind(&mut g);
            let seq = g.constant(Tensor::from_rows(rows).unwrap());
            let out = trunk_forward(&mut g, &params, &cfg, seq).unwrap();
            g.data(out).to_vec()
        };
        let base: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.13).cos()).collect())
            .collect();
        let mut bumped = base.clone();
        for v in &mut bumped[4] {
            *v += 10.0;
        }
        let a = run(&base);
        let b = run(&bumped);
        // Rows 0..4 must agree bit for bit; only the last row may move.
        assert_eq!(a[..16], b[..16]);
        assert_ne!(a[16..], b[16..]);
    }

    #[test]
    fn trunk_gradients_check_out() {
        let mut cfg = trunk_cfg();
        cfg.layers = 2;
        let mut store = ParamStore::new();
        init_trunk_params(&mut store, &cfg, 19);
        let seq = Tensor::new(
            vec![3, 4],
            (0..12).map(|i| (i as f64 * 0.29).sin()).collect(),
        )
        .unwrap();
        let reports = grad_check_store(&store, &[("seq", &seq)], |g, params, extra| {
            let out = trunk_forward(g, params, &cfg, extra[0])?;
            let sq = g.mul(out, out)?;
            g.mean_all(sq)
        })
        .unwrap();
        require_all_pass(&reports).unwrap();
    }

    #[test]
    fn heads_read_the_last_position() {
        let cfg = trunk_cfg();
        let mut store = ParamStore::new();
        init_head_params(&mut store, &cfg, 23);
        *store.get_mut("head.reg.w").unwrap() = Tensor::zeros(vec![4, 1]);
        *store.get_mut("head.reg.b").unwrap() = Tensor::new(vec![1], vec![0.625]).unwrap();
        *store.get_mut("head.cls.w").unwrap() = Tensor::zeros(vec![4, 3]);
        let mut g = Graph::new();
        let params = store.bind(&mut g);
        let trunk_out = g.constant(Tensor::zeros(vec![5, 4]));
        let pred = predict(&mut g, &params, trunk_out).unwrap();
        assert_eq!(g.shape(pred.y_hat), &[1]);
        assert_eq!(g.shape(pred.class_logits), &[3]);
        assert_eq!(g.data(pred.y_hat), &[0.625]);
        let probs = g.softmax(pred.class_logits).unwrap();
        for p in g.data(probs) {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    // ── whole-model fixtures ──────────────────────────────────────────

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.d_model = 4;
        cfg.heads = 2;
        cfg.layers = 1;
        cfg.ff_mult = 2;
        cfg.lookback = 2;
        cfg.wavelet_levels = 1;
        cfg.tech_lookback = 4;
        cfg.conv_channels = 2;
        cfg.text_vocab = 16;
        cfg.text_max_len = 4;
        cfg.macro_lookback = 3;
        cfg.macro_hidden = 2;
        cfg.gat_hidden = 2;
        cfg.gat_heads = 2;
        cfg
    }

    fn tiny_dims() -> DataDims {
        DataDims {
            n_symbols: 2,
            n_indicators: 2,
            n_event_types: 2,
            event_feat_dim: 1,
        }
    }

    fn tiny_sample(cfg: &RunConfig, seed: u64) -> WindowSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tech = Vec::new();
        let mut macros = Vec::new();
        let mut texts = Vec::new();
        for _ in 0..cfg.lookback {
            let data: Vec<f64> = (0..cfg.tech_lookback * technical::PRICE_FEATURES)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect();
            tech.push(
                TechnicalWindow::new(
                    Tensor::new(vec![cfg.tech_lookback, technical::PRICE_FEATURES], data).unwrap(),
                    cfg.wavelet_levels,
                )
                .unwrap(),
            );
            let vals: Vec<f64> = (0..cfg.macro_lookback * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let stale: Vec<f64> = (0..cfg.macro_lookback * 2).map(|_| rng.gen_range(0.0..5.0)).collect();
            macros.push(
                MacroPanel::new(
                    Tensor::new(vec![cfg.macro_lookback, 2], vals).unwrap(),
                    Tensor::new(vec![cfg.macro_lookback, 2], stale).unwrap(),
                )
                .unwrap(),
            );
            texts.push(text::tokenize("earnings beat guidance", cfg.text_vocab, cfg.text_max_len));
        }
        WindowSample {
            symbol: 1,
            days: vec![10, 11],
            tech,
            text: texts,
            macros,
            target_return: 0.004,
            target_class: 2,
        }
    }

    fn tiny_market() -> (TradingCalendar, EventTimeline, EventGraph) {
        let cal = crate::timebase::build_calendar(d("2021-03-01"), d("2021-04-30")).unwrap();
        let e_date = cal.day(8).unwrap();
        let tl = EventTimeline::from_dates(&cal, [(e_date, 0, "policy".to_string())]).unwrap();
        let graph = EventGraph::new(
            vec![
                crate::encoders::event::EventNode {
                    id: 0,
                    type_id: 0,
                    ordinal: 8,
                    features: vec![0.4],
                },
                crate::encoders::event::EventNode {
                    id: 1,
                    type_id: 1,
                    ordinal: 9,
                    features: vec![-0.2],
                },
            ],
            vec![(0, 1, 1)],
        )
        .unwrap();
        (cal, tl, graph)
    }

    #[test]
    fn forward_window_is_deterministic_across_graphs() {
        let cfg = tiny_cfg();
        let model = Model::init(&cfg, tiny_dims(), 42).unwrap();
        let model2 = Model::init(&cfg, tiny_dims(), 42).unwrap();
        let (cal, tl, graph) = tiny_market();
        let view = MarketView {
            calendar: &cal,
            timeline: &tl,
            events: &graph,
        };
        let sample = tiny_sample(&cfg, 1);
        let run = |m: &Model| {
            let mut g = Graph::new();
            let params = m.store.bind(&mut g);
            let pred = forward_window(&mut g, &params, &cfg, &view, &sample, &[]).unwrap();
            (g.data(pred.y_hat).to_vec(), g.data(pred.class_logits).to_vec())
        };
        let (y1, l1) = run(&model);
        let (y2, l2) = run(&model2);
        assert_eq!(y1, y2);
        assert_eq!(l1, l2);
        assert_eq!(y1.len(), 1);
        assert_eq!(l1.len(), 3);
        assert!(y1[0].is_finite() && l1.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_gammas_ignore_the_timeline() {
        let cfg = tiny_cfg();
        let mut model = Model::init(&cfg, tiny_dims(), 7).unwrap();
        *model.store.get_mut("posenc.gamma").unwrap() = Tensor::zeros(vec![3]);
        let (cal, tl, graph) = tiny_market();
        let moved = EventTimeline::from_dates(
            &cal,
            [(cal.day(2).unwrap(), 0, "policy".to_string()),
             (cal.day(12).unwrap(), 1, "trade".to_string())],
        )
        .unwrap();
        let sample = tiny_sample(&cfg, 2);
        let run = |timeline: &EventTimeline| {
            let mut g = Graph::new();
            let params = model.store.bind(&mut g);
            let view = MarketView {
                calendar: &cal,
                timeline,
                events: &graph,
            };
            let pred = forward_window(&mut g, &params, &cfg, &view, &sample, &[]).unwrap();
            g.data(pred.y_hat).to_vec()
        };
        assert_eq!(run(&tl), run(&moved));
    }

    #[test]
    fn ablated_channel_input_stops_mattering() {
        let cfg = tiny_cfg();
        let model = Model::init(&cfg, tiny_dims(), 9).unwrap();
        let (cal, tl, graph) = tiny_market();
        let view = MarketView {
            calendar: &cal,
            timeline: &tl,
            events: &graph,
        };
        let a = tiny_sample(&cfg, 3);
        let mut b = tiny_sample(&cfg, 3);
        // Rewrite every technical window of b.
        for w in &mut b.tech {
            let mut data = w.0.data.clone();
            for v in &mut data {
                *v = -*v + 0.1;
            }
            *w = TechnicalWindow::new(
                Tensor::new(w.0.shape.clone(), data).unwrap(),
                cfg.wavelet_levels,
            )
            .unwrap();
        }
        let run = |s: &WindowSample, ablate: &[Channel]| {
            let mut g = Graph::new();
            let params = model.store.bind(&mut g);
            let pred = forward_window(&mut g, &params, &cfg, &view, s, ablate).unwrap();
            g.data(pred.y_hat).to_vec()
        };
        // Full model: the altered technical inputs change the prediction.
        assert_ne!(run(&a, &[]), run(&b, &[]));
        // Technical channel ablated: the same alteration is invisible.
        assert_eq!(
            run(&a, &[Channel::Technical]),
            run(&b, &[Channel::Technical])
        );
    }

    #[test]
    fn full_model_gradients_check_out() {
        let cfg = tiny_cfg();
        let model = Model::init(&cfg, tiny_dims(), 21).unwrap();
        let (cal, tl, graph) = tiny_market();
        let view = MarketView {
            calendar: &cal,
            timeline: &tl,
            events: &graph,
        };
        let sample = tiny_sample(&cfg, 4);
        let reports = grad_check_store(&model.store, &[], |g, params, _| {
            let pred = forward_window(g, params, &cfg, &view, &sample, &[])?;
            let y_sq = g.mul(pred.y_hat, pred.y_hat)?;
            let y_term = g.sum_all(y_sq)?;
            let l_sq = g.mul(pred.class_logits, pred.class_logits)?;
            let l_term = g.mean_all(l_sq)?;
            g.add(y_term, l_term)
        })
        .unwrap();
        require_all_pass(&reports).unwrap();
    }
}
