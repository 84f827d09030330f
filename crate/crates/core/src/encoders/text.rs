//! Text channel: hashing tokenizer, token embeddings with sinusoidal
//! positions, one self-attention + feed-forward block, then cross-attention
//! with the stock feature vector as the single query.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::config::RunConfig;
use crate::encoders::attention::cross_attention;
use crate::encoders::bound;
use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::init::{self, fnv1a};
use crate::numerics::tensor::Tensor;
use crate::params::ParamStore;

/// Reserved id for empty documents.
pub const NULL_TOKEN: usize = 0;

/// Hashed token ids, never empty, all below the vocabulary size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, vocab: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Input("token sequence must not be empty".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Input(format!(
                "token id {bad} outside vocabulary of {vocab}"
            )));
        }
        Ok(TokenSequence { ids })
    }

    pub fn null() -> Self {
        TokenSequence {
            ids: vec![NULL_TOKEN],
        }
    }
}

/// Lowercase whitespace tokenizer hashing each word into [1, vocab);
/// id 0 stays reserved for empty text. Sequences truncate to `max_len`.
pub fn tokenize(text: &str, vocab: usize, max_len: usize) -> TokenSequence {
    let ids: Vec<usize> = text
        .split_whitespace()
        .take(max_len)
        .map(|w| (fnv1a(w.to_lowercase().as_bytes()) % (vocab as u64 - 1)) as usize + 1)
        .collect();
    if ids.is_empty() {
        TokenSequence::null()
    } else {
        TokenSequence { ids }
    }
}

pub fn init_params(store: &mut ParamStore, cfg: &RunConfig, seed: u64) {
    let d = cfg.d_model;
    store.insert(
        "text.embed",
        init::xavier_matrix(seed, "text.embed", cfg.text_vocab, d),
    );
    for name in ["text.attn.wq", "text.attn.wk", "text.attn.wv", "text.attn.wo"] {
        store.insert(name, init::xavier_matrix(seed, name, d, d));
    }
    store.insert("text.ln1.g", init::ones(&[d]));
    store.insert("text.ln1.b", init::zeros(&[d]));
    store.insert("text.ln2.g", init::ones(&[d]));
    store.insert("text.ln2.b", init::zeros(&[d]));
    let f = cfg.ff_mult * d;
    store.insert("text.ffn.w1", init::xavier_matrix(seed, "text.ffn.w1", d, f));
    store.insert("text.ffn.b1", init::zeros(&[f]));
    store.insert("text.ffn.w2", init::xavier_matrix(seed, "text.ffn.w2", f, d));
    store.insert("text.ffn.b2", init::zeros(&[d]));
    for name in ["text.cross.wq", "text.cross.wk", "text.cross.wv", "text.cross.wo"] {
        store.insert(name, init::xavier_matrix(seed, name, d, d));
    }
    store.insert("text.cross.b", init::zeros(&[d]));
}

/// Fixed sinusoidal position table for `n` positions and width `d`.
fn position_table(n: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; n * d];
    for t in 0..n {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let phase = t as f64 * rate;
            data[t * d + i] = if i % 2 == 0 { phase.sin() } else { phase.cos() };
        }
    }
    Tensor::new(vec![n, d], data).expect("table shape consistent")
}

/// Encode one document against a stock feature query; output `[d_model]`.
pub fn encode_text(
    g: &mut Graph,
    params: &BTreeMap<String, NodeId>,
    cfg: &RunConfig,
    toks: &TokenSequence,
    stock_query: NodeId,
) -> Result<NodeId> {
    let d = cfg.d_model;
    if let Some(&bad) = toks.ids.iter().find(|&&id| id >= cfg.text_vocab) {
        return Err(Error::Input(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.text_vocab
        )));
    }
    let n = toks.ids.len();
    let embed = bound(params, "text.embed")?;
    let e = g.gather_rows(embed, Rc::new(toks.ids.clone()))?;
    let pos = g.constant(position_table(n, d));
    let mut x = g.add(e, pos)?;

    // Pre-norm self-attention block.
    let ln1g = bound(params, "text.ln1.g")?;
    let ln1b = bound(params, "text.ln1.b")?;
    let h = g.layer_norm(x, ln1g, ln1b, 1e-5)?;
    let q = g.matmul(h, bound(params, "text.attn.wq")?)?;
    let k = g.matmul(h, bound(params, "text.attn.wk")?)?;
    let v = g.matmul(h, bound(params, "text.attn.wv")?)?;
    let attn = cross_attention(g, q, k, v)?;
    let attn = g.matmul(attn, bound(params, "text.attn.wo")?)?;
    x = g.add(x, attn)?;

    let ln2g = bound(params, "text.ln2.g")?;
    let ln2b = bound(params, "text.ln2.b")?;
    let h2 = g.layer_norm(x, ln2g, ln2b, 1e-5)?;
    let f1 = g.linear(h2, bound(params, "text.ffn.w1")?, bound(params, "text.ffn.b1")?)?;
    let f1 = g.gelu(f1)?;
    let f2 = g.linear(f1, bound(params, "text.ffn.w2")?, bound(params, "text.ffn.b2")?)?;
    x = g.add(x, f2)?;

    // Stock feature as the single cross-attention query over token states.
    let query = g.reshape(stock_query, vec![1, d])?;
    let q = g.matmul(query, bound(params, "text.cross.wq")?)?;
    let k = g.matmul(x, bound(params, "text.cross.wk")?)?;
    let v = g.matmul(x, bound(params, "text.cross.wv")?)?;
    let fused = cross_attention(g, q, k, v)?;
    let out = g.linear(fused, bound(params, "text.cross.wo")?, bound(params, "text.cross.b")?)?;
    g.reshape(out, vec![d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::require_all_pass;
    use crate::params::grad_check_store;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.d_model = 4;
        cfg.text_vocab = 32;
        cfg.ff_mult = 2;
        cfg.text_max_len = 6;
        cfg
    }

    #[test]
    fn tokenizer_basics() {
        let t = tokenize("Margins SURGE on strong demand", 4096, 16);
        assert_eq!(t.ids.len(), 5);
        assert!(t.ids.iter().all(|&id| (1..4096).contains(&id)));
        // Case-insensitive: same ids for shouted text.
        let u = tokenize("margins surge ON STRONG demand", 4096, 16);
        assert_eq!(t, u);
        // Empty text maps to the null token.
        assert_eq!(tokenize("  ", 4096, 16), TokenSequence::null());
        // Truncation.
        assert_eq!(tokenize("a b c d e f g h", 4096, 3).ids.len(), 3);
    }

    #[test]
    fn token_sequence_validation() {
        assert!(TokenSequence::new(vec![], 16).is_err());
        assert!(TokenSequence::new(vec![16], 16).is_err());
        assert!(TokenSequence::new(vec![0, 5, 15], 16).is_ok());
    }

    #[test]
    fn output_shape_and_determinism() {
        let cfg = small_cfg();
        let mut store = ParamStore::new();
        init_params(&mut store, &cfg, 1);
        let toks = tokenize("profits beat guidance", cfg.text_vocab, cfg.text_max_len);
        let run = || {
            let mut g = Graph::new();
            let params = store.bind(&mut g);
            let query = g.constant_vec(vec![0.1, -0.2, 0.3, 0.4]);
            let h = encode_text(&mut g, &params, &cfg, &toks, query).unwrap();
            g.data(h).to_vec()
        };
        let a = run();
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, run());
    }

    #[test]
    fn null_sequences_are_indistinguishable() {
        let cfg = small_cfg();
        let mut store = ParamStore::new();
        init_params(&mut store, &cfg, 2);
        let encode = |toks: &TokenSequence| {
            let mut g = Graph::new();
            let params = store.bind(&mut g);
            let query = g.constant_vec(vec![1.0, 0.0, -1.0, 0.5]);
            let h = encode_text(&mut g, &params, &cfg, toks, query).unwrap();
            g.data(h).to_vec()
        };
        // Different raw strings that both map to the null sequence.
        assert_eq!(
            encode(&tokenize("", cfg.text_vocab, cfg.text_max_len)),
            encode(&tokenize("   \t  ", cfg.text_vocab, cfg.text_max_len)),
        );
    }

    #[test]
    fn out_of_range_token_rejected() {
        let cfg = small_cfg();
        let mut store = ParamStore::new();
        init_params(&mut store, &cfg, 2);
        let mut g = Graph::new();
        let params = store.bind(&mut g);
        let query = g.constant_vec(vec![0.0; 4]);
        let toks = TokenSequence { ids: vec![99] };
        assert!(encode_text(&mut g, &params, &cfg, &toks, query).is_err());
    }

    #[test]
    fn channel_gradients_check_out() {
        let mut cfg = small_cfg();
        cfg.text_vocab = 8;
        let mut store = ParamStore::new();
        init_params(&mut store, &cfg, 7);
        let toks = TokenSequence::new(vec![1, 5, 2], cfg.text_vocab).unwrap();
        let query = Tensor::from_vec(vec![0.2, -0.4, 0.6, 0.1]);
        let reports = grad_check_store(&store, &[("stock_query", &query)], |g, params, extras| {
            let h = encode_text(g, params, &cfg, &toks, extras[0])?;
            let sq = g.mul(h, h)?;
            g.mean_all(sq)
        })
        .unwrap();
        require_all_pass(&reports).unwrap();
    }
}
