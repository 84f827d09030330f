//! Technical channel: dilated convolutions over the price window combined
//! through the wavelet approximation pyramid.
//!
//! For each level k = 1..K the window runs through a causal dilated
//! convolution with dilation 2^(k−1), the result is reduced to its level-k
//! Haar approximation band, time-pooled, and linearly mapped to d_model;
//! the K level embeddings sum into the channel output.

use std::collections::BTreeMap;

use crate::config::RunConfig;
use crate::encoders::bound;
use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::init;
use crate::numerics::tensor::Tensor;
use crate::params::ParamStore;

pub const PRICE_FEATURES: usize = 5;
const KERNEL: usize = 2;

/// Z-scored [lookback × 5] window of open/high/low/close/volume.
#[derive(Debug, Clone)]
pub struct TechnicalWindow(pub Tensor);

impl TechnicalWindow {
    pub fn new(data: Tensor, wavelet_levels: usize) -> Result<Self> {
        let (l, c) = data.dims2()?;
        if c != PRICE_FEATURES {
            return Err(Error::shape(
                "technical_window",
                format!("expected {PRICE_FEATURES} price features, got {c}"),
            ));
        }
        if l == 0 || l % (1 << wavelet_levels) != 0 {
            return Err(Error::shape(
                "technical_window",
                format!("lookback {l} not divisible by 2^{wavelet_levels}"),
            ));
        }
        if !data.all_finite() {
            return Err(Error::numeric("technical window"));
        }
        Ok(TechnicalWindow(data))
    }
}

pub fn init_params(store: &mut ParamStore, cfg: &RunConfig, seed: u64) {
    let c = cfg.conv_channels;
    for k in 1..=cfg.wavelet_levels {
        let conv = format!("tech.conv{k}.w");
        store.insert(
            conv.clone(),
            init::xavier_uniform(seed, &conv, KERNEL * PRICE_FEATURES, c, &[KERNEL, PRICE_FEATURES, c]),
        );
        let w = format!("tech.band{k}.w");
        store.insert(w.clone(), init::xavier_matrix(seed, &w, c, cfg.d_model));
        store.insert(format!("tech.band{k}.b"), init::zeros(&[cfg.d_model]));
    }
}

/// Encode one price window to a `[d_model]` embedding.
pub fn encode_technical(
    g: &mut Graph,
    params: &BTreeMap<String, NodeId>,
    cfg: &RunConfig,
    window: NodeId,
) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for k in 1..=cfg.wavelet_levels {
        let conv_w = bound(params, &format!("tech.conv{k}.w"))?;
        let conv = g.dilated_conv(window, conv_w, 1 << (k - 1))?;
        let band = g.haar_approx(conv, k)?;
        let pooled = g.mean_axis0(band)?;
        let pooled = g.reshape(pooled, vec![1, cfg.conv_channels])?;
        let w = bound(params, &format!("tech.band{k}.w"))?;
        let b = bound(params, &format!("tech.band{k}.b"))?;
        let h = g.linear(pooled, w, b)?;
        total = Some(match total {
            Some(acc) => g.add(acc, h)?,
            None => h,
        });
    }
    let total = total.ok_or_else(|| Error::param("wavelet_levels", "must be at least 1"))?;
    g.reshape(total, vec![cfg.d_model])
}
