//! Event channel: a graph attention network over the event knowledge graph,
//! pooled into a per-day embedding with strict causality — events dated
//! after the query day cannot influence the output at all, because they are
//! cut from the graph before any computation runs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::rc::Rc;

use crate::config::RunConfig;
use crate::encoders::bound;
use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::init;
use crate::numerics::tensor::Tensor;
use crate::params::ParamStore;

pub const LEAKY_SLOPE: f64 = 0.2;

/// One event node: identity, type, when it happened, optional features.
#[derive(Debug, Clone, PartialEq)]
pub struct EventNode {
    pub id: usize,
    pub type_id: usize,
    pub ordinal: usize,
    pub features: Vec<f64>,
}

/// Directed event knowledge graph. Self-loops are added for every node at
/// construction so no node ever attends over an empty neighborhood.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventGraph {
    pub nodes: Vec<EventNode>,
    /// (src, dst, relation id); dst aggregates from src.
    pub edges: Vec<(usize, usize, usize)>,
}

impl EventGraph {
    pub const SELF_RELATION: usize = 0;

    pub fn new(nodes: Vec<EventNode>, mut edges: Vec<(usize, usize, usize)>) -> Result<Self> {
        let ids: HashSet<usize> = nodes.iter().map(|n| n.id).collect();
        if ids.len() != nodes.len() {
            return Err(Error::Input("duplicate event node ids".into()));
        }
        for &(src, dst, _) in &edges {
            if !ids.contains(&src) || !ids.contains(&dst) {
                return Err(Error::Input(format!(
                    "edge ({src},{dst}) references unknown node"
                )));
            }
        }
        let feat_dim = nodes.first().map_or(0, |n| n.features.len());
        if nodes.iter().any(|n| n.features.len() != feat_dim) {
            return Err(Error::Input("event feature vectors have mixed lengths".into()));
        }
        let with_self: HashSet<usize> = edges
            .iter()
            .filter(|(s, d, _)| s == d)
            .map(|&(s, _, _)| s)
            .collect();
        // Walk nodes in order, not the id set: missing self-loops must land
        // in a reproducible order for datasets to be byte-identical.
        for n in &nodes {
            if !with_self.contains(&n.id) {
                edges.push((n.id, n.id, Self::SELF_RELATION));
            }
        }
        Ok(EventGraph { nodes, edges })
    }

    pub fn empty() -> Self {
        EventGraph::default()
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.features.len())
    }

    pub fn n_types(&self) -> usize {
        self.nodes.iter().map(|n| n.type_id + 1).max().unwrap_or(0)
    }

    /// Subgraph of nodes with ordinal ≤ day, nodes relabeled 0..M in input
    /// order, edges restricted to surviving endpoints.
    pub fn up_to(&self, day: usize) -> EventGraph {
        let keep: Vec<&EventNode> = self.nodes.iter().filter(|n| n.ordinal <= day).collect();
        let relabel: HashMap<usize, usize> =
            keep.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let nodes = keep
            .iter()
            .enumerate()
            .map(|(i, n)| EventNode {
                id: i,
                type_id: n.type_id,
                ordinal: n.ordinal,
                features: n.features.clone(),
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|&(s, d, r)| Some((*relabel.get(&s)?, *relabel.get(&d)?, r)))
            .collect();
        EventGraph { nodes, edges }
    }

    /// Copy of the graph without one node and all edges touching it.
    pub fn without_node(&self, node_id: usize) -> EventGraph {
        EventGraph {
            nodes: self.nodes.iter().filter(|n| n.id != node_id).cloned().collect(),
            edges: self
                .edges
                .iter()
                .filter(|&&(s, d, _)| s != node_id && d != node_id)
                .copied()
                .collect(),
        }
    }

    fn edge_arrays(&self) -> (Rc<Vec<usize>>, Rc<Vec<usize>>) {
        let index: HashMap<usize, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i))
            .collect();
        let src = self.edges.iter().map(|&(s, _, _)| index[&s]).collect();
        let dst = self.edges.iter().map(|&(_, d, _)| index[&d]).collect();
        (Rc::new(src), Rc::new(dst))
    }
}

/// One graph-attention head: per-edge score LeakyReLU(aᵀ[Wh_i ‖ Wh_j]),
/// softmax over each destination's in-neighborhood, ELU on the aggregate.
pub fn gat_layer(
    g: &mut Graph,
    graph: &EventGraph,
    h: NodeId,
    w: NodeId,
    a: NodeId,
) -> Result<NodeId> {
    let n = graph.nodes.len();
    let (rows, _) = g.value(h).dims2()?;
    if rows != n {
        return Err(Error::shape(
            "gat_layer",
            format!("{n} graph nodes vs {rows} feature rows"),
        ));
    }
    let (_, d_out) = g.value(w).dims2()?;
    if g.shape(a) != [2 * d_out, 1] {
        return Err(Error::shape(
            "gat_layer",
            format!("attention vector must be [{},1], got {:?}", 2 * d_out, g.shape(a)),
        ));
    }
    let (src, dst) = graph.edge_arrays();
    let wh = g.matmul(h, w)?;
    let wh_dst = g.gather_rows(wh, Rc::clone(&dst))?;
    let wh_src = g.gather_rows(wh, Rc::clone(&src))?;
    let cat = g.concat_cols(&[wh_dst, wh_src])?;
    let scores = g.matmul(cat, a)?;
    let scores = g.reshape(scores, vec![graph.edges.len()])?;
    let scores = g.leaky_relu(scores, LEAKY_SLOPE)?;
    let alpha = g.segment_softmax(scores, Rc::clone(&dst))?;
    let weighted = g.scale_rows(wh_src, alpha)?;
    let agg = g.scatter_add_rows(weighted, dst, n)?;
    g.elu(agg)
}

pub fn init_params(
    store: &mut ParamStore,
    cfg: &RunConfig,
    seed: u64,
    n_types: usize,
    feature_dim: usize,
) {
    let d_e = cfg.gat_hidden;
    store.insert(
        "event.type_embed",
        init::xavier_matrix(seed, "event.type_embed", n_types.max(1), d_e),
    );
    store.insert("event.decay.w", init::xavier_matrix(seed, "event.decay.w", 1, d_e));
    if feature_dim > 0 {
        store.insert(
            "event.feat.w",
            init::xavier_matrix(seed, "event.feat.w", feature_dim, d_e),
        );
    }
    // Every layer emits d_e per head; all but the last concatenate heads,
    // the last averages them, so widths alternate d_e → heads·d_e → … → d_e.
    for layer in 1..=cfg.gat_layers {
        let d_in = if layer == 1 { d_e } else { cfg.gat_heads * d_e };
        for head in 0..cfg.gat_heads {
            let w = format!("event.gat{layer}.h{head}.w");
            store.insert(w.clone(), init::xavier_matrix(seed, &w, d_in, d_e));
            let a = format!("event.gat{layer}.h{head}.a");
            store.insert(
                a.clone(),
                init::xavier_uniform(seed, &a, 2 * d_e, 1, &[2 * d_e, 1]),
            );
        }
    }
    store.insert("event.proj.w", init::xavier_matrix(seed, "event.proj.w", d_e, cfg.d_model));
    store.insert("event.proj.b", init::zeros(&[cfg.d_model]));
}

/// Embed the state of the event graph as seen from `day`: only events with
/// ordinal ≤ day exist for the computation; their node states run through
/// the stacked attention layers and pool with exponential recency weights.
/// No past events → exact zero vector.
pub fn event2vec(
    g: &mut Graph,
    params: &BTreeMap<String, NodeId>,
    cfg: &RunConfig,
    graph: &EventGraph,
    day: usize,
) -> Result<NodeId> {
    let past = graph.up_to(day);
    let m = past.nodes.len();
    if m == 0 {
        return Ok(g.constant(Tensor::zeros(vec![cfg.d_model])));
    }

    // Node init: type embedding + decay-scaled pattern + projected features.
    let type_ids: Vec<usize> = past.nodes.iter().map(|n| n.type_id).collect();
    let type_embed = bound(params, "event.type_embed")?;
    let mut h = g.gather_rows(type_embed, Rc::new(type_ids))?;

    let decay: Vec<f64> = past
        .nodes
        .iter()
        .map(|n| (-cfg.lambda_init * (day - n.ordinal) as f64).exp())
        .collect();
    let decay_col = g.constant(Tensor::new(vec![m, 1], decay.clone())?);
    let decay_term = g.matmul(decay_col, bound(params, "event.decay.w")?)?;
    h = g.add(h, decay_term)?;

    if past.feature_dim() > 0 {
        let feats: Vec<f64> = past.nodes.iter().flat_map(|n| n.features.clone()).collect();
        let feat_mat = g.constant(Tensor::new(vec![m, past.feature_dim()], feats)?);
        let feat_term = g.matmul(feat_mat, bound(params, "event.feat.w")?)?;
        h = g.add(h, feat_term)?;
    }

    // Stacked attention: intermediate layers concatenate heads, the final
    // layer averages them back to a single d_e-wide state per node.
    for layer in 1..=cfg.gat_layers {
        let last = layer == cfg.gat_layers;
        let mut head_outs = Vec::with_capacity(cfg.gat_heads);
        for head in 0..cfg.gat_heads {
            let w = bound(params, &format!("event.gat{layer}.h{head}.w"))?;
            let a = bound(params, &format!("event.gat{layer}.h{head}.a"))?;
            head_outs.push(gat_layer(g, &past, h, w, a)?);
        }
        h = if last {
            let mut sum = head_outs[0];
            for &out in &head_outs[1..] {
                sum = g.add(sum, out)?;
            }
            g.affine(sum, 1.0 / cfg.gat_heads as f64, 0.0)?
        } else {
            g.concat_cols(&head_outs)?
        };
    }
    let h2 = h;

    // Decay-weighted mean pool over past nodes.
    let total: f64 = decay.iter().sum();
    let pool_w: Vec<f64> = decay.iter().map(|d| d / total).collect();
    let pool_row = g.constant(Tensor::new(vec![1, m], pool_w)?);
    let pooled = g.matmul(pool_row, h2)?;

    let out = g.linear(pooled, bound(params, "event.proj.w")?, bound(params, "event.proj.b")?)?;
    g.reshape(out, vec![cfg.d_model])
}
