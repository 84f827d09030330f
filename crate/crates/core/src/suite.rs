//! Named gradient-check suites.
//!
//! `numerics.ops` drives every differentiable graph operation over
//! randomized shapes and values; the `encoders.*` suites push gradients
//! through each modality encoder end to end; `fusion.model` checks the
//! whole network from channel inputs to both heads. Losses contract the
//! op output against a random constant so permuted or dropped elements
//! cannot cancel out.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::datagen::gen::{generate, EventTypeSpec, GenSpec};
use crate::encoders::event::{self, EventGraph, EventNode};
use crate::encoders::macro_channel::{self, MacroPanel};
use crate::encoders::technical;
use crate::encoders::text::{self, TokenSequence};
use crate::error::{Error, Result};
use crate::fusion::{forward_window, MarketView, Model};
use crate::numerics::gradcheck::{grad_check_multi, GradCheckReport};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::init;
use crate::numerics::tensor::Tensor;
use crate::params::{grad_check_store, ParamStore};
use crate::training::data::SamplePlan;

pub const SUITES: &[&str] = &[
    "numerics.ops",
    "encoders.technical",
    "encoders.text",
    "encoders.macro",
    "encoders.event",
    "fusion.model",
];

/// One checked instance: which suite, which case, and the verdict.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub suite: &'static str,
    pub case: String,
    pub report: GradCheckReport,
}

impl std::fmt::Display for SuiteCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}: {}", self.suite, self.case, self.report)
    }
}

pub fn failures(cases: &[SuiteCase]) -> Vec<&SuiteCase> {
    cases.iter().filter(|c| !c.report.passed()).collect()
}

/// Run one named suite with `instances` random instances per case.
pub fn run_suite(name: &str, instances: usize, seed: u64) -> Result<Vec<SuiteCase>> {
    match name {
        "numerics.ops" => ops_suite(instances, seed),
        "encoders.technical" => technical_suite(instances, seed),
        "encoders.text" => text_suite(instances, seed),
        "encoders.macro" => macro_suite(instances, seed),
        "encoders.event" => event_suite(instances, seed),
        "fusion.model" => model_suite(instances, seed),
        other => Err(Error::Input(format!(
            "unknown gradient suite '{other}' (have: {})",
            SUITES.join(", ")
        ))),
    }
}

/// Run every suite.
pub fn run_all(instances: usize, seed: u64) -> Result<Vec<SuiteCase>> {
    let mut out = Vec::new();
    for name in SUITES {
        out.extend(run_suite(name, instances, seed)?);
    }
    Ok(out)
}

// ── random-tensor helpers ───────────────────────────────────────────────

fn rng(seed: u64, label: &str) -> ChaCha8Rng {
    init::rng_for(seed, label)
}

fn rvals(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

fn rt(r: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, rvals(r, n, lo, hi)).expect("consistent random shape")
}

/// Random values with |v| ∈ [min_abs, max_abs], for kinked activations
/// where a finite-difference probe must not cross zero.
fn rt_off_zero(r: &mut ChaCha8Rng, shape: Vec<usize>, min_abs: f64, max_abs: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = r.gen_range(min_abs..max_abs);
            if r.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).expect("consistent random shape")
}

/// Contract `out` against the constant `c` into a scalar.
fn weighted(g: &mut Graph, out: NodeId, c: &Tensor) -> Result<NodeId> {
    let cn = g.constant(c.clone());
    let prod = g.mul(out, cn)?;
    g.sum_all(prod)
}

// ── the per-op suite ────────────────────────────────────────────────────

type LossFn = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>>;

struct Case {
    inputs: Vec<(String, Tensor)>,
    loss: LossFn,
}

impl Case {
    fn one(x: Tensor, loss: LossFn) -> Self {
        Case { inputs: vec![("x".into(), x)], loss }
    }
}

fn unary(r: &mut ChaCha8Rng, lo: f64, hi: f64, f: fn(&mut Graph, NodeId) -> Result<NodeId>) -> Case {
    let n = r.gen_range(2..9);
    let x = rt(r, vec![n], lo, hi);
    let c = rt(r, vec![n], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = f(g, ids[0])?;
        weighted(g, y, &c)
    }))
}

fn binary(r: &mut ChaCha8Rng, f: fn(&mut Graph, NodeId, NodeId) -> Result<NodeId>) -> Case {
    let (rows, cols) = (r.gen_range(1..4), r.gen_range(1..4));
    let a = rt(r, vec![rows, cols], -2.0, 2.0);
    let b = rt(r, vec![rows, cols], -2.0, 2.0);
    let c = rt(r, vec![rows, cols], -1.0, 1.0);
    Case {
        inputs: vec![("a".into(), a), ("b".into(), b)],
        loss: Box::new(move |g, ids| {
            let y = f(g, ids[0], ids[1])?;
            weighted(g, y, &c)
        }),
    }
}

fn case_add(r: &mut ChaCha8Rng) -> Case { binary(r, Graph::add) }
fn case_sub(r: &mut ChaCha8Rng) -> Case { binary(r, Graph::sub) }
fn case_mul(r: &mut ChaCha8Rng) -> Case { binary(r, Graph::mul) }

fn case_add_row(r: &mut ChaCha8Rng) -> Case {
    let (rows, cols) = (r.gen_range(1..5), r.gen_range(1..5));
    let m = rt(r, vec![rows, cols], -2.0, 2.0);
    let row = rt(r, vec![cols], -2.0, 2.0);
    let c = rt(r, vec![rows, cols], -1.0, 1.0);
    Case {
        inputs: vec![("m".into(), m), ("row".into(), row)],
        loss: Box::new(move |g, ids| {
            let y = g.add_row(ids[0], ids[1])?;
            weighted(g, y, &c)
        }),
    }
}

fn case_scale_rows(r: &mut ChaCha8Rng) -> Case {
    let (rows, cols) = (r.gen_range(1..5), r.gen_range(1..5));
    let m = rt(r, vec![rows, cols], -2.0, 2.0);
    let col = rt(r, vec![rows], -2.0, 2.0);
    let c = rt(r, vec![rows, cols], -1.0, 1.0);
    Case {
        inputs: vec![("m".into(), m), ("col".into(), col)],
        loss: Box::new(move |g, ids| {
            let y = g.scale_rows(ids[0], ids[1])?;
            weighted(g, y, &c)
        }),
    }
}

fn case_scale_by_scalar(r: &mut ChaCha8Rng) -> Case {
    let n = r.gen_range(2..7);
    let x = rt(r, vec![n], -2.0, 2.0);
    let s = rt(r, vec![1], -2.0, 2.0);
    let c = rt(r, vec![n], -1.0, 1.0);
    Case {
        inputs: vec![("x".into(), x), ("s".into(), s)],
        loss: Box::new(move |g, ids| {
            let y = g.scale_by_scalar(ids[0], ids[1])?;
            weighted(g, y, &c)
        }),
    }
}

fn case_matmul(r: &mut ChaCha8Rng) -> Case {
    let (m, k, n) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4));
    let a = rt(r, vec![m, k], -2.0, 2.0);
    let b = rt(r, vec![k, n], -2.0, 2.0);
    let c = rt(r, vec![m, n], -1.0, 1.0);
    Case {
        inputs: vec![("a".into(), a), ("b".into(), b)],
        loss: Box::new(move |g, ids| {
            let y = g.matmul(ids[0], ids[1])?;
            weighted(g, y, &c)
        }),
    }
}

fn case_transpose(r: &mut ChaCha8Rng) -> Case {
    let (rows, cols) = (r.gen_range(1..5), r.gen_range(1..5));
    let x = rt(r, vec![rows, cols], -2.0, 2.0);
    let c = rt(r, vec![cols, rows], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.transpose(ids[0])?;
        weighted(g, y, &c)
    }))
}

fn case_sigmoid(r: &mut ChaCha8Rng) -> Case { unary(r, -3.0, 3.0, Graph::sigmoid) }
fn case_tanh(r: &mut ChaCha8Rng) -> Case { unary(r, -3.0, 3.0, Graph::tanh) }
fn case_exp(r: &mut ChaCha8Rng) -> Case { unary(r, -2.0, 2.0, Graph::exp) }
fn case_ln(r: &mut ChaCha8Rng) -> Case { unary(r, 0.2, 3.0, Graph::ln) }
fn case_elu(r: &mut ChaCha8Rng) -> Case { unary(r, -3.0, 3.0, Graph::elu) }
fn case_gelu(r: &mut ChaCha8Rng) -> Case { unary(r, -3.0, 3.0, Graph::gelu) }

fn case_leaky_relu(r: &mut ChaCha8Rng) -> Case {
    let n = r.gen_range(2..9);
    let slope = *[0.01, 0.2].get(r.gen_range(0..2)).unwrap();
    let x = rt_off_zero(r, vec![n], 0.05, 2.0);
    let c = rt(r, vec![n], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.leaky_relu(ids[0], slope)?;
        weighted(g, y, &c)
    }))
}

fn case_affine(r: &mut ChaCha8Rng) -> Case {
    let n = r.gen_range(2..9);
    let (a, b) = (r.gen_range(-2.0..2.0), r.gen_range(-1.0..1.0));
    let x = rt(r, vec![n], -2.0, 2.0);
    let c = rt(r, vec![n], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.affine(ids[0], a, b)?;
        weighted(g, y, &c)
    }))
}

fn case_pow_const(r: &mut ChaCha8Rng) -> Case {
    // Whole exponents anywhere off zero; fractional and negative ones only
    // on the positive axis where they are defined.
    let n = r.gen_range(2..7);
    let (p, x) = match r.gen_range(0..4) {
        0 => (2.0, rt_off_zero(r, vec![n], 0.1, 2.0)),
        1 => (3.0, rt_off_zero(r, vec![n], 0.1, 2.0)),
        2 => (0.5, rt(r, vec![n], 0.2, 2.0)),
        _ => (-1.0, rt(r, vec![n], 0.5, 2.0)),
    };
    let c = rt(r, vec![x.numel()], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.pow_const(ids[0], p)?;
        weighted(g, y, &c)
    }))
}

fn case_sum_all(r: &mut ChaCha8Rng) -> Case {
    let (rows, cols) = (r.gen_range(1..4), r.gen_range(1..4));
    let x = rt(r, vec![rows, cols], -2.0, 2.0);
    let c = rt(r, vec![1], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.sum_all(ids[0])?;
        weighted(g, y, &c)
    }))
}

fn case_mean_all(r: &mut ChaCha8Rng) -> Case {
    let (rows, cols) = (r.gen_range(1..4), r.gen_range(1..4));
    let x = rt(r, vec![rows, cols], -2.0, 2.0);
    let c = rt(r, vec![1], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.mean_all(ids[0])?;
        weighted(g, y, &c)
    }))
}

fn case_mean_axis0(r: &mut ChaCha8Rng) -> Case {
    let (rows, cols) = (r.gen_range(1..5), r.gen_range(1..5));
    let x = rt(r, vec![rows, cols], -2.0, 2.0);
    let c = rt(r, vec![cols], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.mean_axis0(ids[0])?;
        weighted(g, y, &c)
    }))
}

fn case_dot(r: &mut ChaCha8Rng) -> Case {
    let n = r.gen_range(2..7);
    let a = rt(r, vec![n], -2.0, 2.0);
    let b = rt(r, vec![n], -2.0, 2.0);
    let c = rt(r, vec![1], -1.0, 1.0);
    Case {
        inputs: vec![("a".into(), a), ("b".into(), b)],
        loss: Box::new(move |g, ids| {
            let y = g.dot(ids[0], ids[1])?;
            weighted(g, y, &c)
        }),
    }
}

fn case_reshape(r: &mut ChaCha8Rng) -> Case {
    let (rows, cols) = (r.gen_range(1..5), r.gen_range(1..5));
    let x = rt(r, vec![rows, cols], -2.0, 2.0);
    let flat = r.gen_bool(0.5);
    let c = if flat {
        rt(r, vec![rows * cols], -1.0, 1.0)
    } else {
        rt(r, vec![cols, rows], -1.0, 1.0)
    };
    Case::one(x, Box::new(move |g, ids| {
        let y = g.reshape(ids[0], c.shape.clone())?;
        weighted(g, y, &c)
    }))
}

fn case_slice_rows(r: &mut ChaCha8Rng) -> Case {
    let (rows, cols) = (r.gen_range(2..6), r.gen_range(1..4));
    let start = r.gen_range(0..rows - 1);
    let len = r.gen_range(1..=rows - start);
    let x = rt(r, vec![rows, cols], -2.0, 2.0);
    let c = rt(r, vec![len, cols], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.slice_rows(ids[0], start, len)?;
        weighted(g, y, &c)
    }))
}

fn case_slice_cols(r: &mut ChaCha8Rng) -> Case {
    let (rows, cols) = (r.gen_range(1..4), r.gen_range(2..6));
    let start = r.gen_range(0..cols - 1);
    let len = r.gen_range(1..=cols - start);
    let x = rt(r, vec![rows, cols], -2.0, 2.0);
    let c = rt(r, vec![rows, len], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.slice_cols(ids[0], start, len)?;
        weighted(g, y, &c)
    }))
}

fn case_row(r: &mut ChaCha8Rng) -> Case {
    let (rows, cols) = (r.gen_range(1..5), r.gen_range(1..5));
    let i = r.gen_range(0..rows);
    let x = rt(r, vec![rows, cols], -2.0, 2.0);
    let c = rt(r, vec![cols], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.row(ids[0], i)?;
        weighted(g, y, &c)
    }))
}

fn case_concat_cols(r: &mut ChaCha8Rng) -> Case {
    let rows = r.gen_range(1..4);
    let (c1, c2) = (r.gen_range(1..4), r.gen_range(1..4));
    let a = rt(r, vec![rows, c1], -2.0, 2.0);
    let b = rt(r, vec![rows, c2], -2.0, 2.0);
    let c = rt(r, vec![rows, c1 + c2], -1.0, 1.0);
    Case {
        inputs: vec![("a".into(), a), ("b".into(), b)],
        loss: Box::new(move |g, ids| {
            let y = g.concat_cols(&[ids[0], ids[1]])?;
            weighted(g, y, &c)
        }),
    }
}

fn case_concat_vec(r: &mut ChaCha8Rng) -> Case {
    let (n1, n2) = (r.gen_range(1..5), r.gen_range(1..5));
    let a = rt(r, vec![n1], -2.0, 2.0);
    let b = rt(r, vec![n2], -2.0, 2.0);
    let c = rt(r, vec![n1 + n2], -1.0, 1.0);
    Case {
        inputs: vec![("a".into(), a), ("b".into(), b)],
        loss: Box::new(move |g, ids| {
            let y = g.concat_vec(&[ids[0], ids[1]])?;
            weighted(g, y, &c)
        }),
    }
}

fn case_select(r: &mut ChaCha8Rng) -> Case {
    let n = r.gen_range(2..7);
    let i = r.gen_range(0..n);
    let x = rt(r, vec![n], -2.0, 2.0);
    let c = rt(r, vec![1], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.select(ids[0], i)?;
        weighted(g, y, &c)
    }))
}

fn case_softmax(r: &mut ChaCha8Rng) -> Case {
    let n = r.gen_range(2..7);
    let x = rt(r, vec![n], -2.0, 2.0);
    let c = rt(r, vec![n], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.softmax(ids[0])?;
        weighted(g, y, &c)
    }))
}

fn case_softmax_causal(r: &mut ChaCha8Rng) -> Case {
    let t = r.gen_range(2..5);
    let x = rt(r, vec![t, t], -2.0, 2.0);
    let c = rt(r, vec![t, t], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.softmax_causal(ids[0])?;
        weighted(g, y, &c)
    }))
}

fn case_segment_softmax(r: &mut ChaCha8Rng) -> Case {
    let n = r.gen_range(4..9);
    let segments = Rc::new((0..n).map(|_| r.gen_range(0..3usize)).collect::<Vec<_>>());
    let x = rt(r, vec![n], -2.0, 2.0);
    let c = rt(r, vec![n], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.segment_softmax(ids[0], Rc::clone(&segments))?;
        weighted(g, y, &c)
    }))
}

fn case_gather_rows(r: &mut ChaCha8Rng) -> Case {
    let (rows, cols) = (r.gen_range(2..5), r.gen_range(1..4));
    let k = r.gen_range(2..6);
    // Repeats on purpose: gathered gradients must accumulate.
    let idx = Rc::new((0..k).map(|_| r.gen_range(0..rows)).collect::<Vec<_>>());
    let x = rt(r, vec![rows, cols], -2.0, 2.0);
    let c = rt(r, vec![k, cols], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.gather_rows(ids[0], Rc::clone(&idx))?;
        weighted(g, y, &c)
    }))
}

fn case_scatter_add_rows(r: &mut ChaCha8Rng) -> Case {
    let (k, cols) = (r.gen_range(2..6), r.gen_range(1..4));
    let n_rows = r.gen_range(2..5);
    let idx = Rc::new((0..k).map(|_| r.gen_range(0..n_rows)).collect::<Vec<_>>());
    let x = rt(r, vec![k, cols], -2.0, 2.0);
    let c = rt(r, vec![n_rows, cols], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.scatter_add_rows(ids[0], Rc::clone(&idx), n_rows)?;
        weighted(g, y, &c)
    }))
}

fn case_dilated_conv(r: &mut ChaCha8Rng) -> Case {
    let (t, cin, cout) = (r.gen_range(4..9), r.gen_range(1..3), r.gen_range(1..3));
    let k = r.gen_range(1..3);
    let dilation = r.gen_range(1..3);
    let x = rt(r, vec![t, cin], -2.0, 2.0);
    let w = rt(r, vec![k, cin, cout], -2.0, 2.0);
    let c = rt(r, vec![t, cout], -1.0, 1.0);
    Case {
        inputs: vec![("x".into(), x), ("w".into(), w)],
        loss: Box::new(move |g, ids| {
            let y = g.dilated_conv(ids[0], ids[1], dilation)?;
            weighted(g, y, &c)
        }),
    }
}

fn case_haar_approx(r: &mut ChaCha8Rng) -> Case {
    let levels = r.gen_range(1..3);
    let rows = (1 << levels) * r.gen_range(1..3);
    let cols = r.gen_range(1..4);
    let x = rt(r, vec![rows, cols], -2.0, 2.0);
    let c = rt(r, vec![rows >> levels, cols], -1.0, 1.0);
    Case::one(x, Box::new(move |g, ids| {
        let y = g.haar_approx(ids[0], levels)?;
        weighted(g, y, &c)
    }))
}

fn case_layer_norm(r: &mut ChaCha8Rng) -> Case {
    let (rows, cols) = (r.gen_range(1..4), r.gen_range(3..7));
    let x = rt(r, vec![rows, cols], -2.0, 2.0);
    let gain = rt(r, vec![cols], 0.5, 1.5);
    let bias = rt(r, vec![cols], -0.5, 0.5);
    let c = rt(r, vec![rows, cols], -1.0, 1.0);
    Case {
        inputs: vec![("x".into(), x), ("gain".into(), gain), ("bias".into(), bias)],
        loss: Box::new(move |g, ids| {
            let y = g.layer_norm(ids[0], ids[1], ids[2], 1e-5)?;
            weighted(g, y, &c)
        }),
    }
}

fn case_linear(r: &mut ChaCha8Rng) -> Case {
    let (rows, d_in, d_out) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4));
    let x = rt(r, vec![rows, d_in], -2.0, 2.0);
    let w = rt(r, vec![d_in, d_out], -2.0, 2.0);
    let b = rt(r, vec![d_out], -1.0, 1.0);
    let c = rt(r, vec![rows, d_out], -1.0, 1.0);
    Case {
        inputs: vec![("x".into(), x), ("w".into(), w), ("b".into(), b)],
        loss: Box::new(move |g, ids| {
            let y = g.linear(ids[0], ids[1], ids[2])?;
            weighted(g, y, &c)
        }),
    }
}

const OP_CASES: &[(&str, fn(&mut ChaCha8Rng) -> Case)] = &[
    ("add", case_add),
    ("sub", case_sub),
    ("mul", case_mul),
    ("add_row", case_add_row),
    ("scale_rows", case_scale_rows),
    ("scale_by_scalar", case_scale_by_scalar),
    ("matmul", case_matmul),
    ("transpose", case_transpose),
    ("sigmoid", case_sigmoid),
    ("tanh", case_tanh),
    ("exp", case_exp),
    ("ln", case_ln),
    ("leaky_relu", case_leaky_relu),
    ("elu", case_elu),
    ("gelu", case_gelu),
    ("affine", case_affine),
    ("pow_const", case_pow_const),
    ("sum_all", case_sum_all),
    ("mean_all", case_mean_all),
    ("mean_axis0", case_mean_axis0),
    ("dot", case_dot),
    ("reshape", case_reshape),
    ("slice_rows", case_slice_rows),
    ("slice_cols", case_slice_cols),
    ("row", case_row),
    ("concat_cols", case_concat_cols),
    ("concat_vec", case_concat_vec),
    ("select", case_select),
    ("softmax", case_softmax),
    ("softmax_causal", case_softmax_causal),
    ("segment_softmax", case_segment_softmax),
    ("gather_rows", case_gather_rows),
    ("scatter_add_rows", case_scatter_add_rows),
    ("dilated_conv", case_dilated_conv),
    ("haar_approx", case_haar_approx),
    ("layer_norm", case_layer_norm),
    ("linear", case_linear),
];

fn ops_suite(instances: usize, seed: u64) -> Result<Vec<SuiteCase>> {
    let mut out = Vec::new();
    for (op, build) in OP_CASES {
        for k in 0..instances {
            let mut r = rng(seed, &format!("suite.ops.{op}.{k}"));
            let case = build(&mut r);
            let refs: Vec<(&str, &Tensor)> =
                case.inputs.iter().map(|(n, t)| (n.as_str(), t)).collect();
            let reports = grad_check_multi(&refs, |g, ids| (case.loss)(g, ids))?;
            out.extend(reports.into_iter().map(|report| SuiteCase {
                suite: "numerics.ops",
                case: format!("{op}[{k}]"),
                report,
            }));
        }
    }
    Ok(out)
}

// ── composite suites ────────────────────────────────────────────────────

fn suite_cfg() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.d_model = 4;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.ff_mult = 2;
    cfg.lookback = 4;
    cfg.tech_lookback = 8;
    cfg.wavelet_levels = 2;
    cfg.conv_channels = 2;
    cfg.text_vocab = 16;
    cfg.text_max_len = 6;
    cfg.macro_lookback = 4;
    cfg.macro_hidden = 3;
    cfg.gat_layers = 1;
    cfg.gat_heads = 2;
    cfg.gat_hidden = 3;
    cfg.window_stride = 4;
    cfg.class_horizon = 2;
    cfg
}

fn collect(
    suite: &'static str,
    k: usize,
    reports: Vec<GradCheckReport>,
    out: &mut Vec<SuiteCase>,
) {
    out.extend(reports.into_iter().map(|report| SuiteCase {
        suite,
        case: format!("window[{k}]"),
        report,
    }));
}

fn technical_suite(instances: usize, seed: u64) -> Result<Vec<SuiteCase>> {
    let cfg = suite_cfg();
    let mut out = Vec::new();
    for k in 0..instances {
        let mut r = rng(seed, &format!("suite.technical.{k}"));
        let mut store = ParamStore::new();
        technical::init_params(&mut store, &cfg, r.gen());
        let window = rt(&mut r, vec![cfg.tech_lookback, 5], -2.0, 2.0);
        let c = rt(&mut r, vec![cfg.d_model], -1.0, 1.0);
        let reports = grad_check_store(&store, &[("window", &window)], |g, params, extras| {
            let y = technical::encode_technical(g, params, &cfg, extras[0])?;
            weighted(g, y, &c)
        })?;
        collect("encoders.technical", k, reports, &mut out);
    }
    Ok(out)
}

fn text_suite(instances: usize, seed: u64) -> Result<Vec<SuiteCase>> {
    let cfg = suite_cfg();
    let mut out = Vec::new();
    for k in 0..instances {
        let mut r = rng(seed, &format!("suite.text.{k}"));
        let mut store = ParamStore::new();
        text::init_params(&mut store, &cfg, r.gen());
        let n = r.gen_range(2..=cfg.text_max_len);
        let ids = (0..n).map(|_| r.gen_range(0..cfg.text_vocab)).collect();
        let toks = TokenSequence::new(ids, cfg.text_vocab)?;
        let query = rt(&mut r, vec![cfg.d_model], -1.0, 1.0);
        let c = rt(&mut r, vec![cfg.d_model], -1.0, 1.0);
        let reports = grad_check_store(&store, &[("query", &query)], |g, params, extras| {
            let y = text::encode_text(g, params, &cfg, &toks, extras[0])?;
            weighted(g, y, &c)
        })?;
        collect("encoders.text", k, reports, &mut out);
    }
    Ok(out)
}

fn macro_suite(instances: usize, seed: u64) -> Result<Vec<SuiteCase>> {
    let cfg = suite_cfg();
    let mut out = Vec::new();
    for k in 0..instances {
        let mut r = rng(seed, &format!("suite.macro.{k}"));
        let q = r.gen_range(1..4);
        let mut store = ParamStore::new();
        macro_channel::init_params(&mut store, &cfg, r.gen(), q);
        let values = rt(&mut r, vec![cfg.macro_lookback, q], -2.0, 2.0);
        let staleness = rt(&mut r, vec![cfg.macro_lookback, q], 0.0, 30.0);
        let panel = MacroPanel::new(values.clone(), staleness)?;
        let recency = panel.recency_weights(cfg.rho);
        let c = rt(&mut r, vec![cfg.d_model], -1.0, 1.0);
        let reports = grad_check_store(&store, &[("values", &values)], |g, params, extras| {
            let rec = g.constant(recency.clone());
            let y = macro_channel::encode_macro(g, params, &cfg, extras[0], rec)?;
            weighted(g, y, &c)
        })?;
        collect("encoders.macro", k, reports, &mut out);
    }
    Ok(out)
}

fn event_suite(instances: usize, seed: u64) -> Result<Vec<SuiteCase>> {
    let cfg = suite_cfg();
    let mut out = Vec::new();
    for k in 0..instances {
        let mut r = rng(seed, &format!("suite.event.{k}"));
        let m = r.gen_range(2..5);
        let n_types = 2;
        let feat_dim = r.gen_range(0..2);
        let nodes: Vec<EventNode> = (0..m)
            .map(|i| EventNode {
                // Non-contiguous ids so index bookkeeping gets exercised.
                id: 10 + 3 * i,
                type_id: r.gen_range(0..n_types),
                ordinal: 2 * i + r.gen_range(0..2),
                features: rvals(&mut r, feat_dim, -1.0, 1.0),
            })
            .collect();
        let mut edges = Vec::new();
        for w in nodes.windows(2) {
            edges.push((w[0].id, w[1].id, 1));
        }
        if m > 2 && r.gen_bool(0.5) {
            edges.push((nodes[0].id, nodes[m - 1].id, 2));
        }
        let day = nodes.iter().map(|n| n.ordinal).max().unwrap() + r.gen_range(0..3);
        let graph = EventGraph::new(nodes, edges)?;
        let mut store = ParamStore::new();
        event::init_params(&mut store, &cfg, r.gen(), n_types, feat_dim);
        let c = rt(&mut r, vec![cfg.d_model], -1.0, 1.0);
        let reports = grad_check_store(&store, &[], |g, params, _| {
            let y = event::event2vec(g, params, &cfg, &graph, day)?;
            weighted(g, y, &c)
        })?;
        collect("encoders.event", k, reports, &mut out);
    }
    Ok(out)
}

fn model_suite(instances: usize, seed: u64) -> Result<Vec<SuiteCase>> {
    let cfg = suite_cfg();
    let mut out = Vec::new();
    for k in 0..instances {
        let mut r = rng(seed, &format!("suite.model.{k}"));
        let ds = generate(&GenSpec {
            seed: r.gen(),
            n_symbols: 1,
            n_days: 60,
            event_types: vec![EventTypeSpec::new("Shock", 0.05, 5.0)],
            planted_events: vec![(5, 0), (12, 0)],
            ..GenSpec::default()
        })?;
        let plan = SamplePlan::prepare(&ds, &cfg)?;
        let model = Model::init(&cfg, plan.dims(), r.gen())?;
        let view = MarketView {
            calendar: &ds.calendar,
            timeline: &plan.timeline,
            events: &ds.events,
        };
        let spec = plan.train[r.gen_range(0..plan.train.len())];
        let sample = plan.materialize(&spec)?;
        let cy = rt(&mut r, vec![1], -1.0, 1.0);
        let cl = rt(&mut r, vec![3], -1.0, 1.0);
        let reports = grad_check_store(&model.store, &[], |g, params, _| {
            let pred = forward_window(g, params, &cfg, &view, &sample, &[])?;
            let wy = weighted(g, pred.y_hat, &cy)?;
            let wl = weighted(g, pred.class_logits, &cl)?;
            g.add(wy, wl)
        })?;
        collect("fusion.model", k, reports, &mut out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_suite_covers_every_op_and_passes() {
        let cases = run_suite("numerics.ops", 2, 11).unwrap();
        for (op, _) in OP_CASES {
            assert!(
                cases.iter().any(|c| c.case.starts_with(&format!("{op}["))),
                "no case recorded for {op}"
            );
        }
        let bad = failures(&cases);
        assert!(bad.is_empty(), "failures: {:?}", bad.iter().map(|c| c.to_string()).collect::<Vec<_>>());
    }

    #[test]
    fn composite_suites_pass() {
        for suite in &["encoders.technical", "encoders.text", "encoders.macro", "encoders.event"] {
            let cases = run_suite(suite, 1, 5).unwrap();
            assert!(!cases.is_empty());
            let bad = failures(&cases);
            assert!(bad.is_empty(), "{suite} failures: {:?}", bad.iter().map(|c| c.to_string()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn whole_model_gradients_check_out() {
        let cases = run_suite("fusion.model", 1, 3).unwrap();
        assert!(cases.len() > 20, "expected one report per parameter tensor");
        let bad = failures(&cases);
        assert!(bad.is_empty(), "failures: {:?}", bad.iter().map(|c| c.to_string()).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(run_suite("nope", 1, 1).is_err());
    }
}
