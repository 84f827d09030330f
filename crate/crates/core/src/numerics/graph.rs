//! Record-then-reverse computation graph.
//!
//! Every differentiable operation appends a node to the graph; `backward`
//! walks the recording in reverse and accumulates gradients into the leaf
//! tensors. Recording is single-threaded; finished graphs are read-only.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Handle into a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Sigmoid,
    Tanh,
    Exp,
    Ln,
    LeakyRelu(f64),
    Elu,
    Gelu,
    /// `a * x + b`
    Affine(f64, f64),
    /// `x^p` with constant exponent
    PowConst(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[r,c] + [c]` broadcast over rows
    AddRow(NodeId, NodeId),
    /// `[r,c] * [r]` per-row scaling
    ScaleRows(NodeId, NodeId),
    /// `x * s` with scalar tensor `s`
    ScaleByScalar(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Unary(UnaryKind, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Column means of `[r,c]` -> `[c]`
    MeanAxis0(NodeId),
    Reshape(NodeId),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    ConcatCols(Vec<NodeId>),
    /// Concatenate rank-1 tensors end to end
    ConcatVec(Vec<NodeId>),
    /// Single element of a rank-1 tensor -> `[1]`
    Select(NodeId, usize),
    /// Stable softmax along the last axis (rank 1 or per row of rank 2)
    Softmax(NodeId),
    /// Row i of `[T,T]` softmaxed over columns `0..=i`, exact zeros above
    SoftmaxCausal(NodeId),
    /// Per-segment stable softmax of a rank-1 tensor
    SegmentSoftmax(NodeId, Rc<Vec<usize>>),
    GatherRows(NodeId, Rc<Vec<usize>>),
    /// Rows of `src` added into `out[idx[t]]`; row count lives in the output shape
    ScatterAddRows(NodeId, Rc<Vec<usize>>),
    /// Causal dilated convolution over `[L,Cin]` with kernel `[k,Cin,Cout]`
    DilatedConv {
        x: NodeId,
        w: NodeId,
        dilation: usize,
    },
    /// Orthonormal Haar low-pass cascade along axis 0, `levels` times
    HaarApprox(NodeId, usize),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
}

struct Node {
    tensor: Tensor,
    op: Op,
    /// true when this node can influence a gradient-requiring leaf
    track: bool,
}

/// Recorded computation graph over [`Tensor`] values.
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf tensor. Gradients accumulate into it if `requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        let track = tensor.requires_grad;
        self.push_node(tensor, Op::Leaf, track)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        let mut t = tensor;
        t.requires_grad = false;
        self.push_node(t, Op::Leaf, false)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> NodeId {
        self.constant(Tensor::from_vec(data))
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].tensor.data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    /// Gradient of the last `backward` loss w.r.t. this node, if tracked.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    fn push_node(&mut self, tensor: Tensor, op: Op, track: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { tensor, op, track });
        id
    }

    fn record(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<NodeId> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(format!("forward op {op_name}")));
        }
        let track = self.op_inputs(&op).iter().any(|i| self.nodes[i.0].track);
        let tensor = Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push_node(tensor, op, track))
    }

    fn op_inputs(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ScaleRows(a, b)
            | Op::ScaleByScalar(a, b)
            | Op::MatMul(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Unary(_, a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::MeanAxis0(a)
            | Op::Reshape(a)
            | Op::SliceRows(a, _, _)
            | Op::SliceCols(a, _, _)
            | Op::Select(a, _)
            | Op::Softmax(a)
            | Op::SoftmaxCausal(a)
            | Op::SegmentSoftmax(a, _)
            | Op::GatherRows(a, _)
            | Op::ScatterAddRows(a, _)
            | Op::HaarApprox(a, _) => vec![*a],
            Op::ConcatCols(xs) | Op::ConcatVec(xs) => xs.clone(),
            Op::DilatedConv { x, w, .. } => vec![*x, *w],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
        }
    }

    // ── elementwise ────────────────────────────────────────────────────

    fn binary_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        self.record("add", self.shape(a).to_vec(), data, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x - y)
            .collect();
        self.record("sub", self.shape(a).to_vec(), data, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        self.record("mul", self.shape(a).to_vec(), data, Op::Mul(a, b))
    }

    /// `[r,c] + [c]`, the usual bias broadcast.
    pub fn add_row(&mut self, mat: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(mat).dims2()?;
        if self.shape(row) != [c] {
            return Err(Error::shape(
                "add_row",
                format!("matrix [{r},{c}] vs row {:?}", self.shape(row)),
            ));
        }
        let m = self.data(mat);
        let v = self.data(row);
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[i * c + j] + v[j]);
            }
        }
        self.record("add_row", vec![r, c], data, Op::AddRow(mat, row))
    }

    /// `out[i,j] = mat[i,j] * col[i]`.
    pub fn scale_rows(&mut self, mat: NodeId, col: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(mat).dims2()?;
        if self.shape(col) != [r] {
            return Err(Error::shape(
                "scale_rows",
                format!("matrix [{r},{c}] vs col {:?}", self.shape(col)),
            ));
        }
        let m = self.data(mat);
        let v = self.data(col);
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[i * c + j] * v[i]);
            }
        }
        self.record("scale_rows", vec![r, c], data, Op::ScaleRows(mat, col))
    }

    /// Multiply a tensor by a `[1]` scalar tensor; gradients flow to both.
    pub fn scale_by_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if !self.value(s).is_scalar() {
            return Err(Error::shape(
                "scale_by_scalar",
                format!("scale must be [1], got {:?}", self.shape(s)),
            ));
        }
        let sv = self.data(s)[0];
        let data = self.data(x).iter().map(|v| v * sv).collect();
        self.record(
            "scale_by_scalar",
            self.shape(x).to_vec(),
            data,
            Op::ScaleByScalar(x, s),
        )
    }

    // ── linear algebra ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("[{m},{k}] x [{k2},{n}] inner dimensions disagree"),
            ));
        }
        let data = matmul_kernel(self.data(a), self.data(b), m, k, n);
        self.record("matmul", vec![m, n], data, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        let data = transpose_kernel(self.data(x), r, c);
        self.record("transpose", vec![c, r], data, Op::Transpose(x))
    }

    // ── unary ──────────────────────────────────────────────────────────

    pub fn unary(&mut self, kind: UnaryKind, x: NodeId) -> Result<NodeId> {
        let data = self.data(x).iter().map(|&v| unary_forward(kind, v)).collect();
        self.record("unary", self.shape(x).to_vec(), data, Op::Unary(kind, x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Ln, x)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.unary(UnaryKind::LeakyRelu(slope), x)
    }

    pub fn elu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Elu, x)
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Gelu, x)
    }

    /// `a * x + b` elementwise with constants.
    pub fn affine(&mut self, x: NodeId, a: f64, b: f64) -> Result<NodeId> {
        self.unary(UnaryKind::Affine(a, b), x)
    }

    pub fn pow_const(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        self.unary(UnaryKind::PowConst(p), x)
    }

    // ── reductions ─────────────────────────────────────────────────────

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.data(x).iter().sum();
        self.record("sum_all", vec![1], vec![s], Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::shape("mean_all", "empty tensor"));
        }
        let s: f64 = self.data(x).iter().sum::<f64>() / n as f64;
        self.record("mean_all", vec![1], vec![s], Op::MeanAll(x))
    }

    /// Column means of a matrix: `[r,c] -> [c]`.
    pub fn mean_axis0(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        if r == 0 {
            return Err(Error::shape("mean_axis0", "zero rows"));
        }
        let m = self.data(x);
        let mut data = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                data[j] += m[i * c + j];
            }
        }
        for v in &mut data {
            *v /= r as f64;
        }
        self.record("mean_axis0", vec![c], data, Op::MeanAxis0(x))
    }

    /// Scalar dot product of two equal-length rank-1 tensors.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let p = self.mul(a, b)?;
        self.sum_all(p)
    }

    // ── shape ──────────────────────────────────────────────────────────

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(x), shape),
            ));
        }
        let data = self.data(x).to_vec();
        self.record("reshape", shape, data, Op::Reshape(x))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        if start + len > r {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of [{r},{c}]", start + len),
            ));
        }
        let data = self.data(x)[start * c..(start + len) * c].to_vec();
        self.record("slice_rows", vec![len, c], data, Op::SliceRows(x, start, len))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        if start + len > c {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {start}..{} of [{r},{c}]", start + len),
            ));
        }
        let m = self.data(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&m[i * c + start..i * c + start + len]);
        }
        self.record("slice_cols", vec![r, len], data, Op::SliceCols(x, start, len))
    }

    /// Row `i` of a matrix as a rank-1 tensor.
    pub fn row(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        let (_, c) = self.value(x).dims2()?;
        let sliced = self.slice_rows(x, i, 1)?;
        self.reshape(sliced, vec![c])
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::shape("concat_cols", "empty input list"));
        }
        let (r, _) = self.value(xs[0]).dims2()?;
        let mut cols = Vec::with_capacity(xs.len());
        for &x in xs {
            let (ri, ci) = self.value(x).dims2()?;
            if ri != r {
                return Err(Error::shape("concat_cols", "row counts differ"));
            }
            cols.push(ci);
        }
        let total: usize = cols.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&x, &ci) in xs.iter().zip(&cols) {
                let m = self.data(x);
                data.extend_from_slice(&m[i * ci..(i + 1) * ci]);
            }
        }
        self.record("concat_cols", vec![r, total], data, Op::ConcatCols(xs.to_vec()))
    }

    /// Concatenate rank-1 tensors (scalars count as length 1).
    pub fn concat_vec(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::shape("concat_vec", "empty input list"));
        }
        let mut data = Vec::new();
        for &x in xs {
            if self.shape(x).len() != 1 {
                return Err(Error::shape("concat_vec", "inputs must be rank 1"));
            }
            data.extend_from_slice(self.data(x));
        }
        let n = data.len();
        self.record("concat_vec", vec![n], data, Op::ConcatVec(xs.to_vec()))
    }

    /// Element `i` of a rank-1 tensor as a `[1]` tensor.
    pub fn select(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        if self.shape(x).len() != 1 || i >= self.value(x).numel() {
            return Err(Error::shape(
                "select",
                format!("index {i} of {:?}", self.shape(x)),
            ));
        }
        let v = self.data(x)[i];
        self.record("select", vec![1], vec![v], Op::Select(x, i))
    }

    // ── softmax family ─────────────────────────────────────────────────

    /// Numerically stable softmax along the last axis (rank 1 or 2).
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let (rows, cols) = match shape.len() {
            1 => (1, shape[0]),
            2 => (shape[0], shape[1]),
            _ => {
                return Err(Error::shape(
                    "softmax",
                    format!("rank 1 or 2 expected, got {:?}", shape),
                ))
            }
        };
        if cols == 0 {
            return Err(Error::shape("softmax", "empty axis"));
        }
        if !self.value(x).all_finite() {
            return Err(Error::numeric("softmax input"));
        }
        let m = self.data(x);
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            softmax_row(&m[i * cols..(i + 1) * cols], &mut data[i * cols..(i + 1) * cols]);
        }
        self.record("softmax", shape, data, Op::Softmax(x))
    }

    /// Causal row softmax of `[T,T]` scores: row `i` normalizes over
    /// columns `0..=i`; columns above the diagonal are exactly zero.
    pub fn softmax_causal(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        if r != c {
            return Err(Error::shape("softmax_causal", format!("square expected, got [{r},{c}]")));
        }
        let m = self.data(x);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            softmax_row(&m[i * c..i * c + i + 1], &mut data[i * c..i * c + i + 1]);
        }
        self.record("softmax_causal", vec![r, c], data, Op::SoftmaxCausal(x))
    }

    /// Per-segment stable softmax of a rank-1 tensor. `segments[t]` names the
    /// group of element `t`; normalization runs within each group.
    pub fn segment_softmax(&mut self, x: NodeId, segments: Rc<Vec<usize>>) -> Result<NodeId> {
        let n = self.value(x).numel();
        if self.shape(x).len() != 1 || segments.len() != n {
            return Err(Error::shape(
                "segment_softmax",
                format!("{n} elements vs {} segment ids", segments.len()),
            ));
        }
        let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
        let m = self.data(x);
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (v, &s) in m.iter().zip(segments.iter()) {
            if *v > max[s] {
                max[s] = *v;
            }
        }
        let mut denom = vec![0.0; n_seg];
        let mut data = vec![0.0; n];
        for (t, (&v, &s)) in m.iter().zip(segments.iter()).enumerate() {
            let e = (v - max[s]).exp();
            data[t] = e;
            denom[s] += e;
        }
        for (t, &s) in segments.iter().enumerate() {
            data[t] /= denom[s];
        }
        self.record("segment_softmax", vec![n], data, Op::SegmentSoftmax(x, segments))
    }

    // ── gather / scatter ───────────────────────────────────────────────

    /// Rows `idx` of a matrix; the embedding-lookup primitive.
    pub fn gather_rows(&mut self, x: NodeId, idx: Rc<Vec<usize>>) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Input(format!("gather_rows index {bad} out of range 0..{r}")));
        }
        let m = self.data(x);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(&m[i * c..(i + 1) * c]);
        }
        let k = idx.len();
        self.record("gather_rows", vec![k, c], data, Op::GatherRows(x, idx))
    }

    /// Scatter-add rows of `src` into a fresh `[n_rows, c]` output at `idx`.
    pub fn scatter_add_rows(&mut self, src: NodeId, idx: Rc<Vec<usize>>, n_rows: usize) -> Result<NodeId> {
        let (e, c) = self.value(src).dims2()?;
        if idx.len() != e {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("{e} rows vs {} indices", idx.len()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_rows) {
            return Err(Error::Input(format!(
                "scatter_add_rows index {bad} out of range 0..{n_rows}"
            )));
        }
        let m = self.data(src);
        let mut data = vec![0.0; n_rows * c];
        for (t, &i) in idx.iter().enumerate() {
            for j in 0..c {
                data[i * c + j] += m[t * c + j];
            }
        }
        self.record(
            "scatter_add_rows",
            vec![n_rows, c],
            data,
            Op::ScatterAddRows(src, idx),
        )
    }

    // ── structured signal ops ──────────────────────────────────────────

    /// Causal dilated convolution. `out[t,o] = Σ_j Σ_ci w[j,ci,o] · x[t - j·d, ci]`
    /// with zero padding on the left; tap `j` looks `j·d` steps back.
    pub fn dilated_conv(&mut self, x: NodeId, w: NodeId, dilation: usize) -> Result<NodeId> {
        if dilation < 1 {
            return Err(Error::param("dilation", "must be >= 1"));
        }
        let (l, c_in) = self.value(x).dims2()?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != c_in {
            return Err(Error::shape(
                "dilated_conv",
                format!("kernel {:?} incompatible with input [{l},{c_in}]", ws),
            ));
        }
        let (k, c_out) = (ws[0], ws[2]);
        let xv = self.data(x);
        let wv = self.data(w);
        let mut data = vec![0.0; l * c_out];
        for t in 0..l {
            for j in 0..k {
                let back = j * dilation;
                if back > t {
                    break;
                }
                let s = t - back;
                for ci in 0..c_in {
                    let xval = xv[s * c_in + ci];
                    if xval == 0.0 {
                        continue;
                    }
                    let wbase = (j * c_in + ci) * c_out;
                    for o in 0..c_out {
                        data[t * c_out + o] += wv[wbase + o] * xval;
                    }
                }
            }
        }
        self.record("dilated_conv", vec![l, c_out], data, Op::DilatedConv { x, w, dilation })
    }

    /// Haar analysis low-pass applied `levels` times along axis 0 of `[L,C]`:
    /// each level halves the length via `(a+b)/√2`.
    pub fn haar_approx(&mut self, x: NodeId, levels: usize) -> Result<NodeId> {
        let (l, c) = self.value(x).dims2()?;
        let div = 1usize << levels;
        if levels == 0 || l % div != 0 || l == 0 {
            return Err(Error::shape(
                "haar_approx",
                format!("length {l} not divisible by 2^{levels}"),
            ));
        }
        let mut cur = self.data(x).to_vec();
        let mut cur_l = l;
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for _ in 0..levels {
            let half = cur_l / 2;
            let mut next = vec![0.0; half * c];
            for i in 0..half {
                for j in 0..c {
                    next[i * c + j] = (cur[2 * i * c + j] + cur[(2 * i + 1) * c + j]) * inv_sqrt2;
                }
            }
            cur = next;
            cur_l = half;
        }
        self.record("haar_approx", vec![cur_l, c], cur, Op::HaarApprox(x, levels))
    }

    /// Per-row layer normalization with learnable gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gain {:?} / bias {:?} vs feature dim {c}",
                    self.shape(gain),
                    self.shape(bias)
                ),
            ));
        }
        let xv = self.data(x);
        let g = self.data(gain);
        let b = self.data(bias);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                data[i * c + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        self.record("layer_norm", vec![r, c], data, Op::LayerNorm { x, gain, bias, eps })
    }

    // ── composite helpers ──────────────────────────────────────────────

    /// `x·w + b` for `x: [r,c]`, `w: [c,o]`, `b: [o]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Populates `grad` on every tracked
    /// node; leaf tensors with `requires_grad` end up with their gradients.
    /// A second call without re-recording is rejected.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already called on this graph".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].track {
            // Loss does not depend on any gradient-requiring leaf.
            return Ok(());
        }
        self.nodes[loss.0].tensor.grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].track || self.nodes[i].tensor.grad.is_none() {
                continue;
            }
            let grad = self.nodes[i].tensor.grad.clone().expect("grad present");
            if !grad.iter().all(|v| v.is_finite()) {
                return Err(Error::numeric(format!("backward at node {i}")));
            }
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &grad)?;
        }
        Ok(())
    }

    fn acc_grad(&mut self, id: NodeId, contribution: &[f64]) {
        if !self.nodes[id.0].track {
            return;
        }
        let numel = self.nodes[id.0].tensor.numel();
        let slot = self.nodes[id.0]
            .tensor
            .grad
            .get_or_insert_with(|| vec![0.0; numel]);
        for (g, c) in slot.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    fn propagate(&mut self, out_idx: usize, op: &Op, grad: &[f64]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_grad(*a, grad);
                self.acc_grad(*b, grad);
            }
            Op::Sub(a, b) => {
                self.acc_grad(*a, grad);
                let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                self.acc_grad(*b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = grad.iter().zip(self.data(*b)).map(|(g, v)| g * v).collect();
                let db: Vec<f64> = grad.iter().zip(self.data(*a)).map(|(g, v)| g * v).collect();
                self.acc_grad(*a, &da);
                self.acc_grad(*b, &db);
            }
            Op::AddRow(mat, row) => {
                self.acc_grad(*mat, grad);
                let (r, c) = self.value(*mat).dims2()?;
                let mut drow = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        drow[j] += grad[i * c + j];
                    }
                }
                self.acc_grad(*row, &drow);
            }
            Op::ScaleRows(mat, col) => {
                let (r, c) = self.value(*mat).dims2()?;
                let colv = self.data(*col).to_vec();
                let m = self.data(*mat).to_vec();
                let mut dmat = vec![0.0; r * c];
                let mut dcol = vec![0.0; r];
                for i in 0..r {
                    for j in 0..c {
                        dmat[i * c + j] = grad[i * c + j] * colv[i];
                        dcol[i] += grad[i * c + j] * m[i * c + j];
                    }
                }
                self.acc_grad(*mat, &dmat);
                self.acc_grad(*col, &dcol);
            }
            Op::ScaleByScalar(x, s) => {
                let sv = self.data(*s)[0];
                let dx: Vec<f64> = grad.iter().map(|g| g * sv).collect();
                let ds: f64 = grad.iter().zip(self.data(*x)).map(|(g, v)| g * v).sum();
                self.acc_grad(*x, &dx);
                self.acc_grad(*s, &[ds]);
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let (_, n) = self.value(*b).dims2()?;
                // dA = G · Bᵀ, dB = Aᵀ · G
                let bt = transpose_kernel(self.data(*b), k, n);
                let da = matmul_kernel(grad, &bt, m, n, k);
                let at = transpose_kernel(self.data(*a), m, k);
                let db = matmul_kernel(&at, grad, k, m, n);
                self.acc_grad(*a, &da);
                self.acc_grad(*b, &db);
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2()?;
                let dx = transpose_kernel(grad, c, r);
                self.acc_grad(*x, &dx);
            }
            Op::Unary(kind, x) => {
                let out = &self.nodes[out_idx].tensor.data;
                let dx: Vec<f64> = self
                    .data(*x)
                    .iter()
                    .zip(out.iter())
                    .zip(grad)
                    .map(|((&xv, &yv), &g)| g * unary_derivative(*kind, xv, yv))
                    .collect();
                self.acc_grad(*x, &dx);
            }
            Op::SumAll(x) => {
                let n = self.value(*x).numel();
                let dx = vec![grad[0]; n];
                self.acc_grad(*x, &dx);
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).numel();
                let dx = vec![grad[0] / n as f64; n];
                self.acc_grad(*x, &dx);
            }
            Op::MeanAxis0(x) => {
                let (r, c) = self.value(*x).dims2()?;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = grad[j] / r as f64;
                    }
                }
                self.acc_grad(*x, &dx);
            }
            Op::Reshape(x) => {
                self.acc_grad(*x, grad);
            }
            Op::SliceRows(x, start, len) => {
                let (r, c) = self.value(*x).dims2()?;
                let mut dx = vec![0.0; r * c];
                dx[start * c..(start + len) * c].copy_from_slice(grad);
                self.acc_grad(*x, &dx);
            }
            Op::SliceCols(x, start, len) => {
                let (r, c) = self.value(*x).dims2()?;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..*len {
                        dx[i * c + start + j] = grad[i * len + j];
                    }
                }
                self.acc_grad(*x, &dx);
            }
            Op::ConcatCols(xs) => {
                let (r, total) = self.nodes[out_idx].tensor.dims2()?;
                let mut offset = 0usize;
                for &x in xs {
                    let (_, ci) = self.value(x).dims2()?;
                    let mut dx = vec![0.0; r * ci];
                    for i in 0..r {
                        dx[i * ci..(i + 1) * ci]
                            .copy_from_slice(&grad[i * total + offset..i * total + offset + ci]);
                    }
                    self.acc_grad(x, &dx);
                    offset += ci;
                }
            }
            Op::ConcatVec(xs) => {
                let mut offset = 0usize;
                for &x in xs {
                    let n = self.value(x).numel();
                    let dx = grad[offset..offset + n].to_vec();
                    self.acc_grad(x, &dx);
                    offset += n;
                }
            }
            Op::Select(x, i) => {
                let n = self.value(*x).numel();
                let mut dx = vec![0.0; n];
                dx[*i] = grad[0];
                self.acc_grad(*x, &dx);
            }
            Op::Softmax(x) => {
                let shape = self.shape(*x).to_vec();
                let (rows, cols) = if shape.len() == 1 {
                    (1, shape[0])
                } else {
                    (shape[0], shape[1])
                };
                let y = self.nodes[out_idx].tensor.data.clone();
                let mut dx = vec![0.0; rows * cols];
                for i in 0..rows {
                    softmax_backward_row(
                        &y[i * cols..(i + 1) * cols],
                        &grad[i * cols..(i + 1) * cols],
                        &mut dx[i * cols..(i + 1) * cols],
                    );
                }
                self.acc_grad(*x, &dx);
            }
            Op::SoftmaxCausal(x) => {
                let (r, c) = self.value(*x).dims2()?;
                let y = self.nodes[out_idx].tensor.data.clone();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    softmax_backward_row(
                        &y[i * c..i * c + i + 1],
                        &grad[i * c..i * c + i + 1],
                        &mut dx[i * c..i * c + i + 1],
                    );
                }
                self.acc_grad(*x, &dx);
            }
            Op::SegmentSoftmax(x, segments) => {
                let n = self.value(*x).numel();
                let y = &self.nodes[out_idx].tensor.data;
                let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
                let mut seg_dot = vec![0.0; n_seg];
                for t in 0..n {
                    seg_dot[segments[t]] += grad[t] * y[t];
                }
                let mut dx = vec![0.0; n];
                for t in 0..n {
                    dx[t] = y[t] * (grad[t] - seg_dot[segments[t]]);
                }
                self.acc_grad(*x, &dx);
            }
            Op::GatherRows(x, idx) => {
                let (r, c) = self.value(*x).dims2()?;
                let mut dx = vec![0.0; r * c];
                for (t, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        dx[i * c + j] += grad[t * c + j];
                    }
                }
                self.acc_grad(*x, &dx);
            }
            Op::ScatterAddRows(src, idx) => {
                let (e, c) = self.value(*src).dims2()?;
                let mut dsrc = vec![0.0; e * c];
                for (t, &i) in idx.iter().enumerate() {
                    dsrc[t * c..(t + 1) * c].copy_from_slice(&grad[i * c..(i + 1) * c]);
                }
                self.acc_grad(*src, &dsrc);
            }
            Op::DilatedConv { x, w, dilation } => {
                let (l, c_in) = self.value(*x).dims2()?;
                let ws = self.shape(*w).to_vec();
                let (k, c_out) = (ws[0], ws[2]);
                let xv = self.data(*x).to_vec();
                let wv = self.data(*w).to_vec();
                let mut dx = vec![0.0; l * c_in];
                let mut dw = vec![0.0; k * c_in * c_out];
                for t in 0..l {
                    for j in 0..k {
                        let back = j * dilation;
                        if back > t {
                            break;
                        }
                        let s = t - back;
                        for ci in 0..c_in {
                            let wbase = (j * c_in + ci) * c_out;
                            let xval = xv[s * c_in + ci];
                            let mut acc = 0.0;
                            for o in 0..c_out {
                                let g = grad[t * c_out + o];
                                acc += wv[wbase + o] * g;
                                dw[wbase + o] += xval * g;
                            }
                            dx[s * c_in + ci] += acc;
                        }
                    }
                }
                self.acc_grad(*x, &dx);
                self.acc_grad(*w, &dw);
            }
            Op::HaarApprox(x, levels) => {
                let (l, c) = self.value(*x).dims2()?;
                // Transpose of the low-pass cascade: upsample `levels` times.
                let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
                let mut cur = grad.to_vec();
                let mut cur_l = l >> levels;
                for _ in 0..*levels {
                    let next_l = cur_l * 2;
                    let mut next = vec![0.0; next_l * c];
                    for i in 0..cur_l {
                        for j in 0..c {
                            let g = cur[i * c + j] * inv_sqrt2;
                            next[2 * i * c + j] = g;
                            next[(2 * i + 1) * c + j] = g;
                        }
                    }
                    cur = next;
                    cur_l = next_l;
                }
                self.acc_grad(*x, &cur);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (r, c) = self.value(*x).dims2()?;
                let xv = self.data(*x).to_vec();
                let gv = self.data(*gain).to_vec();
                let mut dx = vec![0.0; r * c];
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                for i in 0..r {
                    let row = &xv[i * c..(i + 1) * c];
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
                    let g_row = &grad[i * c..(i + 1) * c];
                    let mut dxhat = vec![0.0; c];
                    for j in 0..c {
                        dgain[j] += g_row[j] * xhat[j];
                        dbias[j] += g_row[j];
                        dxhat[j] = g_row[j] * gv[j];
                    }
                    let mean_dxhat = dxhat.iter().sum::<f64>() / c as f64;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dx[i * c + j] =
                            inv_std * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                self.acc_grad(*x, &dx);
                self.acc_grad(*gain, &dgain);
                self.acc_grad(*bias, &dbias);
            }
        }
        Ok(())
    }
}

// ── kernels ────────────────────────────────────────────────────────────

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_kernel(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

/// Max-subtracted softmax of one row into `out`.
fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        denom += e;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}

/// dx = y ⊙ (g − ⟨g, y⟩) for one softmax row.
fn softmax_backward_row(y: &[f64], g: &[f64], dx: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((d, &yv), &gv) in dx.iter_mut().zip(y).zip(g) {
        *d = yv * (gv - dot);
    }
}

fn unary_forward(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Ln => x.ln(),
        UnaryKind::LeakyRelu(slope) => {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        }
        UnaryKind::Elu => {
            if x > 0.0 {
                x
            } else {
                x.exp() - 1.0
            }
        }
        UnaryKind::Gelu => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
        }
        UnaryKind::Affine(a, b) => a * x + b,
        UnaryKind::PowConst(p) => {
            if p == 0.0 {
                1.0
            } else {
                x.powf(p)
            }
        }
    }
}

/// Derivative of a unary op given input `x` and output `y`.
fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Sigmoid => y * (1.0 - y),
        UnaryKind::Tanh => 1.0 - y * y,
        UnaryKind::Exp => y,
        UnaryKind::Ln => 1.0 / x,
        UnaryKind::LeakyRelu(slope) => {
            if x > 0.0 {
                1.0
            } else {
                slope
            }
        }
        UnaryKind::Elu => {
            if x > 0.0 {
                1.0
            } else {
                y + 1.0
            }
        }
        UnaryKind::Gelu => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            let inner = c * (x + 0.044715 * x * x * x);
            let t = inner.tanh();
            let sech2 = 1.0 - t * t;
            let d_inner = c * (1.0 + 3.0 * 0.044715 * x * x);
            0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
        }
        UnaryKind::Affine(a, _) => a,
        UnaryKind::PowConst(p) => {
            if p == 0.0 {
                0.0
            } else {
                p * x.powf(p - 1.0)
            }
        }
    }
}
