//! Reverse-mode differentiation over tensor-valued nodes.
//!
//! Every op appends one node holding its forward value and what the backward pass needs.
//! Nodes are created in topological order by construction, so the backward pass is a single
//! reverse sweep that visits each node once.

use rand::Rng;

use super::tensor::{matmul_at_kernel, matmul_bt_kernel, matmul_kernel};
use super::{ParamId, ParamStore, Tensor, TensorError};

/// Variance floor inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether stochastic ops (dropout, word replacement) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast { x: Var, bias: Var },
    Scale(Var, f64),
    AddScalar(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    Gather { x: Var, idx: Vec<usize> },
    Mean { x: Var, axis: usize },
    Max { x: Var, argmax: Vec<usize> },
    Sum(Var),
    WeightedSum { x: Var, weights: Vec<f64> },
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Softmax { x: Var, axis: usize },
    SegmentSoftmax { x: Var, offsets: Vec<usize> },
    SegmentMax { x: Var, argmax: Vec<usize> },
    SegmentSmax { x: Var, tau: Var, offsets: Vec<usize>, weights: Vec<f64> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Conv1d { x: Var, weight: Var, bias: Var, width: usize },
    Dropout { x: Var, mask: Vec<f64> },
}

struct Node {
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
}

/// Records operations for one forward pass over parameters borrowed from a [`ParamStore`].
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
    param_shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to a node, `None` if the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.nodes.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a parameter; zeros if it was unreachable from the loss.
    pub fn param(&self, id: ParamId) -> Tensor {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, node)| self.nodes[*node].clone())
            .unwrap_or_else(|| Tensor::zeros(&self.param_shapes[id.0]))
    }

    /// Reached parameters and their gradients.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|(id, node)| self.nodes[*node].as_ref().map(|g| (*id, g)))
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

fn check_offsets(op: &'static str, offsets: &[usize], len: usize) -> Result<(), TensorError> {
    if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != len {
        return Err(TensorError::InvalidArgument {
            op,
            detail: format!("segment offsets must run from 0 to {len}"),
        });
    }
    if offsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(TensorError::InvalidArgument {
            op,
            detail: "segments must be non-empty".into(),
        });
    }
    Ok(())
}

/// Softmax of `values / tau` followed by the weighted average of `values`.
/// Returns the pooled value and the weights. Shared by the tape op and plain inference code
/// so both produce identical bits.
pub fn smax_kernel(values: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let max_scaled = values
        .iter()
        .map(|v| v / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v / tau - max_scaled).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let pooled: f64 = weights.iter().zip(values).map(|(w, v)| w * v).sum();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (pooled.clamp(lo, hi), weights)
}

fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in xs.iter_mut() {
        *x /= z;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        let node = &self.nodes[var.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A differentiable input that is not a stored parameter.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.push("leaf", value, Op::Leaf)
    }

    /// Alias of [`Tape::leaf`] for values the caller never differentiates.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.leaf(value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var, TensorError> {
        let id = self.store.require(name)?;
        Ok(self.param(id))
    }

    fn dims2(&self, var: Var, op: &'static str) -> Result<(usize, usize), TensorError> {
        let shape = self.shape(var);
        match shape {
            [r, c] => Ok((*r, *c)),
            [n] => Ok((1, *n)),
            _ => Err(shape_err(op, format!("expected rank ≤ 2, got {shape:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = match self.shape(b) {
            [r, c] => (*r, *c),
            other => return Err(shape_err("matmul", format!("rhs must be rank 2, got {other:?}"))),
        };
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("{:?} · {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        let shape = if self.shape(a).len() == 1 { vec![n] } else { vec![m, n] };
        self.push("matmul", Tensor::from_parts(shape, out), Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = match self.shape(x) {
            [r, c] => (*r, *c),
            other => return Err(shape_err("transpose", format!("expected rank 2, got {other:?}"))),
        };
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push("transpose", Tensor::from_parts(vec![c, r], out), Op::Transpose(x))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op_name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, TensorError> {
        self.same_shape(a, b, op_name)?;
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        let out = va.with_data(data);
        self.push(op_name, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `x (r×c) + bias (c)` with the bias repeated over rows.
    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims2(x, "add_row_broadcast")?;
        if self.shape(bias) != [c] {
            return Err(shape_err(
                "add_row_broadcast",
                format!("{:?} + bias {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let b = self.value(bias).data();
        let xv = self.value(x);
        let mut out = xv.data().to_vec();
        for i in 0..r {
            for (o, bj) in out[i * c..(i + 1) * c].iter_mut().zip(b) {
                *o += bj;
            }
        }
        let out = xv.with_data(out);
        self.push("add_row_broadcast", out, Op::AddRowBroadcast { x, bias })
    }

    /// Dense layer `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row_broadcast(y, b),
            None => Ok(y),
        }
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let out = xv.with_data(xv.data().iter().map(|v| v * factor).collect());
        self.push("scale", out, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let out = xv.with_data(xv.data().iter().map(|v| v + c).collect());
        self.push("add_scalar", out, Op::AddScalar(x))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var, TensorError> {
        let neg = self.scale(x, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.len() || shape.contains(&0) {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", xv.shape())));
        }
        let out = Tensor::from_parts(shape.to_vec(), xv.data().to_vec());
        self.push("reshape", out, Op::Reshape(x))
    }

    /// Concatenate rank-2 tensors with equal row counts along columns. Rank-1 inputs are
    /// treated as single rows.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                detail: "no inputs".into(),
            });
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.dims2(p, "concat"))
            .collect::<Result<_, _>>()?;
        let rows = dims[0].0;
        if dims.iter().any(|d| d.0 != rows) {
            let shapes: Vec<_> = parts.iter().map(|&p| self.shape(p).to_vec()).collect();
            return Err(shape_err("concat", format!("row counts differ: {shapes:?}")));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &(_, c)) in parts.iter().zip(&dims) {
                out.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
            }
        }
        let all_vectors = parts.iter().all(|&p| self.shape(p).len() == 1);
        let shape = if all_vectors { vec![total] } else { vec![rows, total] };
        self.push("concat", Tensor::from_parts(shape, out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if start >= end || end > c {
            return Err(shape_err("slice_cols", format!("[{start}, {end}) of {c} columns")));
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let shape = if self.shape(x).len() == 1 { vec![w] } else { vec![r, w] };
        self.push("slice_cols", Tensor::from_parts(shape, out), Op::SliceCols { x, start })
    }

    /// Row gather; doubles as embedding lookup.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = match self.shape(x) {
            [r, c] => (*r, *c),
            other => return Err(shape_err("gather_rows", format!("expected rank 2, got {other:?}"))),
        };
        if rows.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                detail: "empty index list".into(),
            });
        }
        if let Some(bad) = rows.iter().find(|&&i| i >= r) {
            return Err(shape_err("gather_rows", format!("row {bad} out of range for {r} rows")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        self.push(
            "gather_rows",
            Tensor::from_parts(vec![rows.len(), c], out),
            Op::GatherRows { x, rows: rows.to_vec() },
        )
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        self.gather_rows(table, ids)
    }

    /// Flat-element gather producing a rank-1 tensor.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        if idx.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "gather",
                detail: "empty index list".into(),
            });
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather", format!("index {bad} out of range for {n} values")));
        }
        let src = self.value(x).data();
        let out = idx.iter().map(|&i| src[i]).collect();
        self.push("gather", Tensor::vector(out), Op::Gather { x, idx: idx.to_vec() })
    }

    /// Mean of a rank-2 tensor over `axis` (0: over rows, 1: over columns).
    pub fn mean_over_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let (r, c) = self.dims2(x, "mean")?;
        let src = self.value(x).data();
        let out = match axis {
            0 => (0..c).map(|j| (0..r).map(|i| src[i * c + j]).sum::<f64>() / r as f64).collect(),
            1 => (0..r).map(|i| src[i * c..(i + 1) * c].iter().sum::<f64>() / c as f64).collect(),
            _ => return Err(TensorError::InvalidArgument { op: "mean", detail: format!("axis {axis}") }),
        };
        self.push("mean", Tensor::vector(out), Op::Mean { x, axis })
    }

    /// Max of a rank-2 tensor over `axis`; ties resolve to the first index.
    pub fn max_over_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let (r, c) = self.dims2(x, "max")?;
        let src = self.value(x).data();
        let (outer, inner, at): (usize, usize, Box<dyn Fn(usize, usize) -> usize>) = match axis {
            0 => (c, r, Box::new(move |o, i| i * c + o)),
            1 => (r, c, Box::new(move |o, i| o * c + i)),
            _ => return Err(TensorError::InvalidArgument { op: "max", detail: format!("axis {axis}") }),
        };
        let mut out = Vec::with_capacity(outer);
        let mut argmax = Vec::with_capacity(outer);
        for o in 0..outer {
            let mut best = at(o, 0);
            for i in 1..inner {
                let idx = at(o, i);
                if src[idx] > src[best] {
                    best = idx;
                }
            }
            out.push(src[best]);
            argmax.push(best);
        }
        self.push("max", Tensor::vector(out), Op::Max { x, argmax })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    /// `Σ weights[i] * x[i]` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if xv.len() != weights.len() {
            return Err(shape_err("weighted_sum", format!("{} values, {} weights", xv.len(), weights.len())));
        }
        let s = xv.data().iter().zip(weights).map(|(a, w)| a * w).sum();
        self.push("weighted_sum", Tensor::scalar(s), Op::WeightedSum { x, weights: weights.to_vec() })
    }

    fn map(&mut self, x: Var, op_name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let out = xv.with_data(xv.data().iter().map(|&v| f(v)).collect());
        self.push(op_name, out, op)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map(x, "relu", |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map(x, "sigmoid", sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map(x, "softplus", softplus, Op::Softplus(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(TensorError::NonFinite { op: "log" });
        }
        self.map(x, "log", f64::ln, Op::Log(x))
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, TensorError> {
        self.map(x, "clamp", |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    /// Softmax along `axis` of a rank-2 tensor (rank-1 inputs use axis 0).
    pub fn softmax_over_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let (r, c) = self.dims2(x, "softmax")?;
        let mut data = self.value(x).data().to_vec();
        match (shape.len(), axis) {
            (1, 0) | (2, 1) => {
                for row in data.chunks_mut(c) {
                    softmax_in_place(row);
                }
            }
            (2, 0) => {
                for j in 0..c {
                    let mut col: Vec<f64> = (0..r).map(|i| data[i * c + j]).collect();
                    softmax_in_place(&mut col);
                    for (i, v) in col.into_iter().enumerate() {
                        data[i * c + j] = v;
                    }
                }
            }
            _ => return Err(TensorError::InvalidArgument { op: "softmax", detail: format!("axis {axis} for {shape:?}") }),
        }
        let axis = if shape.len() == 1 { 1 } else { axis };
        self.push("softmax", Tensor::from_parts(shape, data), Op::Softmax { x, axis })
    }

    /// Softmax within each contiguous segment `[offsets[s], offsets[s+1])` of a rank-1 tensor.
    pub fn segment_softmax(&mut self, x: Var, offsets: &[usize]) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        check_offsets("segment_softmax", offsets, n)?;
        let mut data = self.value(x).data().to_vec();
        for w in offsets.windows(2) {
            softmax_in_place(&mut data[w[0]..w[1]]);
        }
        self.push("segment_softmax", Tensor::vector(data), Op::SegmentSoftmax { x, offsets: offsets.to_vec() })
    }

    /// Hard maximum within each segment; output has one value per segment.
    pub fn segment_max(&mut self, x: Var, offsets: &[usize]) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        check_offsets("segment_max", offsets, n)?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(offsets.len() - 1);
        let mut argmax = Vec::with_capacity(offsets.len() - 1);
        for w in offsets.windows(2) {
            let mut best = w[0];
            for i in w[0] + 1..w[1] {
                if src[i] > src[best] {
                    best = i;
                }
            }
            out.push(src[best]);
            argmax.push(best);
        }
        self.push("segment_max", Tensor::vector(out), Op::SegmentMax { x, argmax })
    }

    /// Soft maximum within each segment at temperature `tau` (a positive scalar node).
    pub fn segment_smax(&mut self, x: Var, tau: Var, offsets: &[usize]) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        check_offsets("segment_smax", offsets, n)?;
        let tau_v = self.value(tau);
        if !tau_v.is_scalar() {
            return Err(shape_err("segment_smax", format!("tau must be scalar, got {:?}", tau_v.shape())));
        }
        let t = tau_v.data()[0];
        if t <= 0.0 {
            return Err(TensorError::InvalidArgument { op: "segment_smax", detail: format!("tau = {t}") });
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(offsets.len() - 1);
        let mut weights = Vec::with_capacity(n);
        for w in offsets.windows(2) {
            let (pooled, ws) = smax_kernel(&src[w[0]..w[1]], t);
            out.push(pooled);
            weights.extend(ws);
        }
        self.push(
            "segment_smax",
            Tensor::vector(out),
            Op::SegmentSmax { x, tau, offsets: offsets.to_vec(), weights },
        )
    }

    /// Row-wise layer normalization with learned gain and bias of length `c`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims2(x, "layer_norm")?;
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(shape_err(
                "layer_norm",
                format!("{:?} with gain {:?}, bias {:?}", self.shape(x), self.shape(gain), self.shape(bias)),
            ));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in src.chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let out = self.value(x).with_data(out);
        self.push("layer_norm", out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    /// Same-padded 1-D convolution over the rows of `x (N×c_in)` with
    /// `weight (width×c_in×c_out)` and `bias (c_out)`.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let (n, cin) = match self.shape(x) {
            [n, c] => (*n, *c),
            other => return Err(shape_err("conv1d", format!("input must be rank 2, got {other:?}"))),
        };
        let (width, wcin, cout) = match self.shape(weight) {
            [w, i, o] => (*w, *i, *o),
            other => return Err(shape_err("conv1d", format!("weight must be rank 3, got {other:?}"))),
        };
        if wcin != cin || self.shape(bias) != [cout] {
            return Err(shape_err(
                "conv1d",
                format!("input {:?}, weight {:?}, bias {:?}", self.shape(x), self.shape(weight), self.shape(bias)),
            ));
        }
        let xs = self.value(x).data();
        let ws = self.value(weight).data();
        let bs = self.value(bias).data();
        let pad = (width - 1) / 2;
        let mut out = Vec::with_capacity(n * cout);
        for _ in 0..n {
            out.extend_from_slice(bs);
        }
        for t in 0..n {
            for k in 0..width {
                let src = t + k;
                if src < pad || src - pad >= n {
                    continue;
                }
                let s = src - pad;
                let x_row = &xs[s * cin..(s + 1) * cin];
                let w_k = &ws[k * cin * cout..(k + 1) * cin * cout];
                let out_row = &mut out[t * cout..(t + 1) * cout];
                for (ci, &xv) in x_row.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for (o, &wv) in out_row.iter_mut().zip(&w_k[ci * cout..(ci + 1) * cout]) {
                        *o += xv * wv;
                    }
                }
            }
        }
        self.push(
            "conv1d",
            Tensor::from_parts(vec![n, cout], out),
            Op::Conv1d { x, weight, bias, width },
        )
    }

    /// Inverted dropout: retained units are scaled by `1 / keep_prob`. Identity in eval mode
    /// or when `keep_prob == 1`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, keep_prob: f64, mode: Mode, rng: &mut R) -> Result<Var, TensorError> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                detail: format!("keep_prob {keep_prob} outside (0, 1]"),
            });
        }
        if mode == Mode::Eval || keep_prob == 1.0 {
            return Ok(x);
        }
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < keep_prob { 1.0 / keep_prob } else { 0.0 })
            .collect();
        let xv = self.value(x);
        let out = xv.with_data(xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect());
        self.push("dropout", out, Op::Dropout { x, mask })
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NotScalar { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(lv.with_data(vec![1.0]));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                _ => {}
            }
            let out = node.value.as_ref().expect("op nodes own their value");
            self.backprop_node(&node.op, out, &g, &mut grads)?;
        }

        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(pid, v)| v.map(|v| (ParamId(pid), v.0)))
            .collect();
        let param_shapes = self.store.iter().map(|(_, p)| p.value().shape().to_vec()).collect();
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(TensorError::NonFinite { op: "backward" });
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
            param_shapes,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, contrib: Tensor) {
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn like(&self, var: Var, data: Vec<f64>) -> Tensor {
        self.value(var).with_data(data)
    }

    fn backprop_node(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), TensorError> {
        let gd = g.data();
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).shape()[1];
                let ga = matmul_bt_kernel(gd, self.value(*b).data(), m, n, k);
                let gb = matmul_at_kernel(self.value(*a).data(), gd, m, k, n);
                let ga = self.like(*a, ga);
                let gb = self.like(*b, gb);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2();
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = gd[j * r + i];
                    }
                }
                let gx = self.like(*x, gx);
                self.accumulate(grads, *x, gx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let neg = g.with_data(gd.iter().map(|v| -v).collect());
                self.accumulate(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let ga = g.with_data(gd.iter().zip(bv).map(|(x, y)| x * y).collect());
                let gb = g.with_data(gd.iter().zip(av).map(|(x, y)| x * y).collect());
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::AddRowBroadcast { x, bias } => {
                let (_, c) = self.value(*x).dims2();
                let mut gb = vec![0.0; c];
                for row in gd.chunks(c) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                self.accumulate(grads, *x, g.clone());
                let gb = self.like(*bias, gb);
                self.accumulate(grads, *bias, gb);
            }
            Op::Scale(x, f) => {
                let gx = g.with_data(gd.iter().map(|v| v * f).collect());
                self.accumulate(grads, *x, gx);
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                let gx = self.like(*x, gd.to_vec());
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims2();
                let mut col = 0;
                for &p in parts {
                    let (_, c) = self.value(p).dims2();
                    let mut gp = Vec::with_capacity(rows * c);
                    for i in 0..rows {
                        gp.extend_from_slice(&gd[i * total + col..i * total + col + c]);
                    }
                    col += c;
                    let gp = self.like(p, gp);
                    self.accumulate(grads, p, gp);
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.value(*x).dims2();
                let (_, w) = out.dims2();
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    gx[i * c + start..i * c + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
                }
                let gx = self.like(*x, gx);
                self.accumulate(grads, *x, gx);
            }
            Op::GatherRows { x, rows } => {
                let (r, c) = self.value(*x).dims2();
                let mut gx = vec![0.0; r * c];
                for (k, &row) in rows.iter().enumerate() {
                    for (acc, v) in gx[row * c..(row + 1) * c].iter_mut().zip(&gd[k * c..(k + 1) * c]) {
                        *acc += v;
                    }
                }
                let gx = self.like(*x, gx);
                self.accumulate(grads, *x, gx);
            }
            Op::Gather { x, idx } => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (k, &i) in idx.iter().enumerate() {
                    gx[i] += gd[k];
                }
                let gx = self.like(*x, gx);
                self.accumulate(grads, *x, gx);
            }
            Op::Mean { x, axis } => {
                let (r, c) = self.value(*x).dims2();
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = if *axis == 0 { gd[j] / r as f64 } else { gd[i] / c as f64 };
                    }
                }
                let gx = self.like(*x, gx);
                self.accumulate(grads, *x, gx);
            }
            Op::Max { x, argmax } | Op::SegmentMax { x, argmax } => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (k, &i) in argmax.iter().enumerate() {
                    gx[i] += gd[k];
                }
                let gx = self.like(*x, gx);
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                let gx = self.like(*x, vec![gd[0]; n]);
                self.accumulate(grads, *x, gx);
            }
            Op::WeightedSum { x, weights } => {
                let gx = self.like(*x, weights.iter().map(|w| w * gd[0]).collect());
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = g.with_data(gd.iter().zip(xv).map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 }).collect());
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = g.with_data(gd.iter().zip(out.data()).map(|(gv, y)| gv * y * (1.0 - y)).collect());
                self.accumulate(grads, *x, gx);
            }
            Op::Softplus(x) => {
                let xv = self.value(*x).data();
                let gx = g.with_data(gd.iter().zip(xv).map(|(gv, v)| gv * sigmoid(*v)).collect());
                self.accumulate(grads, *x, gx);
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                let gx = g.with_data(gd.iter().zip(xv).map(|(gv, v)| gv / v).collect());
                self.accumulate(grads, *x, gx);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                let gx = g.with_data(
                    gd.iter()
                        .zip(xv)
                        .map(|(gv, v)| if *v >= *lo && *v <= *hi { *gv } else { 0.0 })
                        .collect(),
                );
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax { x, axis } => {
                let (r, c) = out.dims2();
                let y = out.data();
                let mut gx = vec![0.0; r * c];
                if *axis == 1 {
                    for i in 0..r {
                        let row = i * c..(i + 1) * c;
                        let dot: f64 = gd[row.clone()].iter().zip(&y[row.clone()]).map(|(a, b)| a * b).sum();
                        for k in row {
                            gx[k] = y[k] * (gd[k] - dot);
                        }
                    }
                } else {
                    for j in 0..c {
                        let dot: f64 = (0..r).map(|i| gd[i * c + j] * y[i * c + j]).sum();
                        for i in 0..r {
                            let k = i * c + j;
                            gx[k] = y[k] * (gd[k] - dot);
                        }
                    }
                }
                let gx = self.like(*x, gx);
                self.accumulate(grads, *x, gx);
            }
            Op::SegmentSoftmax { x, offsets } => {
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for w in offsets.windows(2) {
                    let dot: f64 = (w[0]..w[1]).map(|k| gd[k] * y[k]).sum();
                    for k in w[0]..w[1] {
                        gx[k] = y[k] * (gd[k] - dot);
                    }
                }
                let gx = self.like(*x, gx);
                self.accumulate(grads, *x, gx);
            }
            Op::SegmentSmax { x, tau, offsets, weights } => {
                let a = self.value(*x).data();
                let t = self.value(*tau).data()[0];
                let mut gx = vec![0.0; a.len()];
                let mut gtau = 0.0;
                for (s, w) in offsets.windows(2).enumerate() {
                    let pooled: f64 = (w[0]..w[1]).map(|k| weights[k] * a[k]).sum();
                    let mut dtau = 0.0;
                    for k in w[0]..w[1] {
                        let dev = a[k] - pooled;
                        gx[k] = gd[s] * weights[k] * (1.0 + dev / t);
                        dtau += weights[k] * dev * dev;
                    }
                    gtau += gd[s] * (-dtau / (t * t));
                }
                let gx = self.like(*x, gx);
                self.accumulate(grads, *x, gx);
                let gt = self.like(*tau, vec![gtau]);
                self.accumulate(grads, *tau, gt);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (r, c) = self.value(*x).dims2();
                let gain_v = self.value(*gain).data();
                let mut gx = vec![0.0; r * c];
                let mut ggain = vec![0.0; c];
                let mut gbias = vec![0.0; c];
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for (j, k) in row.clone().enumerate() {
                        let d = gd[k] * gain_v[j];
                        mean_d += d;
                        mean_dx += d * xhat[k];
                        ggain[j] += gd[k] * xhat[k];
                        gbias[j] += gd[k];
                    }
                    mean_d /= c as f64;
                    mean_dx /= c as f64;
                    for (j, k) in row.enumerate() {
                        let d = gd[k] * gain_v[j];
                        gx[k] = inv_std[i] * (d - mean_d - xhat[k] * mean_dx);
                    }
                }
                let gx = self.like(*x, gx);
                let ggain = self.like(*gain, ggain);
                let gbias = self.like(*bias, gbias);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gain, ggain);
                self.accumulate(grads, *bias, gbias);
            }
            Op::Conv1d { x, weight, bias, width } => {
                let (n, cin) = self.value(*x).dims2();
                let cout = self.value(*bias).len();
                let xs = self.value(*x).data();
                let ws = self.value(*weight).data();
                let pad = (width - 1) / 2;
                let mut gx = vec![0.0; n * cin];
                let mut gw = vec![0.0; width * cin * cout];
                let mut gb = vec![0.0; cout];
                for t in 0..n {
                    let g_row = &gd[t * cout..(t + 1) * cout];
                    for (acc, v) in gb.iter_mut().zip(g_row) {
                        *acc += v;
                    }
                    for k in 0..*width {
                        let src = t + k;
                        if src < pad || src - pad >= n {
                            continue;
                        }
                        let s = src - pad;
                        for ci in 0..cin {
                            let w_off = (k * cin + ci) * cout;
                            let w_row = &ws[w_off..w_off + cout];
                            gx[s * cin + ci] += g_row.iter().zip(w_row).map(|(a, b)| a * b).sum::<f64>();
                            let xv = xs[s * cin + ci];
                            for (acc, gv) in gw[w_off..w_off + cout].iter_mut().zip(g_row) {
                                *acc += xv * gv;
                            }
                        }
                    }
                }
                let gx = self.like(*x, gx);
                let gw = self.like(*weight, gw);
                let gb = self.like(*bias, gb);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *weight, gw);
                self.accumulate(grads, *bias, gb);
            }
            Op::Dropout { x, mask } => {
                let gx = g.with_data(gd.iter().zip(mask).map(|(a, m)| a * m).collect());
                self.accumulate(grads, *x, gx);
            }
        }
        Ok(())
    }
}
