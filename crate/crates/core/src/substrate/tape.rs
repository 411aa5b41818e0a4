//! Wengert-list reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value plus whatever it needs
//! for the backward rule. Inputs always precede outputs on the tape, so a
//! reverse sweep visits nodes in a valid topological order.

use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::{Array, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by a train-mode batch-norm, to be folded into
/// the running buffers by the caller after the step.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormUpdate {
    pub key: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const LN_EPS: f64 = 1e-5;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(String),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Exp(Var),
    Relu(Var),
    Sum(Var),
    MeanRows(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    MaxPool(Var, Vec<usize>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Array,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Input | Param(_) => vec![],
            MatMul(a, b) | MatMulNt(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b)
            | ScaleBy(a, b) | ConcatCols(a, b) => vec![*a, *b],
            Transpose(a) | Scale(a, _) | Exp(a) | Relu(a) | Sum(a) | MeanRows(a)
            | SoftmaxRows(a) | SliceRows(a, _) | GatherRows(a, _) | Reshape(a) | MaxPool(a, _) => {
                vec![*a]
            }
            LayerNorm { x, gamma, beta, .. }
            | BatchNormTrain { x, gamma, beta, .. }
            | BatchNormEval { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            L2NormalizeRows { x, .. } => vec![*x],
            ConcatRows(v) => v.clone(),
            Conv1d { x, w, b } | Conv { x, w, b, .. } => vec![*x, *w, *b],
            Attention { q, k, v, .. } => vec![*q, *k, *v],
            CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// A recording of one forward evaluation.
pub struct Graph {
    nodes: Vec<Node>,
    mode: Mode,
    param_vars: HashMap<String, Var>,
    bn_updates: Vec<BatchNormUpdate>,
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            param_vars: HashMap::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Saved per-head attention probabilities `[heads, Lq, Lk]` of an
    /// attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&Array> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn batch_norm_updates(&self) -> &[BatchNormUpdate] {
        &self.bn_updates
    }

    fn push(&mut self, name: &'static str, value: Array, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad)
            || matches!(op, Op::Param(_));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant leaf (no gradient).
    pub fn input(&mut self, value: Array) -> Result<Var> {
        self.push("input", value, Op::Input)
    }

    /// Leaf bound to a named parameter. Repeated lookups share one node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.param_vars.get(name) {
            return Ok(*v);
        }
        let value = store.value(name)?.clone();
        let v = self.push("param", value, Op::Param(name.to_string()))?;
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        match s {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::shape(op, s, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let c = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Array::from_parts(vec![m, n], c), Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let c = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul_nt", Array::from_parts(vec![m, n], c), Op::MatMulNt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.dims2(a, "transpose")?;
        let t = self.value(a).transpose2();
        self.push("transpose", t, Op::Transpose(a))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Array {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Array::from_parts(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b))
    }

    /// Adds a length-`d` vector to every row of an `[r, d]` array.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, d) = self.dims2(x, "add_row")?;
        if self.value(bias).len() != d {
            return Err(Error::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(d) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.push("add_row", v, Op::AddRow(x, bias))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a * c);
        self.push("scale", v, Op::Scale(x, c))
    }

    /// Multiplies every entry by a single-element variable.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by", self.shape(x), self.shape(s)));
        }
        let c = self.value(s).item();
        let v = self.value(x).map(|a| a * c);
        self.push("scale_by", v, Op::ScaleBy(x, s))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::exp);
        self.push("exp", v, Op::Exp(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push("relu", v, Op::Relu(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Array::scalar(s), Op::Sum(x))
    }

    /// Mean over the leading (time) axis: `[r, d] -> [1, d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, d) = self.dims2(x, "mean_rows")?;
        if r == 0 {
            return Err(Error::InvalidArgument("mean over empty sequence".into()));
        }
        let mut m = vec![0.0; d];
        for row in self.value(x).data().chunks(d) {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= r as f64);
        self.push("mean_rows", Array::from_parts(vec![1, d], m), Op::MeanRows(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, c) = self.dims2(x, "softmax_rows")?;
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push("softmax_rows", v, Op::SoftmaxRows(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, d) = self.dims2(x, "layer_norm")?;
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xs = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; r * d];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * d];
        for i in 0..r {
            let row = &xs[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        self.push(
            "layer_norm",
            Array::from_parts(vec![r, d], out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Per-column normalisation of an `[r, c]` array. Train mode normalises
    /// with batch statistics and records them under `key`; eval mode uses the
    /// supplied running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        key: &str,
        running: Option<(&Array, &Array)>,
    ) -> Result<Var> {
        let (r, c) = self.dims2(x, "batch_norm")?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape("batch_norm", self.shape(x), self.shape(gamma)));
        }
        let xs = self.value(x).data();
        let (mean, var) = match self.mode {
            Mode::Train => {
                if r == 0 {
                    return Err(Error::InvalidArgument("batch_norm over zero rows".into()));
                }
                let mut mean = vec![0.0; c];
                for row in xs.chunks(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= r as f64);
                let mut var = vec![0.0; c];
                for row in xs.chunks(c) {
                    for j in 0..c {
                        var[j] += (row[j] - mean[j]).powi(2);
                    }
                }
                var.iter_mut().for_each(|v| *v /= r as f64);
                (mean, var)
            }
            Mode::Eval => {
                let (rm, rv) = running.ok_or_else(|| {
                    Error::InvalidArgument(format!("missing running statistics for {key:?}"))
                })?;
                if rm.len() != c || rv.len() != c {
                    return Err(Error::shape("batch_norm", &[c], rm.shape()));
                }
                (rm.data().to_vec(), rv.data().to_vec())
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; r * c];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                let h = (xs[i * c + j] - mean[j]) * inv_std[j];
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let value = Array::from_parts(vec![r, c], out);
        let op = match self.mode {
            Mode::Train => {
                let unbiased = if r > 1 {
                    var.iter().map(|v| v * r as f64 / (r - 1) as f64).collect()
                } else {
                    var
                };
                self.bn_updates.push(BatchNormUpdate {
                    key: key.to_string(),
                    mean,
                    var: unbiased,
                });
                Op::BatchNormTrain {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                }
            }
            Mode::Eval => Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        };
        self.push("batch_norm", value, op)
    }

    /// Scales each row to unit L2 norm; a zero row is an error.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (r, d) = self.dims2(x, "l2_normalize_rows")?;
        let mut v = self.value(x).clone();
        let mut norms = Vec::with_capacity(r);
        for (i, row) in v.data_mut().chunks_mut(d).enumerate() {
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "degenerate embedding: row {i} has zero norm"
                )));
            }
            row.iter_mut().for_each(|a| *a /= n);
            norms.push(n);
        }
        self.push("l2_normalize_rows", v, Op::L2NormalizeRows { x, norms })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims2(a, "concat_cols")?;
        let (rb, cb) = self.dims2(b, "concat_cols")?;
        if ra != rb {
            return Err(Error::shape("concat_cols", self.shape(a), self.shape(b)));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&va[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
        }
        self.push("concat_cols", Array::from_parts(vec![ra, ca + cb], out), Op::ConcatCols(a, b))
    }

    /// Stacks along the leading axis; trailing axes must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_rows of nothing".into()))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != tail.len() + 1 || s[1..] != tail[..] {
                return Err(Error::shape("concat_rows", self.shape(first), s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        self.push("concat_rows", Array::from_parts(shape, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let r = self.value(x).rows();
        if start > end || end > r {
            return Err(Error::InvalidArgument(format!(
                "row slice {start}..{end} out of bounds for {r} rows"
            )));
        }
        let v = self.value(x).slice_rows(start, end);
        self.push("slice_rows", v, Op::SliceRows(x, start))
    }

    /// Selects rows by index (repetition allowed); embedding lookup is this
    /// op applied to a table parameter.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let r = src.rows();
        let w = src.row_len();
        if let Some(bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::InvalidArgument(format!(
                "row index {bad} out of bounds for {r} rows"
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(src.row(i));
        }
        let mut shape = src.shape().to_vec();
        shape[0] = idx.len();
        self.push("gather_rows", Array::from_parts(shape, data), Op::GatherRows(x, idx.to_vec()))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", v, Op::Reshape(x))
    }

    /// Same-padded temporal convolution: `x [L, cin]`, `w [cout, cin, k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (len, cin) = self.dims2(x, "conv1d")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != cin || ws[2] % 2 == 0 || self.value(b).len() != ws[0] {
            return Err(Error::shape("conv1d", self.shape(x), &ws));
        }
        let out = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            len,
            cin,
            ws[0],
            ws[2],
        );
        self.push("conv1d", Array::from_parts(vec![len, ws[0]], out), Op::Conv1d { x, w, b })
    }

    /// `x [N, cin, H, W]`, `w [cout, cin, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || self.value(b).len() != ws[0] {
            return Err(Error::shape("conv2d", &xs, &ws));
        }
        let geom = ConvGeom {
            n: xs[0],
            cin: xs[1],
            cout: ws[0],
            input: [1, xs[2], xs[3]],
            kernel: [1, ws[2], ws[3]],
            stride: [1, stride, stride],
            pad: [0, pad, pad],
        };
        let o = geom.output();
        if o[1] == 0 || o[2] == 0 {
            return Err(Error::shape("conv2d", &xs, &ws));
        }
        let out = kernels::conv_forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let shape = vec![xs[0], ws[0], o[1], o[2]];
        self.push("conv2d", Array::from_parts(shape, out), Op::Conv { x, w, b, geom })
    }

    /// `x [N, cin, D, H, W]`, `w [cout, cin, kd, kh, kw]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, stride: [usize; 3], pad: [usize; 3]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 5 || ws.len() != 5 || ws[1] != xs[1] || self.value(b).len() != ws[0] {
            return Err(Error::shape("conv3d", &xs, &ws));
        }
        let geom = ConvGeom {
            n: xs[0],
            cin: xs[1],
            cout: ws[0],
            input: [xs[2], xs[3], xs[4]],
            kernel: [ws[2], ws[3], ws[4]],
            stride,
            pad,
        };
        let o = geom.output();
        if o.contains(&0) {
            return Err(Error::shape("conv3d", &xs, &ws));
        }
        let out = kernels::conv_forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let shape = vec![xs[0], ws[0], o[0], o[1], o[2]];
        self.push("conv3d", Array::from_parts(shape, out), Op::Conv { x, w, b, geom })
    }

    /// Non-overlapping 2x2 max pooling over `[N, C, H, W]`.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return Err(Error::shape("maxpool2d", &xs, &[0, 0, 2, 2]));
        }
        let (vals, idx, o) = kernels::maxpool_forward(xs[0] * xs[1], [1, xs[2], xs[3]], [1, 2, 2], self.value(x).data());
        let shape = vec![xs[0], xs[1], o[1], o[2]];
        self.push("maxpool2d", Array::from_parts(shape, vals), Op::MaxPool(x, idx))
    }

    /// Non-overlapping max pooling over `[N, C, D, H, W]`.
    pub fn maxpool3d(&mut self, x: Var, window: [usize; 3]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 5 || (0..3).any(|a| xs[a + 2] < window[a] || window[a] == 0) {
            return Err(Error::shape("maxpool3d", &xs, &window));
        }
        let (vals, idx, o) = kernels::maxpool_forward(xs[0] * xs[1], [xs[2], xs[3], xs[4]], window, self.value(x).data());
        let shape = vec![xs[0], xs[1], o[0], o[1], o[2]];
        self.push("maxpool3d", Array::from_parts(shape, vals), Op::MaxPool(x, idx))
    }

    /// Temporal max pooling with window and stride 2 over `[L, C]`.
    pub fn maxpool1d(&mut self, x: Var) -> Result<Var> {
        let (len, c) = self.dims2(x, "maxpool1d")?;
        if len < 2 {
            return Err(Error::SequenceTooShort {
                op: "maxpool1d",
                len,
                min: 2,
            });
        }
        let out_len = len / 2;
        let xs = self.value(x).data();
        let mut vals = Vec::with_capacity(out_len * c);
        let mut idx = Vec::with_capacity(out_len * c);
        for t in 0..out_len {
            for j in 0..c {
                let (a, b) = ((2 * t) * c + j, (2 * t + 1) * c + j);
                let i = if xs[b] > xs[a] { b } else { a };
                vals.push(xs[i]);
                idx.push(i);
            }
        }
        self.push("maxpool1d", Array::from_parts(vec![out_len, c], vals), Op::MaxPool(x, idx))
    }

    /// Scaled dot-product attention over already-projected `q [Lq, d]`,
    /// `k [Lk, d]`, `v [Lk, d]`, split into `heads` column groups.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (lq, d) = self.dims2(q, "attention")?;
        let (lk, dk) = self.dims2(k, "attention")?;
        if dk != d || self.shape(v) != self.shape(k) {
            return Err(Error::shape("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "model dim {d} not divisible by {heads} heads"
            )));
        }
        if causal && lq != lk {
            return Err(Error::shape("causal attention", self.shape(q), self.shape(k)));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qs, ks, vs) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; heads * lq * lk];
        let mut out = vec![0.0; lq * d];
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..lq {
                let p = &mut probs[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                let limit = if causal { i + 1 } else { lk };
                let qrow = &qs[i * d + c0..i * d + c0 + dh];
                let mut max = f64::NEG_INFINITY;
                for t in 0..limit {
                    let krow = &ks[t * d + c0..t * d + c0 + dh];
                    let s = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                    p[t] = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for pt in p[..limit].iter_mut() {
                    *pt = (*pt - max).exp();
                    z += *pt;
                }
                for pt in p[..limit].iter_mut() {
                    *pt /= z;
                }
                let orow = &mut out[i * d + c0..i * d + c0 + dh];
                for (t, &pt) in p[..limit].iter().enumerate() {
                    let vrow = &vs[t * d + c0..t * d + c0 + dh];
                    for (o, vv) in orow.iter_mut().zip(vrow) {
                        *o += pt * vv;
                    }
                }
            }
        }
        let probs = Array::from_parts(vec![heads, lq, lk], probs);
        self.push(
            "attention",
            Array::from_parts(vec![lq, d], out),
            Op::Attention { q, k, v, heads, probs },
        )
    }

    /// Mean token-level cross-entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (r, c) = self.dims2(logits, "cross_entropy")?;
        if targets.len() != r {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(Error::InvalidArgument(format!("target class {bad} >= {c}")));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::InvalidArgument("cross_entropy with no targets".into()));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, t) in probs.chunks_mut(c).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            if let Some(t) = t {
                loss += lse - row[*t];
            }
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        self.push(
            "cross_entropy",
            Array::scalar(loss / count as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        )
    }

    /// Reverse sweep from a scalar `loss`, accumulating into the gradient
    /// slots of every parameter reached. Unreached parameters are untouched.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                if let Some(g) = &grads[i] {
                    store.accumulate_grad(name, g)?;
                }
            }
        }
        Ok(())
    }

    /// Gradient of `loss` with respect to every node on the tape.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Array>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            for inp in self.nodes[i].op.inputs() {
                if inp.0 >= i {
                    return Err(Error::Cycle(i));
                }
            }
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, d: Array| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    let da = kernels::matmul_nt(g.data(), self.value(*b).data(), m, n, k);
                    acc(*a, Array::from_parts(vec![m, k], da));
                }
                if self.wants(*b) {
                    let db = kernels::matmul_tn(self.value(*a).data(), g.data(), m, k, n);
                    acc(*b, Array::from_parts(vec![k, n], db));
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                if self.wants(*a) {
                    let da = kernels::matmul(g.data(), self.value(*b).data(), m, n, k);
                    acc(*a, Array::from_parts(vec![m, k], da));
                }
                if self.wants(*b) {
                    let db = kernels::matmul_tn(g.data(), self.value(*a).data(), m, n, k);
                    acc(*b, Array::from_parts(vec![n, k], db));
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose2()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                acc(*a, Array::from_parts(g.shape().to_vec(), da));
                acc(*b, Array::from_parts(g.shape().to_vec(), db));
            }
            Op::AddRow(x, b) => {
                let d = self.value(*b).len();
                let mut db = vec![0.0; d];
                for row in g.data().chunks(d) {
                    for (a, v) in db.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                acc(*x, g.clone());
                acc(*b, Array::from_parts(self.shape(*b).to_vec(), db));
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
            Op::ScaleBy(x, s) => {
                let c = self.value(*s).item();
                let ds: f64 = g.data().iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                acc(*x, g.map(|v| v * c));
                acc(*s, Array::from_parts(self.shape(*s).to_vec(), vec![ds]));
            }
            Op::Exp(x) => {
                let d = g.data().iter().zip(out.data()).map(|(a, b)| a * b).collect();
                acc(*x, Array::from_parts(g.shape().to_vec(), d));
            }
            Op::Relu(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(a, b)| if *b > 0.0 { *a } else { 0.0 })
                    .collect();
                acc(*x, Array::from_parts(g.shape().to_vec(), d));
            }
            Op::Sum(x) => acc(*x, Array::full(self.shape(*x), g.item())),
            Op::MeanRows(x) => {
                let r = self.shape(*x)[0];
                let mut d = Vec::with_capacity(self.value(*x).len());
                for _ in 0..r {
                    d.extend(g.data().iter().map(|v| v / r as f64));
                }
                acc(*x, Array::from_parts(self.shape(*x).to_vec(), d));
            }
            Op::SoftmaxRows(x) => {
                let c = out.shape()[1];
                let mut d = vec![0.0; out.len()];
                for ((drow, prow), grow) in d.chunks_mut(c).zip(out.data().chunks(c)).zip(g.data().chunks(c)) {
                    let dot: f64 = prow.iter().zip(grow).map(|(p, gg)| p * gg).sum();
                    for j in 0..c {
                        drow[j] = prow[j] * (grow[j] - dot);
                    }
                }
                acc(*x, Array::from_parts(out.shape().to_vec(), d));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = out.shape()[1];
                let gm = self.value(*gamma).data();
                let mut dx = vec![0.0; out.len()];
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                for (r, is) in inv_std.iter().enumerate() {
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..d {
                        let dh = gr[j] * gm[j];
                        s1 += dh;
                        s2 += dh * hr[j];
                        dg[j] += gr[j] * hr[j];
                        db[j] += gr[j];
                    }
                    for j in 0..d {
                        let dh = gr[j] * gm[j];
                        dx[r * d + j] = is / d as f64 * (d as f64 * dh - s1 - hr[j] * s2);
                    }
                }
                acc(*x, Array::from_parts(out.shape().to_vec(), dx));
                acc(*gamma, Array::from_parts(self.shape(*gamma).to_vec(), dg));
                acc(*beta, Array::from_parts(self.shape(*beta).to_vec(), db));
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let gm = self.value(*gamma).data();
                let mut s1 = vec![0.0; c];
                let mut s2 = vec![0.0; c];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        let gv = g.data()[i * c + j];
                        let h = xhat[i * c + j];
                        s1[j] += gv * gm[j];
                        s2[j] += gv * gm[j] * h;
                        dg[j] += gv * h;
                        db[j] += gv;
                    }
                }
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        let dh = g.data()[i * c + j] * gm[j];
                        dx[i * c + j] =
                            inv_std[j] / r as f64 * (r as f64 * dh - s1[j] - xhat[i * c + j] * s2[j]);
                    }
                }
                acc(*x, Array::from_parts(vec![r, c], dx));
                acc(*gamma, Array::from_parts(self.shape(*gamma).to_vec(), dg));
                acc(*beta, Array::from_parts(self.shape(*beta).to_vec(), db));
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let gm = self.value(*gamma).data();
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        let gv = g.data()[i * c + j];
                        dg[j] += gv * xhat[i * c + j];
                        db[j] += gv;
                        dx[i * c + j] = gv * gm[j] * inv_std[j];
                    }
                }
                acc(*x, Array::from_parts(vec![r, c], dx));
                acc(*gamma, Array::from_parts(self.shape(*gamma).to_vec(), dg));
                acc(*beta, Array::from_parts(self.shape(*beta).to_vec(), db));
            }
            Op::L2NormalizeRows { x, norms } => {
                let d = out.shape()[1];
                let mut dx = vec![0.0; out.len()];
                for (r, n) in norms.iter().enumerate() {
                    let y = &out.data()[r * d..(r + 1) * d];
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[r * d + j] = (gr[j] - y[j] * dot) / n;
                    }
                }
                acc(*x, Array::from_parts(out.shape().to_vec(), dx));
            }
            Op::ConcatCols(a, b) => {
                let (r, ca) = (self.shape(*a)[0], self.shape(*a)[1]);
                let cb = self.shape(*b)[1];
                let mut da = Vec::with_capacity(r * ca);
                let mut db = Vec::with_capacity(r * cb);
                for row in g.data().chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                acc(*a, Array::from_parts(vec![r, ca], da));
                acc(*b, Array::from_parts(vec![r, cb], db));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    let d = g.data()[off..off + n].to_vec();
                    acc(*p, Array::from_parts(self.shape(*p).to_vec(), d));
                    off += n;
                }
            }
            Op::SliceRows(x, start) => {
                let src = self.value(*x);
                let w = src.row_len();
                let mut d = vec![0.0; src.len()];
                d[start * w..start * w + g.len()].copy_from_slice(g.data());
                acc(*x, Array::from_parts(src.shape().to_vec(), d));
            }
            Op::GatherRows(x, idx) => {
                let src = self.value(*x);
                let w = src.row_len();
                let mut d = vec![0.0; src.len()];
                for (k, &r) in idx.iter().enumerate() {
                    for j in 0..w {
                        d[r * w + j] += g.data()[k * w + j];
                    }
                }
                acc(*x, Array::from_parts(src.shape().to_vec(), d));
            }
            Op::Reshape(x) => acc(*x, Array::from_parts(self.shape(*x).to_vec(), g.data().to_vec())),
            Op::Conv1d { x, w, b } => {
                let (len, cin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let ws = self.shape(*w);
                let (dx, dw, db) = kernels::conv1d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g.data(),
                    len,
                    cin,
                    ws[0],
                    ws[2],
                );
                acc(*x, Array::from_parts(vec![len, cin], dx));
                acc(*w, Array::from_parts(ws.to_vec(), dw));
                acc(*b, Array::from_parts(self.shape(*b).to_vec(), db));
            }
            Op::Conv { x, w, b, geom } => {
                let need_dx = self.wants(*x);
                let (dx, dw, db) =
                    kernels::conv_backward(geom, self.value(*x).data(), self.value(*w).data(), g.data(), need_dx);
                if need_dx {
                    acc(*x, Array::from_parts(self.shape(*x).to_vec(), dx));
                }
                acc(*w, Array::from_parts(self.shape(*w).to_vec(), dw));
                acc(*b, Array::from_parts(self.shape(*b).to_vec(), db));
            }
            Op::MaxPool(x, idx) => {
                let mut d = vec![0.0; self.value(*x).len()];
                for (k, &src) in idx.iter().enumerate() {
                    d[src] += g.data()[k];
                }
                acc(*x, Array::from_parts(self.shape(*x).to_vec(), d));
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (lq, d) = (self.shape(*q)[0], self.shape(*q)[1]);
                let lk = self.shape(*k)[0];
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qs, ks, vs) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![0.0; lq * d];
                let mut dk = vec![0.0; lk * d];
                let mut dv = vec![0.0; lk * d];
                let mut dp = vec![0.0; lk];
                for h in 0..*heads {
                    let c0 = h * dh;
                    for i in 0..lq {
                        let p = &probs.data()[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                        let grow = &g.data()[i * d + c0..i * d + c0 + dh];
                        let mut dot = 0.0;
                        for t in 0..lk {
                            let vrow = &vs[t * d + c0..t * d + c0 + dh];
                            dp[t] = grow.iter().zip(vrow).map(|(a, b)| a * b).sum();
                            dot += p[t] * dp[t];
                            if p[t] != 0.0 {
                                for (dvv, gg) in dv[t * d + c0..t * d + c0 + dh].iter_mut().zip(grow) {
                                    *dvv += p[t] * gg;
                                }
                            }
                        }
                        for t in 0..lk {
                            let ds = p[t] * (dp[t] - dot) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            for c in 0..dh {
                                dq[i * d + c0 + c] += ds * ks[t * d + c0 + c];
                                dk[t * d + c0 + c] += ds * qs[i * d + c0 + c];
                            }
                        }
                    }
                }
                acc(*q, Array::from_parts(vec![lq, d], dq));
                acc(*k, Array::from_parts(vec![lk, d], dk));
                acc(*v, Array::from_parts(vec![lk, d], dv));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let c = self.shape(*logits)[1];
                let scale = g.item() / *count as f64;
                let mut d = probs.clone();
                for (row, t) in d.chunks_mut(c).zip(targets) {
                    match t {
                        Some(t) => {
                            row[*t] -= 1.0;
                            row.iter_mut().for_each(|v| *v *= scale);
                        }
                        None => row.fill(0.0),
                    }
                }
                acc(*logits, Array::from_parts(self.shape(*logits).to_vec(), d));
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}

/// Folds recorded batch statistics into the running buffers
/// (`<key>.running_mean`, `<key>.running_var`).
pub fn apply_batch_norm_updates(store: &mut ParamStore, updates: &[BatchNormUpdate]) {
    for u in updates {
        let mk = format!("{}.running_mean", u.key);
        let vk = format!("{}.running_var", u.key);
        let c = u.mean.len();
        let mut rm = store.buffer(&mk).cloned().unwrap_or_else(|| Array::zeros(&[c]));
        let mut rv = store.buffer(&vk).cloned().unwrap_or_else(|| Array::full(&[c], 1.0));
        for j in 0..c {
            rm.data_mut()[j] = (1.0 - BN_MOMENTUM) * rm.data()[j] + BN_MOMENTUM * u.mean[j];
            rv.data_mut()[j] = (1.0 - BN_MOMENTUM) * rv.data()[j] + BN_MOMENTUM * u.var[j];
        }
        store.set_buffer(&mk, rm);
        store.set_buffer(&vk, rv);
    }
}
