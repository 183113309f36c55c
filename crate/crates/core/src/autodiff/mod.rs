//! Reverse-mode differentiation over `[channels, time]` tensors.
//!
//! A [`Graph`] is an append-only arena: every op pushes a node whose inputs
//! have smaller ids, so reverse id order is a valid topological order for
//! [`Graph::backward`]. Parameters enter a graph as leaves tagged with a
//! [`ParamKey`]; after backward, [`Graph::param_grads`] collects their
//! gradients per parameter set. Graphs own their data and are `Send`, so
//! independent graphs can be built on different workers.

pub mod conv;
pub mod param;
pub mod spectral;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::real::Real;

pub use param::{Gradients, Param, ParamKey, ParamSet};
pub use spectral::AutocorrSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("upsample factor must be >= 1")]
    BadFactor,
    #[error("weight norm: zero direction norm for output channel {0}")]
    ZeroNorm(usize),
    #[error("unknown activation kind {0:?}")]
    UnknownUnary(String),
    #[error("invalid argument to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    LeakyRelu(f64),
    Abs,
    Square,
    Sqrt,
    Ln,
}

impl Unary {
    pub const LEAKY: Unary = Unary::LeakyRelu(0.2);

    fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Abs => "abs",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Ln => "ln",
        }
    }

    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Unary::LeakyRelu(a) => {
                if x >= T::zero() {
                    x
                } else {
                    T::lit(a) * x
                }
            }
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Ln => x.ln(),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn deriv<T: Real>(self, x: T, y: T) -> T {
        match self {
            Unary::Tanh => T::one() - y * y,
            Unary::Sigmoid => y * (T::one() - y),
            Unary::LeakyRelu(a) => {
                if x >= T::zero() {
                    T::one()
                } else {
                    T::lit(a)
                }
            }
            Unary::Abs => {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Square => x + x,
            // subgradient 0 at the origin
            Unary::Sqrt => {
                if y > T::zero() {
                    T::lit(0.5) / y
                } else {
                    T::zero()
                }
            }
            Unary::Ln => T::one() / x,
        }
    }
}

impl FromStr for Unary {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Unary::Tanh),
            "sigmoid" => Ok(Unary::Sigmoid),
            "leaky_relu" | "leaky_relu(0.2)" => Ok(Unary::LEAKY),
            "abs" => Ok(Unary::Abs),
            "square" => Ok(Unary::Square),
            "sqrt" => Ok(Unary::Sqrt),
            "ln" => Ok(Unary::Ln),
            other => Err(TensorError::UnknownUnary(other.to_string())),
        }
    }
}

impl fmt::Display for Unary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unary::LeakyRelu(a) => write!(f, "leaky_relu({a})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op<T> {
    Leaf,
    Param(ParamKey),
    Binary(BinKind, Var, Var),
    Scale(Var, T),
    Offset(Var),
    Unary(Unary, Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Upsample(Var, usize),
    Broadcast(Var),
    Slice(Var, usize),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
    },
    WeightNorm {
        v: Var,
        g: Var,
        norms: Vec<T>,
    },
    DftMag {
        x: Var,
        fft: usize,
        hop: usize,
        parts: spectral::DftParts<T>,
    },
    Project {
        a: Var,
        matrix: Arc<Vec<T>>,
    },
    Autocorr(Var, AutocorrSpec),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Binary(_, a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Unary(_, a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Upsample(a, _)
            | Op::Broadcast(a)
            | Op::Slice(a, _)
            | Op::Autocorr(a, _)
            | Op::Project { a, .. } => vec![*a],
            Op::Concat(v) => v.clone(),
            Op::Conv { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::WeightNorm { v, g, .. } => vec![*v, *g],
            Op::DftMag { x, .. } => vec![*x],
        }
    }
}

struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    check_finite: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// `(channels, time)` view of a shape; vectors are a single channel.
fn ct(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [t] => (1, *t),
        [c, t] => (*c, *t),
        [c, rest @ ..] => (*c, numel(rest)),
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, contrib: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contrib) {
                *a = *a + c;
            }
        }
        None => *slot = Some(contrib),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Enables or disables the per-op finiteness check (on in debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, leaf_grad: bool) -> Result<Var> {
        debug_assert_eq!(value.len(), numel(&shape));
        let requires_grad =
            leaf_grad || op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        if self.check_finite && value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(op_name(&op)));
        }
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Vec<T>, shape: &[usize]) -> Result<Var> {
        check_len("constant", &value, shape)?;
        self.push(value, shape.to_vec(), Op::Leaf, false)
    }

    /// Free leaf that collects a gradient.
    pub fn variable(&mut self, value: Vec<T>, shape: &[usize]) -> Result<Var> {
        check_len("variable", &value, shape)?;
        self.push(value, shape.to_vec(), Op::Leaf, true)
    }

    pub fn param(&mut self, key: ParamKey, value: &[T], shape: &[usize]) -> Result<Var> {
        check_len("param", value, shape)?;
        self.push(value.to_vec(), shape.to_vec(), Op::Param(key), true)
    }

    /// Detached copy of `v` as a new constant.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let n = &self.nodes[v.0];
        let (value, shape) = (n.value.clone(), n.shape.clone());
        self.push(value, shape, Op::Leaf, false)
    }

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (na, nb) = (numel(&sa), numel(&sb));
        let shape = if sa == sb || nb == 1 {
            sa.clone()
        } else if na == 1 {
            sb.clone()
        } else {
            return Err(TensorError::ShapeMismatch {
                op: bin_name(kind),
                lhs: sa,
                rhs: sb,
            });
        };
        let n = numel(&shape);
        let (va, vb) = (self.value(a), self.value(b));
        let value = (0..n)
            .map(|i| {
                let x = va[if na == 1 { 0 } else { i }];
                let y = vb[if nb == 1 { 0 } else { i }];
                match kind {
                    BinKind::Add => x + y,
                    BinKind::Sub => x - y,
                    BinKind::Mul => x * y,
                    BinKind::Div => x / y,
                }
            })
            .collect();
        self.push(value, shape, Op::Binary(kind, a, b), false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push(value, shape, Op::Scale(a, c), false)
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: T) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| x + c).collect();
        let shape = self.shape(a).to_vec();
        self.push(value, shape, Op::Offset(a), false)
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| kind.apply(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(value, shape, Op::Unary(kind, a), false)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::LEAKY, a)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).iter().copied().sum();
        self.push(vec![s], vec![1], Op::Sum(a), false)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(TensorError::Invalid {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let s: T = self.value(a).iter().copied().sum();
        self.push(vec![s / T::lit(n as f64)], vec![1], Op::Mean(a), false)
    }

    /// Stacks `[c_i, t]` tensors along channels.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let t = ct(self.shape(first)).1;
        let mut c_total = 0;
        let mut value = Vec::new();
        for &p in parts {
            let (c, tp) = ct(self.shape(p));
            if tp != t {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            c_total += c;
            value.extend_from_slice(self.value(p));
        }
        self.push(value, vec![c_total, t], Op::Concat(parts.to_vec()), false)
    }

    /// Nearest-neighbour upsampling along time.
    pub fn upsample(&mut self, a: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(TensorError::BadFactor);
        }
        let (c, t) = ct(self.shape(a));
        let src = self.value(a);
        let mut value = Vec::with_capacity(c * t * factor);
        for &s in src {
            value.extend(std::iter::repeat_n(s, factor));
        }
        self.push(value, vec![c, t * factor], Op::Upsample(a, factor), false)
    }

    /// Repeats a `[c]` or `[c, 1]` tensor over `len` time steps.
    pub fn broadcast_time(&mut self, a: Var, len: usize) -> Result<Var> {
        let c = self.value(a).len();
        let mut value = Vec::with_capacity(c * len);
        for &s in self.value(a) {
            value.extend(std::iter::repeat_n(s, len));
        }
        self.push(value, vec![c, len], Op::Broadcast(a), false)
    }

    /// Time window `[start, start + len)` of every channel.
    pub fn slice_time(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (c, t) = ct(self.shape(a));
        if start + len > t {
            return Err(TensorError::Invalid {
                op: "slice_time",
                msg: format!("[{start}, {}) outside length {t}", start + len),
            });
        }
        let src = self.value(a);
        let mut value = Vec::with_capacity(c * len);
        for ch in 0..c {
            value.extend_from_slice(&src[ch * t + start..ch * t + start + len]);
        }
        self.push(value, vec![c, len], Op::Slice(a, start), false)
    }

    /// Same-length dilated convolution, weight `[c_out, c_in, k]` with odd `k`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, dilation: usize) -> Result<Var> {
        let (c_in, len) = ct(self.shape(x));
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: self.shape(x).to_vec(),
                rhs: ws,
            });
        }
        let (c_out, k) = (ws[0], ws[2]);
        if k % 2 == 0 || dilation == 0 {
            return Err(TensorError::Invalid {
                op: "conv1d",
                msg: format!("kernel {k} must be odd and dilation {dilation} >= 1"),
            });
        }
        if let Some(b) = b {
            if self.value(b).len() != c_out {
                return Err(TensorError::ShapeMismatch {
                    op: "conv1d bias",
                    lhs: vec![c_out],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let dims = conv::ConvDims {
            c_in,
            c_out,
            k,
            len,
            dilation,
        };
        let value = conv::forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &dims);
        self.push(value, vec![c_out, len], Op::Conv { x, w, b, dilation }, false)
    }

    /// `g[c] * v[c, ..] / ||v[c, ..]||` per output channel `c`.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let shape = self.shape(v).to_vec();
        let c_out = shape[0];
        if self.value(g).len() != c_out {
            return Err(TensorError::ShapeMismatch {
                op: "weight_norm",
                lhs: shape,
                rhs: self.shape(g).to_vec(),
            });
        }
        let per = numel(&shape) / c_out.max(1);
        let (vv, gv) = (self.value(v), self.value(g));
        let mut norms = Vec::with_capacity(c_out);
        let mut value = Vec::with_capacity(vv.len());
        for c in 0..c_out {
            let row = &vv[c * per..(c + 1) * per];
            let n = crate::real::dot(row, row).sqrt();
            if n == T::zero() {
                return Err(TensorError::ZeroNorm(c));
            }
            norms.push(n);
            let s = gv[c] / n;
            value.extend(row.iter().map(|&r| r * s));
        }
        self.push(value, shape, Op::WeightNorm { v, g, norms }, false)
    }

    /// Framed Hann-windowed DFT magnitudes of a single-channel signal,
    /// shape `[frames, fft/2 + 1]`.
    pub fn dft_magnitude(&mut self, x: Var, fft: usize, hop: usize) -> Result<Var> {
        let len = self.value(x).len();
        crate::dsp::stft::check_fft(fft, hop, len).map_err(|e| TensorError::Invalid {
            op: "dft_magnitude",
            msg: e.to_string(),
        })?;
        let parts = spectral::dft_parts(self.value(x), fft, hop);
        let value = spectral::magnitudes(&parts);
        let frames = spectral::n_frames(len, hop);
        self.push(
            value,
            vec![frames, fft / 2 + 1],
            Op::DftMag { x, fft, hop, parts },
            false,
        )
    }

    /// `out[f, k] = sum_b a[f, b] * matrix[k, b]` for a constant `k x b` matrix.
    pub fn project(&mut self, a: Var, matrix: Arc<Vec<T>>, out_dim: usize) -> Result<Var> {
        let (rows, inner) = ct(self.shape(a));
        if matrix.len() != out_dim * inner {
            return Err(TensorError::ShapeMismatch {
                op: "project",
                lhs: self.shape(a).to_vec(),
                rhs: vec![out_dim, matrix.len() / out_dim.max(1)],
            });
        }
        let src = self.value(a);
        let mut value = vec![T::zero(); rows * out_dim];
        crate::par::for_each_chunk(&mut value, out_dim.max(1), |r, row| {
            let ar = &src[r * inner..(r + 1) * inner];
            for (k, o) in row.iter_mut().enumerate() {
                *o = crate::real::dot(&matrix[k * inner..(k + 1) * inner], ar);
            }
        });
        self.push(value, vec![rows, out_dim], Op::Project { a, matrix }, false)
    }

    /// Framed normalized autocorrelation, shape `[frames, n_lags]`.
    pub fn autocorr(&mut self, x: Var, spec: AutocorrSpec) -> Result<Var> {
        if spec.hop == 0 || spec.min_lag > spec.max_lag || spec.max_lag >= spec.frame {
            return Err(TensorError::Invalid {
                op: "autocorr",
                msg: format!("{spec:?}"),
            });
        }
        let len = self.value(x).len();
        let value = spectral::autocorr_forward(self.value(x), &spec);
        let frames = spectral::n_frames(len, spec.hop);
        self.push(value, vec![frames, spec.n_lags()], Op::Autocorr(x, spec), false)
    }

    /// Propagates d(loss)/d(node) to every leaf that requires a gradient.
    /// Repeated calls accumulate into the leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = pending[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            match node.op {
                Op::Leaf | Op::Param(_) => accumulate(&mut self.grads[id], g),
                _ => {
                    for (input, contrib) in self.local_backward(id, g) {
                        if self.nodes[input.0].requires_grad {
                            accumulate(&mut pending[input.0], contrib);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn local_backward(&self, id: usize, g: Vec<T>) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Binary(kind, a, b) => self.binary_backward(*kind, *a, *b, &g),
            Op::Scale(a, c) => vec![(*a, g.iter().map(|&x| x * *c).collect())],
            Op::Offset(a) => vec![(*a, g)],
            Op::Unary(kind, a) => {
                let x = self.value(*a);
                let y = &node.value;
                let d = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&gi, (&xi, &yi))| gi * kind.deriv(xi, yi))
                    .collect();
                vec![(*a, d)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.value(*a).len()])],
            Op::Mean(a) => {
                let n = self.value(*a).len();
                vec![(*a, vec![g[0] / T::lit(n as f64); n])]
            }
            Op::Concat(parts) => {
                let mut out = Vec::with_capacity(parts.len());
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    out.push((p, g[off..off + n].to_vec()));
                    off += n;
                }
                out
            }
            Op::Upsample(a, factor) => {
                let d = g.chunks_exact(*factor).map(|c| c.iter().copied().sum()).collect();
                vec![(*a, d)]
            }
            Op::Broadcast(a) => {
                let len = node.shape[1];
                let d = g.chunks_exact(len.max(1)).map(|c| c.iter().copied().sum()).collect();
                vec![(*a, d)]
            }
            Op::Slice(a, start) => {
                let (c, t) = ct(self.shape(*a));
                let len = node.shape[1];
                let mut d = vec![T::zero(); c * t];
                for ch in 0..c {
                    d[ch * t + start..ch * t + start + len]
                        .copy_from_slice(&g[ch * len..(ch + 1) * len]);
                }
                vec![(*a, d)]
            }
            Op::Conv { x, w, b, dilation } => {
                let (c_in, len) = ct(self.shape(*x));
                let ws = self.shape(*w);
                let dims = conv::ConvDims {
                    c_in,
                    c_out: ws[0],
                    k: ws[2],
                    len,
                    dilation: *dilation,
                };
                let mut out = Vec::with_capacity(3);
                if self.requires_grad(*x) {
                    out.push((*x, conv::backward_input(&g, self.value(*w), &dims)));
                }
                if self.requires_grad(*w) {
                    out.push((*w, conv::backward_weight(&g, self.value(*x), &dims)));
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        out.push((*b, conv::backward_bias(&g, &dims)));
                    }
                }
                out
            }
            Op::WeightNorm { v, g: gain, norms } => {
                let vv = self.value(*v);
                let gv = self.value(*gain);
                let c_out = norms.len();
                let per = vv.len() / c_out;
                let mut dv = vec![T::zero(); vv.len()];
                let mut dg = vec![T::zero(); c_out];
                for c in 0..c_out {
                    let n = norms[c];
                    let row = &vv[c * per..(c + 1) * per];
                    let gr = &g[c * per..(c + 1) * per];
                    // u = v/n ; dg = <gw, u> ; dv = (g/n) (gw - u <u, gw>)
                    let proj = crate::real::dot(gr, row) / n;
                    dg[c] = proj;
                    let s = gv[c] / n;
                    for i in 0..per {
                        dv[c * per + i] = s * (gr[i] - row[i] / n * proj);
                    }
                }
                vec![(*v, dv), (*gain, dg)]
            }
            Op::DftMag { x, fft, hop, parts } => {
                let len = self.value(*x).len();
                vec![(*x, spectral::dft_mag_backward(&g, parts, len, *fft, *hop))]
            }
            Op::Project { a, matrix } => {
                let (rows, inner) = ct(self.shape(*a));
                let out_dim = node.shape[1];
                let mut d = vec![T::zero(); rows * inner];
                crate::par::for_each_chunk(&mut d, inner.max(1), |r, row| {
                    for k in 0..out_dim {
                        crate::real::axpy(g[r * out_dim + k], &matrix[k * inner..(k + 1) * inner], row);
                    }
                });
                vec![(*a, d)]
            }
            Op::Autocorr(x, spec) => {
                vec![(*x, spectral::autocorr_backward(&g, self.value(*x), spec))]
            }
        }
    }

    fn binary_backward(&self, kind: BinKind, a: Var, b: Var, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let (va, vb) = (self.value(a), self.value(b));
        let (na, nb) = (va.len(), vb.len());
        let at = |v: &[T], n: usize, i: usize| v[if n == 1 { 0 } else { i }];
        let reduce = |full: Vec<T>, n: usize| -> Vec<T> {
            if n == 1 && full.len() != 1 {
                vec![full.into_iter().sum()]
            } else {
                full
            }
        };
        let (da, db): (Vec<T>, Vec<T>) = match kind {
            BinKind::Add => (g.to_vec(), g.to_vec()),
            BinKind::Sub => (g.to_vec(), g.iter().map(|&x| -x).collect()),
            BinKind::Mul => (
                g.iter().enumerate().map(|(i, &x)| x * at(vb, nb, i)).collect(),
                g.iter().enumerate().map(|(i, &x)| x * at(va, na, i)).collect(),
            ),
            BinKind::Div => (
                g.iter().enumerate().map(|(i, &x)| x / at(vb, nb, i)).collect(),
                g.iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let bi = at(vb, nb, i);
                        -x * at(va, na, i) / (bi * bi)
                    })
                    .collect(),
            ),
        };
        vec![(a, reduce(da, na)), (b, reduce(db, nb))]
    }

    /// Gradients of all parameter leaves belonging to `set`, summed per
    /// parameter index. Parameters that received nothing get zeros.
    pub fn param_grads(&self, set: &ParamSet<T>) -> Gradients<T> {
        let mut out = Gradients::zeros_like(set);
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param(key) = node.op {
                if key.set == set.tag() {
                    if let Some(g) = &self.grads[id] {
                        out.add_at(key.index, g);
                    }
                }
            }
        }
        out
    }
}

fn check_len<T>(op: &'static str, value: &[T], shape: &[usize]) -> Result<()> {
    if value.len() != numel(shape) {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: vec![value.len()],
            rhs: shape.to_vec(),
        });
    }
    Ok(())
}

fn bin_name(k: BinKind) -> &'static str {
    match k {
        BinKind::Add => "add",
        BinKind::Sub => "sub",
        BinKind::Mul => "mul",
        BinKind::Div => "div",
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Param(_) => "param",
        Op::Binary(k, ..) => bin_name(*k),
        Op::Scale(..) => "scale",
        Op::Offset(..) => "offset",
        Op::Unary(k, _) => k.name(),
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::Concat(_) => "concat",
        Op::Upsample(..) => "upsample",
        Op::Broadcast(_) => "broadcast_time",
        Op::Slice(..) => "slice_time",
        Op::Conv { .. } => "conv1d",
        Op::WeightNorm { .. } => "weight_norm",
        Op::DftMag { .. } => "dft_magnitude",
        Op::Project { .. } => "project",
        Op::Autocorr(..) => "autocorr",
    }
}
