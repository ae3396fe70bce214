//! Tape-based reverse-mode differentiation over [`Array2`] values.
//!
//! Operations are recorded in execution order on a [`Graph`]; calling
//! [`Graph::backward`] walks the tape in reverse. Recurrent, convolutional and
//! normalisation layers are recorded as single fused nodes with hand-written
//! backward rules rather than being decomposed into scalar primitives.

use crate::error::{Error, Result};

use super::{Array2, ParamStore};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Operation kinds, used for fault injection in gradient-check fixtures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Add,
    Scale,
    AddColumn,
    ConcatRows,
    SliceRows,
    LeakyRelu,
    Tanh,
    Conv1d,
    GroupNorm,
    Gru,
    MeanAbsDiff,
    SoftmaxCrossEntropy,
    Embedding,
    WeightedSum,
}

impl OpKind {
    pub fn parse(name: &str) -> Option<OpKind> {
        use OpKind::*;
        Some(match name {
            "matmul" => MatMul,
            "add" => Add,
            "scale" => Scale,
            "add_column" => AddColumn,
            "concat_rows" => ConcatRows,
            "slice_rows" => SliceRows,
            "leaky_relu" => LeakyRelu,
            "tanh" => Tanh,
            "conv1d" => Conv1d,
            "group_norm" => GroupNorm,
            "gru" => Gru,
            "mean_abs_diff" => MeanAbsDiff,
            "softmax_xent" => SoftmaxCrossEntropy,
            "embedding" => Embedding,
            "weighted_sum" => WeightedSum,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv1dSpec {
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
}

struct GruCache {
    hidden: usize,
    r: Array2,
    z: Array2,
    n: Array2,
    h_prev: Array2,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    AddColumn(Var, Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        spec: Conv1dSpec,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        xhat: Array2,
        inv_std: Vec<f64>,
    },
    Gru {
        x: Var,
        w: Var,
        u: Var,
        b: Var,
        h0: Option<Var>,
        cache: GruCache,
    },
    MeanAbsDiff(Var, Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Array2,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    WeightedSum(Var, Array2),
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Scale(..) => OpKind::Scale,
            Op::AddColumn(..) => OpKind::AddColumn,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::GroupNorm { .. } => OpKind::GroupNorm,
            Op::Gru { .. } => OpKind::Gru,
            Op::MeanAbsDiff(..) => OpKind::MeanAbsDiff,
            Op::SoftmaxXent { .. } => OpKind::SoftmaxCrossEntropy,
            Op::Embedding { .. } => OpKind::Embedding,
            Op::WeightedSum(..) => OpKind::WeightedSum,
        })
    }
}

struct Node {
    value: Array2,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(Var, String)>,
    grads: Vec<Option<Array2>>,
    fault: Option<OpKind>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One GRU step: returns `(h, r, z, n)` for input pre-activations `a`
/// (`3h` values, already `W x + b`) and previous state `h_prev`.
pub(crate) fn gru_cell(
    u: &Array2,
    a: &[f64],
    h_prev: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = h_prev.len();
    let mut r = vec![0.0; hd];
    let mut z = vec![0.0; hd];
    for i in 0..hd {
        r[i] = sigmoid(a[i] + super::array::dot(u.row(i), h_prev));
        z[i] = sigmoid(a[hd + i] + super::array::dot(u.row(hd + i), h_prev));
    }
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    let mut n = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    for i in 0..hd {
        n[i] = (a[2 * hd + i] + super::array::dot(u.row(2 * hd + i), &rh)).tanh();
        h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * n[i];
    }
    (h, r, z, n)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scales the input gradients of every `kind` node by 1.01 during
    /// backward. Exists so gradient-check tooling can prove it catches a
    /// broken rule.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2 {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Array2> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Array2, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            let what = op
                .kind()
                .map_or_else(|| "leaf".to_string(), |k| format!("{k:?} output"));
            return Err(Error::NonFinite(what));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is propagated into it.
    pub fn constant(&mut self, value: Array2) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf that is not tied to a parameter store.
    pub fn input(&mut self, value: Array2) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf holding a copy of a stored parameter; its gradient flows back
    /// into the store through [`Graph::accumulate_into`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?
            .value
            .clone();
        let v = self.push(value, Op::Leaf, true)?;
        self.params.push((v, name.to_string()));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!(
                "add {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let mut value = x.clone();
        value.add_assign(y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v * k);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    /// `x + b` with the column `b` broadcast across every frame of `x`.
    pub fn add_column(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.cols() != 1 || bv.rows() != xv.rows() {
            return Err(Error::Shape(format!(
                "add_column {:?} and {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let bias = bv[(r, 0)];
            value.row_mut(r).iter_mut().for_each(|v| *v += bias);
        }
        let rg = self.rg(x) || self.rg(b);
        self.push(value, Op::AddColumn(x, b), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Array2> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Array2::vstack(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + count > xv.rows() {
            return Err(Error::Shape(format!(
                "rows {start}..{} of {}",
                start + count,
                xv.rows()
            )));
        }
        let value = xv.slice_rows(start, count);
        let rg = self.rg(x);
        self.push(value, Op::SliceRows(x, start), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(value, Op::LeakyRelu(x, slope), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(value, Op::Tanh(x), rg)
    }

    /// Grouped, dilated 1-D cross-correlation with "same" zero padding.
    ///
    /// `w` is `(c_out × (c_in / groups) · kernel)` laid out as
    /// `[out][in_local][tap]`, `b` is `(c_out × 1)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, spec: Conv1dSpec) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let value = conv1d_forward(xv, wv, bv, &spec)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(value, Op::Conv1d { x, w, b, spec }, rg)
    }

    /// Group normalisation over `(channels in group × all frames)` followed by
    /// a per-channel affine map.
    pub fn group_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        eps: f64,
    ) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let c = xv.rows();
        if groups == 0 || c % groups != 0 {
            return Err(Error::Shape(format!(
                "{c} channels not divisible into {groups} groups"
            )));
        }
        if gv.shape() != (c, 1) || bv.shape() != (c, 1) {
            return Err(Error::Shape(format!(
                "group norm affine params must be {c}x1"
            )));
        }
        let t = xv.cols();
        let cg = c / groups;
        let count = (cg * t) as f64;
        let mut xhat = Array2::zeros(c, t);
        let mut out = Array2::zeros(c, t);
        let mut inv_std = Vec::with_capacity(groups);
        for g in 0..groups {
            let rows = g * cg..(g + 1) * cg;
            let mean = rows.clone().map(|r| xv.row(r).iter().sum::<f64>()).sum::<f64>() / count;
            let var = rows
                .clone()
                .map(|r| xv.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>())
                .sum::<f64>()
                / count;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for r in rows {
                let (gamma_r, beta_r) = (gv[(r, 0)], bv[(r, 0)]);
                for k in 0..t {
                    let h = (xv[(r, k)] - mean) * is;
                    xhat[(r, k)] = h;
                    out[(r, k)] = gamma_r * h + beta_r;
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Unidirectional GRU over all frames of `x`.
    ///
    /// `w` is `(3h × in)`, `u` is `(3h × h)` and `b` is `(3h × 1)`, with gate
    /// rows ordered reset, update, candidate. The candidate applies the reset
    /// gate before the recurrent product: `tanh(W_h x + U_h (r ∘ h) + b_h)`.
    pub fn gru(&mut self, x: Var, w: Var, u: Var, b: Var, h0: Option<Var>) -> Result<Var> {
        let (xv, wv, uv, bv) = (self.value(x), self.value(w), self.value(u), self.value(b));
        let hd = uv.cols();
        if uv.rows() != 3 * hd || wv.rows() != 3 * hd || bv.shape() != (3 * hd, 1) {
            return Err(Error::Shape("inconsistent GRU parameter shapes".into()));
        }
        if wv.cols() != xv.rows() {
            return Err(Error::Shape(format!(
                "GRU expects {} input rows, got {}",
                wv.cols(),
                xv.rows()
            )));
        }
        let t_len = xv.cols();
        let mut pre = wv.matmul(xv)?;
        for r in 0..3 * hd {
            let bias = bv[(r, 0)];
            pre.row_mut(r).iter_mut().for_each(|v| *v += bias);
        }
        let mut h = match h0 {
            Some(h0) => {
                let h0v = self.value(h0);
                if h0v.shape() != (hd, 1) {
                    return Err(Error::Shape("GRU initial state must be h x 1".into()));
                }
                h0v.data().to_vec()
            }
            None => vec![0.0; hd],
        };
        let mut cache = GruCache {
            hidden: hd,
            r: Array2::zeros(hd, t_len),
            z: Array2::zeros(hd, t_len),
            n: Array2::zeros(hd, t_len),
            h_prev: Array2::zeros(hd, t_len),
        };
        let mut out = Array2::zeros(hd, t_len);
        for t in 0..t_len {
            let a = pre.col(t);
            let (h_new, r, z, n) = gru_cell(uv, &a, &h);
            cache.h_prev.set_col(t, &h);
            cache.r.set_col(t, &r);
            cache.z.set_col(t, &z);
            cache.n.set_col(t, &n);
            out.set_col(t, &h_new);
            h = h_new;
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(u) || self.rg(b) || h0.is_some_and(|v| self.rg(v));
        self.push(
            out,
            Op::Gru {
                x,
                w,
                u,
                b,
                h0,
                cache,
            },
            rg,
        )
    }

    /// `mean |a − b|` as a `1 × 1` value.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "mean_abs_diff {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let n = av.len().max(1) as f64;
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        let rg = self.rg(a) || self.rg(b);
        self.push(Array2::column(&[s / n]), Op::MeanAbsDiff(a, b), rg)
    }

    /// Mean over frames of `−log softmax(logits[:, t])[targets[t]]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.cols() != targets.len() {
            return Err(Error::Shape(format!(
                "{} targets for {} frames",
                targets.len(),
                lv.cols()
            )));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= lv.rows()) {
            return Err(Error::InvalidArgument(format!("target {bad} out of range")));
        }
        let probs = softmax_columns(lv);
        let nll: f64 = targets
            .iter()
            .enumerate()
            .map(|(t, &k)| -log_softmax_at(lv, t, k))
            .sum::<f64>()
            / targets.len().max(1) as f64;
        let rg = self.rg(logits);
        self.push(
            Array2::column(&[nll]),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Looks up rows of `table` (`vocab × dim`), giving a `dim × len(ids)`
    /// sequence.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let dim = tv.cols();
        let mut out = Array2::zeros(dim, ids.len());
        for (t, &id) in ids.iter().enumerate() {
            if id >= tv.rows() {
                return Err(Error::InvalidArgument(format!("embedding id {id} out of range")));
            }
            out.set_col(t, tv.row(id));
        }
        let rg = self.rg(table);
        self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// `Σ x ∘ weights` as a `1 × 1` value.
    pub fn weighted_sum(&mut self, x: Var, weights: Array2) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != weights.shape() {
            return Err(Error::Shape("weighted_sum shape mismatch".into()));
        }
        let s = super::array::dot(xv.data(), weights.data());
        let rg = self.rg(x);
        self.push(Array2::column(&[s]), Op::WeightedSum(x, weights), rg)
    }

    /// Reverse pass from a `1 × 1` node. Earlier gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Array2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                grads[i] = Some(g);
                continue;
            }
            let faulty = self.fault.is_some() && self.nodes[i].op.kind() == self.fault;
            let contributions = self.backward_node(i, &g)?;
            for (v, mut contrib) in contributions {
                if faulty {
                    contrib.scale_in_place(1.01);
                }
                accumulate(&mut grads, v, contrib);
            }
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.all_finite() {
                    let what = self.nodes[i]
                        .op
                        .kind()
                        .map_or_else(|| "leaf".to_string(), |k| format!("{k:?}"));
                    return Err(Error::NonFinite(format!("gradient of {what} node")));
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds parameter gradients from the last backward pass into `store`,
    /// for every parameter leaf whose name the store contains.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (v, name) in &self.params {
            if let (Some(entry), Some(g)) = (store.get_mut(name), self.grad(*v)) {
                entry.grad.add_assign(g);
            }
        }
    }

    fn backward_node(&self, i: usize, g: &Array2) -> Result<Vec<(Var, Array2)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    out.push((*a, g.matmul_t(self.value(*b))?));
                }
                if self.rg(*b) {
                    out.push((*b, self.value(*a).t_matmul(g)?));
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    out.push((*a, g.clone()));
                }
                if self.rg(*b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::Scale(a, k) => out.push((*a, g.map(|v| v * k))),
            Op::AddColumn(x, b) => {
                if self.rg(*x) {
                    out.push((*x, g.clone()));
                }
                if self.rg(*b) {
                    out.push((*b, g.sum_cols()));
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    if self.rg(*p) {
                        out.push((*p, g.slice_rows(start, rows)));
                    }
                    start += rows;
                }
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let mut full = Array2::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    full.row_mut(start + r).copy_from_slice(g.row(r));
                }
                out.push((*x, full));
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                let mut d = g.clone();
                for (dv, &xv) in d.data_mut().iter_mut().zip(xv.data()) {
                    if xv <= 0.0 {
                        *dv *= slope;
                    }
                }
                out.push((*x, d));
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let mut d = g.clone();
                for (dv, &yv) in d.data_mut().iter_mut().zip(y.data()) {
                    *dv *= 1.0 - yv * yv;
                }
                out.push((*x, d));
            }
            Op::Conv1d { x, w, b, spec } => {
                let (dx, dw, db) = conv1d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    spec,
                    self.rg(*x),
                );
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if self.rg(*w) {
                    out.push((*w, dw));
                }
                if self.rg(*b) {
                    out.push((*b, db));
                }
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let (c, t) = g.shape();
                let cg = c / groups;
                let count = (cg * t) as f64;
                let mut dgamma = Array2::zeros(c, 1);
                let mut dbeta = Array2::zeros(c, 1);
                let mut dx = Array2::zeros(c, t);
                for grp in 0..*groups {
                    let rows = grp * cg..(grp + 1) * cg;
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for r in rows.clone() {
                        for k in 0..t {
                            let dy = g[(r, k)];
                            dgamma[(r, 0)] += dy * xhat[(r, k)];
                            dbeta[(r, 0)] += dy;
                            let dxh = dy * gv[(r, 0)];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xhat[(r, k)];
                        }
                    }
                    let is = inv_std[grp];
                    for r in rows {
                        for k in 0..t {
                            let dxh = g[(r, k)] * gv[(r, 0)];
                            dx[(r, k)] = is / count
                                * (count * dxh - sum_dxhat - xhat[(r, k)] * sum_dxhat_xhat);
                        }
                    }
                }
                if self.rg(*x) {
                    out.push((*x, dx));
                }
                if self.rg(*gamma) {
                    out.push((*gamma, dgamma));
                }
                if self.rg(*beta) {
                    out.push((*beta, dbeta));
                }
            }
            Op::Gru {
                x,
                w,
                u,
                b,
                h0,
                cache,
            } => {
                let grads = gru_backward(self.value(*x), self.value(*w), self.value(*u), cache, g)?;
                if self.rg(*x) {
                    out.push((*x, self.value(*w).t_matmul(&grads.d_pre)?));
                }
                if self.rg(*w) {
                    out.push((*w, grads.d_pre.matmul_t(self.value(*x))?));
                }
                if self.rg(*u) {
                    out.push((*u, grads.du));
                }
                if self.rg(*b) {
                    out.push((*b, grads.d_pre.sum_cols()));
                }
                if let Some(h0) = h0 {
                    if self.rg(*h0) {
                        out.push((*h0, Array2::column(&grads.dh0)));
                    }
                }
            }
            Op::MeanAbsDiff(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let scale = g[(0, 0)] / av.len().max(1) as f64;
                let data: Vec<f64> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(x, y)| {
                        let d = x - y;
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let da = Array2::from_vec(av.rows(), av.cols(), data)?;
                if self.rg(*b) {
                    out.push((*b, da.map(|v| -v)));
                }
                if self.rg(*a) {
                    out.push((*a, da));
                }
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let scale = g[(0, 0)] / targets.len().max(1) as f64;
                let mut d = probs.clone();
                for (t, &k) in targets.iter().enumerate() {
                    d[(k, t)] -= 1.0;
                }
                d.scale_in_place(scale);
                out.push((*logits, d));
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let mut d = Array2::zeros(tv.rows(), tv.cols());
                for (t, &id) in ids.iter().enumerate() {
                    for c in 0..tv.cols() {
                        d[(id, c)] += g[(c, t)];
                    }
                }
                out.push((*table, d));
            }
            Op::WeightedSum(x, weights) => {
                out.push((*x, weights.map(|v| v * g[(0, 0)])));
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Array2>], v: Var, g: Array2) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn softmax_columns(logits: &Array2) -> Array2 {
    let (v, t) = logits.shape();
    let mut out = Array2::zeros(v, t);
    for c in 0..t {
        let max = (0..v).map(|r| logits[(r, c)]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for r in 0..v {
            let e = (logits[(r, c)] - max).exp();
            out[(r, c)] = e;
            sum += e;
        }
        for r in 0..v {
            out[(r, c)] /= sum;
        }
    }
    out
}

/// `log softmax(logits[:, col])[k]`, computed stably.
pub(crate) fn log_softmax_at(logits: &Array2, col: usize, k: usize) -> f64 {
    let v = logits.rows();
    let max = (0..v).map(|r| logits[(r, col)]).fold(f64::NEG_INFINITY, f64::max);
    let lse = (0..v).map(|r| (logits[(r, col)] - max).exp()).sum::<f64>().ln() + max;
    logits[(k, col)] - lse
}

pub(crate) fn conv1d_forward(
    x: &Array2,
    w: &Array2,
    b: &Array2,
    spec: &Conv1dSpec,
) -> Result<Array2> {
    let Conv1dSpec {
        kernel: k,
        dilation: d,
        groups,
    } = *spec;
    let (cin, t) = x.shape();
    let cout = w.rows();
    if groups == 0 || cin % groups != 0 || !cout.is_multiple_of(groups) {
        return Err(Error::Shape(format!(
            "channels {cin}->{cout} not divisible by {groups} groups"
        )));
    }
    if k % 2 == 0 {
        return Err(Error::InvalidArgument("kernel size must be odd".into()));
    }
    let cin_g = cin / groups;
    let cout_g = cout / groups;
    if w.cols() != cin_g * k || b.shape() != (cout, 1) {
        return Err(Error::Shape(format!(
            "conv weights {:?}/{:?} for {cin}->{cout}, k={k}, g={groups}",
            w.shape(),
            b.shape()
        )));
    }
    let half = (k - 1) / 2;
    let mut out = Array2::zeros(cout, t);
    for o in 0..cout {
        let g0 = (o / cout_g) * cin_g;
        let bias = b[(o, 0)];
        let wrow = w.row(o);
        let orow = out.row_mut(o);
        orow.iter_mut().for_each(|v| *v = bias);
        for cl in 0..cin_g {
            let xrow = x.row(g0 + cl);
            for j in 0..k {
                let wv = wrow[cl * k + j];
                if wv == 0.0 {
                    continue;
                }
                let off = (j as isize - half as isize) * d as isize;
                let lo = (-off).max(0) as usize;
                let hi = (t as isize - off).clamp(0, t as isize) as usize;
                for s in lo..hi {
                    orow[s] += wv * xrow[(s as isize + off) as usize];
                }
            }
        }
    }
    Ok(out)
}

fn conv1d_backward(
    x: &Array2,
    w: &Array2,
    g: &Array2,
    spec: &Conv1dSpec,
    need_dx: bool,
) -> (Option<Array2>, Array2, Array2) {
    let Conv1dSpec {
        kernel: k,
        dilation: d,
        groups,
    } = *spec;
    let (cin, t) = x.shape();
    let cout = w.rows();
    let cin_g = cin / groups;
    let cout_g = cout / groups;
    let half = (k - 1) / 2;
    let mut dx = Array2::zeros(cin, t);
    let mut dw = Array2::zeros(w.rows(), w.cols());
    let db = g.sum_cols();
    for o in 0..cout {
        let g0 = (o / cout_g) * cin_g;
        let grow = g.row(o);
        for cl in 0..cin_g {
            for j in 0..k {
                let off = (j as isize - half as isize) * d as isize;
                let lo = (-off).max(0) as usize;
                let hi = (t as isize - off).clamp(0, t as isize) as usize;
                let xrow = x.row(g0 + cl);
                let mut acc = 0.0;
                for s in lo..hi {
                    acc += grow[s] * xrow[(s as isize + off) as usize];
                }
                dw[(o, cl * k + j)] = acc;
                if need_dx {
                    let wv = w[(o, cl * k + j)];
                    let dxrow = dx.row_mut(g0 + cl);
                    for s in lo..hi {
                        dxrow[(s as isize + off) as usize] += wv * grow[s];
                    }
                }
            }
        }
    }
    (need_dx.then_some(dx), dw, db)
}

struct GruGrads {
    d_pre: Array2,
    du: Array2,
    dh0: Vec<f64>,
}

fn gru_backward(
    x: &Array2,
    _w: &Array2,
    u: &Array2,
    cache: &GruCache,
    g: &Array2,
) -> Result<GruGrads> {
    let hd = cache.hidden;
    let t_len = x.cols();
    let mut d_pre = Array2::zeros(3 * hd, t_len);
    let mut du = Array2::zeros(3 * hd, hd);
    let mut dh_next = vec![0.0; hd];
    let mut dar = vec![0.0; hd];
    let mut daz = vec![0.0; hd];
    let mut dan = vec![0.0; hd];
    for t in (0..t_len).rev() {
        let h_prev = cache.h_prev.col(t);
        let r = cache.r.col(t);
        let z = cache.z.col(t);
        let n = cache.n.col(t);
        let mut dh_prev = vec![0.0; hd];
        for i in 0..hd {
            let dh = g[(i, t)] + dh_next[i];
            let dn = dh * z[i];
            let dz = dh * (n[i] - h_prev[i]);
            dh_prev[i] = dh * (1.0 - z[i]);
            dan[i] = dn * (1.0 - n[i] * n[i]);
            daz[i] = dz * z[i] * (1.0 - z[i]);
        }
        // Candidate path: U_n acts on r ∘ h_prev.
        let mut d_rh = vec![0.0; hd];
        for i in 0..hd {
            let a = dan[i];
            if a == 0.0 {
                continue;
            }
            let urow = u.row(2 * hd + i);
            let durow = du.row_mut(2 * hd + i);
            for j in 0..hd {
                durow[j] += a * r[j] * h_prev[j];
                d_rh[j] += urow[j] * a;
            }
        }
        for j in 0..hd {
            let dr = d_rh[j] * h_prev[j];
            dh_prev[j] += d_rh[j] * r[j];
            dar[j] = dr * r[j] * (1.0 - r[j]);
        }
        for i in 0..hd {
            let (ar, az) = (dar[i], daz[i]);
            let urow_r = u.row(i);
            let urow_z = u.row(hd + i);
            for j in 0..hd {
                dh_prev[j] += urow_r[j] * ar + urow_z[j] * az;
            }
            let durow = du.row_mut(i);
            for j in 0..hd {
                durow[j] += ar * h_prev[j];
            }
            let durow = du.row_mut(hd + i);
            for j in 0..hd {
                durow[j] += az * h_prev[j];
            }
            d_pre[(i, t)] = ar;
            d_pre[(hd + i, t)] = az;
            d_pre[(2 * hd + i, t)] = dan[i];
        }
        dh_next = dh_prev;
    }
    Ok(GruGrads {
        d_pre,
        du,
        dh0: dh_next,
    })
}
