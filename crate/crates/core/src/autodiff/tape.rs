//! Wengert tape for reverse-mode differentiation.
//!
//! Values are recorded eagerly as operations are appended; [`Tape::backward`]
//! walks the record in reverse. Every node's inputs have smaller indices than
//! the node itself, so the record is always in topological order.

use std::collections::BTreeMap;

use super::tensor::{matvec, matvec_t, outer_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) const KL_K1: f64 = 0.63576;
pub(crate) const KL_K2: f64 = 1.87320;
pub(crate) const KL_K3: f64 = 1.48695;
pub(crate) const LOG_ALPHA_MIN: f64 = -8.0;
pub(crate) const LOG_ALPHA_MAX: f64 = 8.0;

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    /// `[m, n] · [n] -> [m]`
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Slice(Var, usize, usize),
    Concat(Vec<Var>),
    Sum(Var),
    AddN(Vec<Var>),
    Dot(Var, Var),
    LogSoftmax(Var),
    Softmax(Var),
    Pick(Var, usize),
    /// `mean + sqrt(var) * noise`, noise held as a constant.
    Reparam(Var, Var, Var),
    /// Summed log-uniform-prior KL over weights given means and log-variances.
    KlLogUniform(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatVec(..) => "matvec",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Square(..) => "square",
            Op::Slice(..) => "slice",
            Op::Concat(..) => "concat",
            Op::Sum(..) => "sum",
            Op::AddN(..) => "add_n",
            Op::Dot(..) => "dot",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Softmax(..) => "softmax",
            Op::Pick(..) => "pick",
            Op::Reparam(..) => "reparam",
            Op::KlLogUniform(..) => "kl_log_uniform",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients keyed by the parameter keys passed to [`Tape::param`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, key: usize) -> Option<&Tensor> {
        self.grads.get(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    pub fn into_map(self) -> BTreeMap<usize, Tensor> {
        self.grads
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Ordered record of primitive operations and their forward values.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(Var, usize)>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// Clamped log α for one weight.
pub(crate) fn log_alpha(mu: f64, log_sigma2: f64) -> f64 {
    (log_sigma2 - (mu * mu).ln()).clamp(LOG_ALPHA_MIN, LOG_ALPHA_MAX)
}

/// Per-weight approximate KL(q ‖ log-uniform) as a function of log α.
pub(crate) fn kl_from_log_alpha(la: f64) -> f64 {
    let neg_kl = KL_K1 * sigmoid(KL_K2 + KL_K3 * la) - 0.5 * (-la).exp().ln_1p() - KL_K1;
    (-neg_kl).max(0.0)
}

/// d KL / d log α (unclamped region).
fn dkl_dlog_alpha(la: f64) -> f64 {
    let s = sigmoid(KL_K2 + KL_K3 * la);
    -KL_K1 * KL_K3 * s * (1.0 - s) - 0.5 * sigmoid(-la)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, op: Op) -> Var {
        let value = self.eval(&op, |v| &self.nodes[v.0].value);
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; its gradient is reported under `key`.
    pub fn param(&mut self, key: usize, value: Tensor) -> Var {
        let v = self.constant(value);
        self.params.push((v, key));
        v
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (ws, xs) = (self.value(w).shape(), self.value(x).shape());
        assert!(
            ws.len() == 2 && xs.len() == 1 && ws[1] == xs[0],
            "matvec shape mismatch {ws:?} · {xs:?}"
        );
        self.push(Op::MatVec(w, x))
    }

    fn check_same(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{what} shape mismatch"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.check_same(a, b, "add");
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.check_same(a, b, "sub");
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.check_same(a, b, "mul");
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::Offset(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.push(Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.push(Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.push(Op::Square(a))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.value(a).len(), "slice out of range");
        self.push(Op::Slice(a, start, len))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        self.push(Op::Concat(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }

    /// Sum of same-shaped tensors.
    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "add_n of nothing");
        for &p in &parts[1..] {
            self.check_same(parts[0], p, "add_n");
        }
        self.push(Op::AddN(parts.to_vec()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        self.check_same(a, b, "dot");
        self.push(Op::Dot(a, b))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        self.push(Op::LogSoftmax(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        self.push(Op::Softmax(a))
    }

    pub fn pick(&mut self, a: Var, index: usize) -> Var {
        assert!(index < self.value(a).len(), "pick out of range");
        self.push(Op::Pick(a, index))
    }

    pub fn reparam(&mut self, mean: Var, var: Var, noise: Var) -> Var {
        self.check_same(mean, var, "reparam");
        self.check_same(mean, noise, "reparam");
        self.push(Op::Reparam(mean, var, noise))
    }

    pub fn kl_log_uniform(&mut self, mu: Var, log_sigma2: Var) -> Var {
        self.check_same(mu, log_sigma2, "kl_log_uniform");
        self.push(Op::KlLogUniform(mu, log_sigma2))
    }

    fn eval<'a>(&'a self, op: &Op, get: impl Fn(Var) -> &'a Tensor) -> Tensor {
        match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::MatVec(w, x) => {
                let (w, x) = (get(*w), get(*x));
                Tensor::vector(matvec(w.data(), w.rows(), w.cols(), x.data()))
            }
            Op::Add(a, b) => get(*a).zip_map(get(*b), |x, y| x + y),
            Op::Sub(a, b) => get(*a).zip_map(get(*b), |x, y| x - y),
            Op::Mul(a, b) => get(*a).zip_map(get(*b), |x, y| x * y),
            Op::Scale(a, c) => get(*a).map(|x| x * c),
            Op::Offset(a, c) => get(*a).map(|x| x + c),
            Op::Sigmoid(a) => get(*a).map(sigmoid),
            Op::Tanh(a) => get(*a).map(f64::tanh),
            Op::Exp(a) => get(*a).map(f64::exp),
            Op::Ln(a) => get(*a).map(f64::ln),
            Op::Square(a) => get(*a).map(|x| x * x),
            Op::Slice(a, start, len) => {
                Tensor::vector(get(*a).data()[*start..*start + *len].to_vec())
            }
            Op::Concat(parts) => Tensor::vector(
                parts
                    .iter()
                    .flat_map(|p| get(*p).data().iter().copied())
                    .collect(),
            ),
            Op::Sum(a) => Tensor::scalar(get(*a).sum()),
            Op::AddN(parts) => {
                let mut out = get(parts[0]).clone();
                for p in &parts[1..] {
                    out.add_assign(get(*p));
                }
                out
            }
            Op::Dot(a, b) => Tensor::scalar(
                get(*a)
                    .data()
                    .iter()
                    .zip(get(*b).data())
                    .map(|(x, y)| x * y)
                    .sum(),
            ),
            Op::LogSoftmax(a) => Tensor::vector(log_softmax(get(*a).data())),
            Op::Softmax(a) => {
                Tensor::vector(log_softmax(get(*a).data()).into_iter().map(f64::exp).collect())
            }
            Op::Pick(a, i) => Tensor::scalar(get(*a).data()[*i]),
            Op::Reparam(m, v, n) => {
                let (m, v, n) = (get(*m), get(*v), get(*n));
                let data = m
                    .data()
                    .iter()
                    .zip(v.data())
                    .zip(n.data())
                    .map(|((m, v), n)| m + v.sqrt() * n)
                    .collect();
                Tensor::new(m.shape().to_vec(), data)
            }
            Op::KlLogUniform(mu, ls) => Tensor::scalar(
                get(*mu)
                    .data()
                    .iter()
                    .zip(get(*ls).data())
                    .map(|(&m, &s)| kl_from_log_alpha(log_alpha(m, s)))
                    .sum(),
            ),
        }
    }

    /// Recomputes every non-leaf value from the recorded operations.
    pub fn replay(&self) -> Vec<Tensor> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => {
                    let vals = &values;
                    self.eval(op, |v| &vals[v.0])
                }
            };
            values.push(v);
        }
        values
    }

    /// Recorded forward values in node order.
    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().map(|n| &n.value)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every registered parameter gets an entry, zero when it does not
    /// influence the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward on an empty tape"));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !g.is_finite() {
                return Err(Error::numeric(
                    format!("backward op #{idx} ({})", self.nodes[idx].op.name()),
                    "non-finite gradient",
                ));
            }
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }

        let mut out = Gradients::default();
        for &(v, key) in &self.params {
            let g = grads
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
            match out.grads.get_mut(&key) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    out.grads.insert(key, g);
                }
            }
        }
        Ok(out)
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(t) => t.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatVec(w, x) => {
                let (wt, xt) = (val(*w), val(*x));
                let (rows, cols) = (wt.rows(), wt.cols());
                let mut dw = vec![0.0; rows * cols];
                outer_acc(&mut dw, gd, xt.data());
                acc(*w, Tensor::matrix(rows, cols, dw));
                acc(*x, Tensor::vector(matvec_t(wt.data(), rows, cols, gd)));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |g, y| g * y));
                acc(*b, g.zip_map(val(*a), |g, x| g * x));
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c)),
            Op::Offset(a, _) => acc(*a, g.clone()),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |g, s| g * s * (1.0 - s))),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |g, t| g * (1.0 - t * t))),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |g, e| g * e)),
            Op::Ln(a) => acc(*a, g.zip_map(val(*a), |g, x| g / x)),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |g, x| 2.0 * g * x)),
            Op::Slice(a, start, len) => {
                let mut d = Tensor::zeros(val(*a).shape());
                d.data_mut()[*start..*start + *len].copy_from_slice(gd);
                acc(*a, d);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    acc(
                        p,
                        Tensor::new(val(p).shape().to_vec(), gd[off..off + n].to_vec()),
                    );
                    off += n;
                }
            }
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), gd[0])),
            Op::AddN(parts) => {
                for &p in parts {
                    acc(p, g.clone());
                }
            }
            Op::Dot(a, b) => {
                acc(*a, val(*b).map(|y| y * gd[0]));
                acc(*b, val(*a).map(|x| x * gd[0]));
            }
            Op::LogSoftmax(a) => {
                let gsum: f64 = gd.iter().sum();
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&l, &g)| g - l.exp() * gsum)
                    .collect();
                acc(*a, Tensor::vector(d));
            }
            Op::Softmax(a) => {
                let p = node.value.data();
                let inner: f64 = p.iter().zip(gd).map(|(p, g)| p * g).sum();
                let d = p.iter().zip(gd).map(|(&p, &g)| p * (g - inner)).collect();
                acc(*a, Tensor::vector(d));
            }
            Op::Pick(a, i) => {
                let mut d = Tensor::zeros(val(*a).shape());
                d.data_mut()[*i] = gd[0];
                acc(*a, d);
            }
            Op::Reparam(m, v, n) => {
                acc(*m, g.clone());
                let dv = val(*v)
                    .data()
                    .iter()
                    .zip(val(*n).data())
                    .zip(gd)
                    .map(|((&v, &n), &g)| if v > 0.0 { g * n * 0.5 / v.sqrt() } else { 0.0 })
                    .collect();
                acc(*v, Tensor::new(val(*v).shape().to_vec(), dv));
            }
            Op::KlLogUniform(mu, ls) => {
                let (mt, st) = (val(*mu), val(*ls));
                let mut dmu = Vec::with_capacity(mt.len());
                let mut dls = Vec::with_capacity(mt.len());
                for (&m, &s) in mt.data().iter().zip(st.data()) {
                    let raw = s - (m * m).ln();
                    if raw > LOG_ALPHA_MIN && raw < LOG_ALPHA_MAX {
                        let d = gd[0] * dkl_dlog_alpha(raw);
                        dls.push(d);
                        dmu.push(-2.0 * d / m);
                    } else {
                        dls.push(0.0);
                        dmu.push(0.0);
                    }
                }
                acc(*mu, Tensor::new(mt.shape().to_vec(), dmu));
                acc(*ls, Tensor::new(st.shape().to_vec(), dls));
            }
        }
    }
}
