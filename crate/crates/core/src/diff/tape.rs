//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value. [`Tape::backward`] walks the nodes in reverse and
//! returns the gradient of a scalar loss with respect to every node;
//! gradients of parameter leaves can then be accumulated into their
//! [`ParamSet`].

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

static NEXT_PARAM_SET: AtomicU64 = AtomicU64::new(1);

/// Named trainable matrices with gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T = f32> {
    uid: u64,
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            uid: NEXT_PARAM_SET.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// Adds a parameter, replacing any existing one with the same name.
    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> usize {
        let grad = Tensor::zeros(value.rows(), value.cols());
        if let Some(i) = self.index(name) {
            self.values[i] = value;
            self.grads[i] = grad;
            return i;
        }
        self.names.push(name.to_string());
        self.values.push(value);
        self.grads.push(grad);
        self.names.len() - 1
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn id(&self, name: &str) -> usize {
        self.index(name)
            .unwrap_or_else(|| panic!("no parameter named {name:?}"))
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        &self.values[self.id(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        let i = self.id(name);
        &mut self.values[i]
    }

    pub fn grad(&self, name: &str) -> &Tensor<T> {
        &self.grads[self.id(name)]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn grads(&self) -> &[Tensor<T>] {
        &self.grads
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> (&mut [Tensor<T>], &[Tensor<T>]) {
        (&mut self.values, &self.grads)
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(T::zero());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Converts to another scalar type. The copy is a distinct set: gradients
    /// recorded against it never land in `self`.
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for (n, v) in self.iter() {
            out.insert(n, v.cast());
        }
        out
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Row-index lists in compressed form: list `i` is
/// `indices[offsets[i]..offsets[i + 1]]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RowSets {
    pub offsets: Vec<usize>,
    pub indices: Vec<u32>,
}

impl RowSets {
    pub fn from_lists<L: AsRef<[u32]>>(lists: &[L]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for l in lists {
            indices.extend_from_slice(l.as_ref());
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn set(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param { set: u64, id: usize },
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Scale(Var, T),
    GatherRows(Var, Vec<u32>),
    MeanRows(Var, RowSets),
    ConcatCols(Var, Var),
    Dropout(Var, Vec<T>),
    L2NormalizeRows(Var, Vec<T>),
    RowDot(Var, Var),
    Mean(Var),
    Mse(Var, Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// A single forward pass. Confined to one thread; build a new tape per step.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant leaf (no gradient flows out of the tape through it).
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("input", value, Op::Input)
    }

    /// Parameter leaf; its gradient can be accumulated back into `params`.
    pub fn param(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        let id = params.id(name);
        self.push(
            "param",
            params.values[id].clone(),
            Op::Param {
                set: params.uid,
                id,
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} · {:?}", av.shape(), bv.shape()),
            ));
        }
        let out = av.matmul(bv)?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        self.push("add", out, Op::Add(a, b))
    }

    /// Adds the `1 × cols` row `bias` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err(
                "add_bias",
                format!("{:?} + bias {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        let b = bv.data().to_vec();
        for i in 0..out.rows() {
            for (o, &bj) in out.row_mut(i).iter_mut().zip(&b) {
                *o = *o + bj;
            }
        }
        self.push("add_bias", out, Op::AddBias(x, bias))
    }

    fn map(&mut self, x: Var, name: &'static str, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(xv.rows(), xv.cols(), data)?;
        self.push(name, out, op)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map(x, "relu", |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, "sigmoid", sigmoid, Op::Sigmoid(x))
    }

    /// `log σ(x)`, evaluated without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, "log_sigmoid", log_sigmoid, Op::LogSigmoid(x))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.map(x, "scale", |v| v * c, Op::Scale(x, c))
    }

    /// Rows of `x` at `idx`, in that order (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: Vec<u32>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= xv.rows()) {
            return Err(shape_err(
                "gather_rows",
                format!("row {bad} out of {}", xv.rows()),
            ));
        }
        let out = xv.select_rows(&idx);
        self.push("gather_rows", out, Op::GatherRows(x, idx))
    }

    /// Output row `i` is the mean of the rows of `x` listed in set `i`; an
    /// empty set yields a zero row. Rows are summed in list order.
    pub fn mean_rows(&mut self, x: Var, sets: RowSets) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = sets.indices.iter().find(|&&i| i as usize >= xv.rows()) {
            return Err(shape_err("mean_rows", format!("row {bad} out of {}", xv.rows())));
        }
        let cols = xv.cols();
        let mut out = Tensor::zeros(sets.len(), cols);
        for i in 0..sets.len() {
            let set = sets.set(i);
            if set.is_empty() {
                continue;
            }
            let inv = T::one() / T::from_usize(set.len()).unwrap();
            let row = out.row_mut(i);
            for &j in set {
                for (o, &v) in row.iter_mut().zip(xv.row(j as usize)) {
                    *o = *o + v;
                }
            }
            row.iter_mut().for_each(|o| *o = *o * inv);
        }
        self.push("mean_rows", out, Op::MeanRows(x, sets))
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hconcat(self.value(b))?;
        self.push("concat_cols", out, Op::ConcatCols(a, b))
    }

    /// Inverted dropout: in training mode each entry survives with
    /// probability `1 − p` and is scaled by `1 / (1 − p)`; otherwise `x` is
    /// returned unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !training || p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(shape_err("dropout", format!("drop probability {p} ≥ 1")));
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.data().len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(xv.rows(), xv.cols(), data)?;
        self.push("dropout", out, Op::Dropout(x, mask))
    }

    /// Scales each row to unit Euclidean norm; zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if n > T::zero() {
                row.iter_mut().for_each(|v| *v = *v / n);
            }
            norms.push(n);
        }
        self.push("l2_normalize_rows", out, Op::L2NormalizeRows(x, norms))
    }

    /// Per-row inner products: `out[i] = a_i · b_i`, shape `rows × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("row_dot", format!("{:?} · {:?}", av.shape(), bv.shape())));
        }
        let data = (0..av.rows())
            .map(|i| av.row(i).iter().zip(bv.row(i)).map(|(&x, &y)| x * y).sum())
            .collect();
        let out = Tensor::new(av.rows(), 1, data)?;
        self.push("row_dot", out, Op::RowDot(a, b))
    }

    /// Mean of all entries, as a `1 × 1` tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.data().is_empty() {
            return Err(shape_err("mean", "empty tensor".into()));
        }
        let n = T::from_usize(xv.data().len()).unwrap();
        let s: T = xv.data().iter().copied().sum();
        self.push("mean", Tensor::scalar(s / n), Op::Mean(x))
    }

    /// Mean over rows of the squared Euclidean distance between rows of
    /// `a` and `b`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || av.rows() == 0 {
            return Err(shape_err("mse", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let s: T = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let out = Tensor::scalar(s / T::from_usize(av.rows()).unwrap());
        self.push("mse", out, Op::Mse(a, b))
    }

    /// Signs of every rectified and normalized quantity on the tape. Two
    /// evaluations with equal patterns lie on the same smooth piece of the
    /// function, which is what finite-difference checks need.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(_) => out.extend(node.value.data().iter().map(|&v| v > T::zero())),
                Op::L2NormalizeRows(_, norms) => out.extend(norms.iter().map(|&n| n > T::zero())),
                _ => {}
            }
        }
        out
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(shape_err(
                "backward",
                format!("loss must be 1x1, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param { .. } => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    let mut ga = Tensor::zeros(m, k);
                    T::gemm(m, n, k, g.data(), false, bv.data(), true, ga.data_mut(), false);
                    let mut gb = Tensor::zeros(k, n);
                    T::gemm(k, m, n, av.data(), true, g.data(), false, gb.data_mut(), false);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddBias(x, b) => {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (s, &v) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *s = *s + v;
                        }
                    }
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Relu(x) => {
                    let y = &node.value;
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| if yv > T::zero() { gv } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(g.rows(), g.cols(), data)?);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &s)| gv * s * (T::one() - s))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(g.rows(), g.cols(), data)?);
                }
                Op::LogSigmoid(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &v)| gv * sigmoid(-v))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(g.rows(), g.cols(), data)?);
                }
                Op::Scale(x, c) => {
                    let data = g.data().iter().map(|&v| v * *c).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.rows(), g.cols(), data)?);
                }
                Op::GatherRows(x, idx) => {
                    let xv = self.value(*x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, &v) in gx.row_mut(i as usize).iter_mut().zip(g.row(r)) {
                            *d = *d + v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanRows(x, sets) => {
                    let xv = self.value(*x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for i in 0..sets.len() {
                        let set = sets.set(i);
                        if set.is_empty() {
                            continue;
                        }
                        let inv = T::one() / T::from_usize(set.len()).unwrap();
                        for &j in set {
                            for (d, &v) in gx.row_mut(j as usize).iter_mut().zip(g.row(i)) {
                                *d = *d + v * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let mut ga = Tensor::zeros(g.rows(), ca);
                    let mut gb = Tensor::zeros(g.rows(), cb);
                    for i in 0..g.rows() {
                        ga.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                        gb.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Dropout(x, mask) => {
                    let data = g.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.rows(), g.cols(), data)?);
                }
                Op::L2NormalizeRows(x, norms) => {
                    let y = &node.value;
                    let mut gx = Tensor::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let n = norms[i];
                        if n <= T::zero() {
                            continue;
                        }
                        let yi = y.row(i);
                        let gi = g.row(i);
                        let proj: T = yi.iter().zip(gi).map(|(&a, &b)| a * b).sum();
                        for ((d, &gv), &yv) in gx.row_mut(i).iter_mut().zip(gi).zip(yi) {
                            *d = (gv - yv * proj) / n;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    for i in 0..av.rows() {
                        let s = g.get(i, 0);
                        for (d, &v) in ga.row_mut(i).iter_mut().zip(bv.row(i)) {
                            *d = s * v;
                        }
                        for (d, &v) in gb.row_mut(i).iter_mut().zip(av.row(i)) {
                            *d = s * v;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let v = g.item() / T::from_usize(xv.data().len()).unwrap();
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    gx.fill(v);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Mse(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let c = g.item() * T::lit(2.0) / T::from_usize(av.rows()).unwrap();
                    let data: Vec<T> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(&x, &y)| (x - y) * c)
                        .collect();
                    let ga = Tensor::new(av.rows(), av.cols(), data)?;
                    let gb = Tensor::new(
                        av.rows(),
                        av.cols(),
                        ga.data().iter().map(|&v| -v).collect(),
                    )?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into each of
    /// `sets` whose leaves appear on this tape.
    pub fn backward_into(&self, loss: Var, sets: &mut [&mut ParamSet<T>]) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        for set in sets.iter_mut() {
            grads.accumulate_into(self, set);
        }
        Ok(grads)
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn log_sigmoid<T: Real>(x: T) -> T {
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`, if the loss depends on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds the gradients of every parameter leaf that belongs to `params`.
    pub fn accumulate_into(&self, tape: &Tape<T>, params: &mut ParamSet<T>) {
        for (i, node) in tape.nodes.iter().enumerate() {
            if let Op::Param { set, id } = node.op {
                if set == params.uid {
                    if let Some(g) = &self.grads[i] {
                        params.grads[id].add_assign(g);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::scalar(0.0)).unwrap();
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).item(), 0.5);
    }

    #[test]
    fn row_mean_of_two_rows() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(t(2, 2, &[1.0, 3.0, 3.0, 1.0])).unwrap();
        let m = tape.mean_rows(x, RowSets::from_lists(&[vec![0, 1], vec![]])).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::from_fn(4, 4, |i, j| (i * 4 + j) as f32)).unwrap();
        let y = tape.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn dropout_train_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::from_fn(50, 50, |_, _| 1.0)).unwrap();
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        let vals = tape.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = vals.iter().filter(|&&v| v > 0.0).count() as f64 / vals.len() as f64;
        assert!((kept - 0.5).abs() < 0.05, "kept fraction {kept}");
    }

    #[test]
    fn mse_scalar_gradient() {
        let mut params = ParamSet::<f64>::new();
        params.insert("w", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let w = tape.param(&params, "w").unwrap();
        let zero = tape.input(Tensor::scalar(0.0)).unwrap();
        let loss = tape.mse(w, zero).unwrap();
        assert_eq!(tape.value(loss).item(), 9.0);
        tape.backward_into(loss, &mut [&mut params]).unwrap();
        assert_eq!(params.grad("w").item(), 6.0);
        // second backward without zeroing accumulates
        tape.backward_into(loss, &mut [&mut params]).unwrap();
        assert_eq!(params.grad("w").item(), 12.0);
        params.zero_grad();
        assert_eq!(params.grad("w").item(), 0.0);
    }

    #[test]
    fn sigmoid_dot_gradient_at_zero_weights() {
        let x = [0.3, -1.2, 2.0];
        let mut params = ParamSet::<f64>::new();
        params.insert("w", Tensor::zeros(3, 1));
        let mut tape = Tape::new();
        let w = tape.param(&params, "w").unwrap();
        let xv = tape.input(t(1, 3, &x)).unwrap();
        let d = tape.matmul(xv, w).unwrap();
        let loss = tape.sigmoid(d).unwrap();
        tape.backward_into(loss, &mut [&mut params]).unwrap();
        for (g, xi) in params.grad("w").data().iter().zip(x) {
            assert!((g - 0.25 * xi).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let tape = Tape::<f32>::new();
        assert!(matches!(tape.backward(Var(0)), Err(Error::BackwardBeforeForward)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::zeros(2, 2)).unwrap();
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::<f32>::new();
        let a = tape.input(Tensor::zeros(2, 3)).unwrap();
        let b = tape.input(Tensor::zeros(2, 3)).unwrap();
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { op: "matmul", .. })));
        let c = tape.input(Tensor::zeros(3, 2)).unwrap();
        assert!(tape.add(a, c).is_err());
        assert!(tape.row_dot(a, c).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::scalar(f32::MAX)).unwrap();
        assert!(matches!(tape.scale(x, 10.0), Err(Error::NonFinite("scale"))));
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(-1000.0f64) + 1000.0).abs() < 1e-9);
        assert!(log_sigmoid(1000.0f64).abs() < 1e-300);
        assert!((log_sigmoid(0.0f64) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn normalize_zero_row_stays_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(t(2, 2, &[0.0, 0.0, 3.0, 4.0])).unwrap();
        let y = tape.l2_normalize_rows(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.6, 0.8]);
    }
}
