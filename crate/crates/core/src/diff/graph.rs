//! Reverse-mode tape over dense 2-D tensors.
//!
//! Every operation appends a node holding its forward value. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates adjoints.
//! Parameter leaves are bound once per graph, so a parameter used at every
//! time step of a recurrence still owns a single gradient slot.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    MaskedUpdate {
        prev: Var,
        next: Var,
        mask: Vec<T>,
    },
    GruCombine {
        gx: Var,
        gh: Var,
        h: Var,
        r: Vec<T>,
        u: Vec<T>,
        n: Vec<T>,
    },
    LogSoftmax(Var),
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        norm: T,
        probs: Vec<T>,
    },
    KlDiag {
        mu_q: Var,
        log_sigma_q: Var,
        mu_p: Var,
        var_p: T,
    },
    LatentReg {
        z: Var,
        signs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_err<V>(msg: String) -> Result<V> {
    Err(Error::ShapeError(msg))
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A graph whose parameter leaves do not require gradients.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
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

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_mat(&mut self, rows: usize, cols: usize, data: Vec<T>, op: Op<T>, needs: bool) -> Var {
        let t = Tensor::matrix(rows, cols, data).expect("op produced consistent data");
        self.push(t, op, needs)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf not tied to a parameter store.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let value = store.value(id).clone();
        let v = self.push(value, Op::Param, self.grad_enabled);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return shape_err(format!("matmul {m}x{k} by {k2}x{n}"));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push_mat(m, n, out, Op::MatMul(a, b), needs))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<(usize, usize, Vec<T>)> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return shape_err(format!("{name} {da:?} vs {db:?}"));
        }
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok((da.0, da.1, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c, out) = self.zip(a, b, "add", |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push_mat(r, c, out, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c, out) = self.zip(a, b, "sub", |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push_mat(r, c, out, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c, out) = self.zip(a, b, "mul", |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push_mat(r, c, out, Op::Mul(a, b), needs))
    }

    /// Adds a `1 x C` row (a bias) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(row) != (1, c) {
            return shape_err(format!("add_row {r}x{c} with {:?}", self.dims(row)));
        }
        let bias = self.data(row);
        let out = self
            .data(a)
            .chunks(c)
            .flat_map(|xs| xs.iter().zip(bias).map(|(&x, &b)| x + b))
            .collect();
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push_mat(r, c, out, Op::AddRow(a, row), needs))
    }

    fn map(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().map(|&x| f(x)).collect();
        let needs = self.needs(a);
        self.push_mat(r, c, out, op, needs)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn offset(&mut self, a: Var, c: T) -> Var {
        self.map(a, Op::Offset(a), |x| x + c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), |x| x.exp())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().copied().sum::<T>() / T::of(d.len().max(1) as f64);
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), needs)
    }

    /// Row sums: `R x C -> R x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.data(a).chunks(c.max(1)).map(|row| row.iter().copied().sum()).collect();
        let out = if c == 0 { vec![T::zero(); r] } else { out };
        let needs = self.needs(a);
        self.push_mat(r, 1, out, Op::SumCols(a), needs)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.dims(parts[0]).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return shape_err(format!("concat_cols row mismatch {r} vs {rows}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push_mat(rows, total, out, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.dims(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return shape_err(format!("concat_rows col mismatch {c} vs {cols}"));
            }
            rows += r;
            out.extend_from_slice(self.data(p));
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push_mat(rows, cols, out, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > c {
            return shape_err(format!("slice_cols {start}+{len} of {c}"));
        }
        let out = self
            .data(a)
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let needs = self.needs(a);
        Ok(self.push_mat(r, len, out, Op::SliceCols(a, start), needs))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > r {
            return shape_err(format!("slice_rows {start}+{len} of {r}"));
        }
        let out = self.data(a)[start * c..(start + len) * c].to_vec();
        let needs = self.needs(a);
        Ok(self.push_mat(len, c, out, Op::SliceRows(a, start), needs))
    }

    /// Row lookup (embedding): `out[i] = table[indices[i]]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(Error::IndexError { index: i, bound: r });
            }
            out.extend_from_slice(&self.data(table)[i * c..(i + 1) * c]);
        }
        let needs = self.needs(table);
        Ok(self.push_mat(indices.len(), c, out, Op::GatherRows(table, indices.to_vec()), needs))
    }

    /// `prev + mask * (next - prev)` with one constant mask value per row.
    pub fn masked_update(&mut self, prev: Var, next: Var, mask: &[T]) -> Result<Var> {
        let (r, c) = self.dims(prev);
        if self.dims(next) != (r, c) || mask.len() != r {
            return shape_err(format!("masked_update {r}x{c} with mask {}", mask.len()));
        }
        let (p, n) = (self.data(prev), self.data(next));
        let mut out = Vec::with_capacity(r * c);
        for (i, &m) in mask.iter().enumerate() {
            for j in 0..c {
                let k = i * c + j;
                out.push(p[k] + m * (n[k] - p[k]));
            }
        }
        let needs = self.needs(prev) || self.needs(next);
        Ok(self.push_mat(
            r,
            c,
            out,
            Op::MaskedUpdate {
                prev,
                next,
                mask: mask.to_vec(),
            },
            needs,
        ))
    }

    /// Gated recurrent update from precomputed gate pre-activations.
    ///
    /// `gx = x W + b` and `gh = h U` are `B x 3H` with column blocks ordered
    /// reset, update, candidate. Returns `(1 - u) * n + u * h` where
    /// `r = sigmoid(gx_r + gh_r)`, `u = sigmoid(gx_u + gh_u)` and
    /// `n = tanh(gx_n + r * gh_n)`.
    pub fn gru_combine(&mut self, gx: Var, gh: Var, h: Var) -> Result<Var> {
        let (b, hd) = self.dims(h);
        if self.dims(gx) != (b, 3 * hd) || self.dims(gh) != (b, 3 * hd) {
            return shape_err(format!(
                "gru gates {:?}/{:?} for hidden {b}x{hd}",
                self.dims(gx),
                self.dims(gh)
            ));
        }
        let (x, g, hv) = (self.data(gx), self.data(gh), self.data(h));
        let mut r = Vec::with_capacity(b * hd);
        let mut u = Vec::with_capacity(b * hd);
        let mut n = Vec::with_capacity(b * hd);
        let mut out = Vec::with_capacity(b * hd);
        for i in 0..b {
            let row = i * 3 * hd;
            for j in 0..hd {
                let rv = sigmoid(x[row + j] + g[row + j]);
                let uv = sigmoid(x[row + hd + j] + g[row + hd + j]);
                let nv = (x[row + 2 * hd + j] + rv * g[row + 2 * hd + j]).tanh();
                let hp = hv[i * hd + j];
                out.push((T::one() - uv) * nv + uv * hp);
                r.push(rv);
                u.push(uv);
                n.push(nv);
            }
        }
        let needs = self.needs(gx) || self.needs(gh) || self.needs(h);
        Ok(self.push_mat(b, hd, out, Op::GruCombine { gx, gh, h, r, u, n }, needs))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = Vec::with_capacity(r * c);
        for row in self.data(a).chunks(c) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<T>().ln();
            out.extend(row.iter().map(|&x| x - lse));
        }
        let needs = self.needs(a);
        self.push_mat(r, c, out, Op::LogSoftmax(a), needs)
    }

    /// Weighted softmax cross-entropy: `sum_i w_i * nll_i / norm`.
    pub fn softmax_ce_weighted(&mut self, logits: Var, targets: &[usize], weights: &[T], norm: T) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if targets.len() != r || weights.len() != r {
            return shape_err(format!(
                "softmax_ce with {r} rows, {} targets, {} weights",
                targets.len(),
                weights.len()
            ));
        }
        let mut probs = Vec::with_capacity(r * c);
        let mut total = T::zero();
        for (i, row) in self.data(logits).chunks(c).enumerate() {
            let t = targets[i];
            if t >= c {
                return Err(Error::IndexError { index: t, bound: c });
            }
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&x| (x - mx).exp()).sum();
            probs.extend(row.iter().map(|&x| (x - mx).exp() / z));
            if weights[i] != T::zero() {
                total = total + weights[i] * (z.ln() + mx - row[t]);
            }
        }
        let value = if norm > T::zero() { total / norm } else { T::zero() };
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(value),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                norm,
                probs,
            },
            needs,
        ))
    }

    /// Mean softmax cross-entropy over rows.
    pub fn softmax_ce(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let w = vec![T::one(); targets.len()];
        self.softmax_ce_weighted(logits, targets, &w, T::of(targets.len() as f64))
    }

    /// Per-row KL divergence between diagonal Gaussians
    /// `N(mu_q, exp(log_sigma_q)^2)` and `N(mu_p, var_p)`; returns `B x 1`.
    pub fn kl_diag_rows(&mut self, mu_q: Var, log_sigma_q: Var, mu_p: Var, var_p: T) -> Result<Var> {
        let (b, d) = self.dims(mu_q);
        if self.dims(log_sigma_q) != (b, d) || self.dims(mu_p) != (b, d) {
            return shape_err(format!(
                "kl shapes {:?}, {:?}, {:?}",
                (b, d),
                self.dims(log_sigma_q),
                self.dims(mu_p)
            ));
        }
        let half = T::of(0.5);
        let log_var_p = var_p.ln();
        let (mq, ls, mp) = (self.data(mu_q), self.data(log_sigma_q), self.data(mu_p));
        let mut out = Vec::with_capacity(b);
        for i in 0..b {
            let mut acc = T::zero();
            for j in 0..d {
                let k = i * d + j;
                let diff = mq[k] - mp[k];
                acc = acc + half * log_var_p - ls[k] + ((ls[k] + ls[k]).exp() + diff * diff) / (var_p + var_p) - half;
            }
            out.push(acc);
        }
        let needs = self.needs(mu_q) || self.needs(log_sigma_q) || self.needs(mu_p);
        Ok(self.push_mat(
            b,
            1,
            out,
            Op::KlDiag {
                mu_q,
                log_sigma_q,
                mu_p,
                var_p,
            },
            needs,
        ))
    }

    /// `mean_ij (tanh(z_i - z_j) - sign(y_i - y_j))^2` over a `B x 1` column.
    pub fn latent_reg(&mut self, z: Var, targets: &[f64]) -> Result<Var> {
        let (b, c) = self.dims(z);
        if c != 1 || targets.len() != b {
            return shape_err(format!("latent_reg on {b}x{c} with {} targets", targets.len()));
        }
        if b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        let mut signs = Vec::with_capacity(b * b);
        for &yi in targets {
            for &yj in targets {
                let d = yi - yj;
                signs.push(T::of(if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }));
            }
        }
        let zv = self.data(z);
        let mut acc = T::zero();
        for i in 0..b {
            for j in 0..b {
                let e = (zv[i] - zv[j]).tanh() - signs[i * b + j];
                acc = acc + e * e;
            }
        }
        let value = acc / T::of((b * b) as f64);
        let needs = self.needs(z);
        Ok(self.push(Tensor::scalar(value), Op::LatentReg { z, signs }, needs))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one(); self.nodes[loss.0].value.len()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf | Op::Param) {
                grads[idx] = Some(g);
            }
        }
        Grads { grads }
    }

    /// Adds parameter gradients into the store's accumulators.
    pub fn accumulate(&self, grads: &Grads<T>, store: &mut ParamStore<T>) {
        for (&id, &v) in &self.bound {
            if let Some(g) = grads.get(v) {
                let acc = store.get_mut(id).grad.data_mut();
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
        }
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.needs(*a) {
                    let bv = self.data(*b);
                    self.acc(grads, *a, |ga| T::gemm(m, n, k, g, false, bv, true, ga, true));
                }
                if self.needs(*b) {
                    let av = self.data(*a);
                    self.acc(grads, *b, |gb| T::gemm(k, m, n, av, true, g, false, gb, true));
                }
            }
            Op::Add(a, b) => {
                self.acc_map(grads, *a, |i| g[i]);
                self.acc_map(grads, *b, |i| g[i]);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, |i| g[i]);
                self.acc_map(grads, *b, |i| -g[i]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                self.acc_map(grads, *a, |i| g[i] * bv[i]);
                self.acc_map(grads, *b, |i| g[i] * av[i]);
            }
            Op::AddRow(a, row) => {
                self.acc_map(grads, *a, |i| g[i]);
                let c = self.dims(*row).1;
                self.acc(grads, *row, |gr| {
                    for chunk in g.chunks(c) {
                        for (x, &y) in gr.iter_mut().zip(chunk) {
                            *x = *x + y;
                        }
                    }
                });
            }
            Op::Scale(a, s) => self.acc_map(grads, *a, |i| g[i] * *s),
            Op::Offset(a) => self.acc_map(grads, *a, |i| g[i]),
            Op::Sigmoid(a) => self.acc_map(grads, *a, |i| g[i] * out[i] * (T::one() - out[i])),
            Op::Tanh(a) => self.acc_map(grads, *a, |i| g[i] * (T::one() - out[i] * out[i])),
            Op::Exp(a) => self.acc_map(grads, *a, |i| g[i] * out[i]),
            Op::Square(a) => {
                let av = self.data(*a);
                self.acc_map(grads, *a, |i| g[i] * (av[i] + av[i]))
            }
            Op::Sum(a) => self.acc_map(grads, *a, |_| g[0]),
            Op::Mean(a) => {
                let n = T::of(self.data(*a).len().max(1) as f64);
                self.acc_map(grads, *a, |_| g[0] / n)
            }
            Op::SumCols(a) => {
                let c = self.dims(*a).1.max(1);
                self.acc_map(grads, *a, |i| g[i / c])
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    self.acc_map(grads, p, |i| {
                        let (r, c) = (i / w, i % w);
                        g[r * total + offset + c]
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.data(p).len();
                    self.acc_map(grads, p, |i| g[offset + i]);
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let c = self.dims(*a).1;
                let w = node.value.cols();
                let start = *start;
                self.acc(grads, *a, |ga| {
                    for (r, chunk) in g.chunks(w).enumerate() {
                        for (j, &v) in chunk.iter().enumerate() {
                            ga[r * c + start + j] = ga[r * c + start + j] + v;
                        }
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let c = self.dims(*a).1;
                let base = start * c;
                self.acc(grads, *a, |ga| {
                    for (x, &v) in ga[base..base + g.len()].iter_mut().zip(g) {
                        *x = *x + v;
                    }
                });
            }
            Op::GatherRows(table, idx) => {
                let c = self.dims(*table).1;
                self.acc(grads, *table, |gt| {
                    for (row, &t) in idx.iter().enumerate() {
                        for j in 0..c {
                            gt[t * c + j] = gt[t * c + j] + g[row * c + j];
                        }
                    }
                });
            }
            Op::MaskedUpdate { prev, next, mask } => {
                let c = node.value.cols();
                self.acc_map(grads, *prev, |i| g[i] * (T::one() - mask[i / c]));
                self.acc_map(grads, *next, |i| g[i] * mask[i / c]);
            }
            Op::GruCombine { gx, gh, h, r, u, n } => {
                let hd = node.value.cols();
                let hv = self.data(*h);
                let ghv = self.data(*gh);
                let b = node.value.rows();
                let mut dgx = vec![T::zero(); b * 3 * hd];
                let mut dgh = vec![T::zero(); b * 3 * hd];
                for i in 0..b {
                    let row = i * 3 * hd;
                    for j in 0..hd {
                        let k = i * hd + j;
                        let (rv, uv, nv) = (r[k], u[k], n[k]);
                        let du = g[k] * (hv[k] - nv);
                        let dn = g[k] * (T::one() - uv);
                        let dn_pre = dn * (T::one() - nv * nv);
                        let dr = dn_pre * ghv[row + 2 * hd + j];
                        let dr_pre = dr * rv * (T::one() - rv);
                        let du_pre = du * uv * (T::one() - uv);
                        dgx[row + j] = dr_pre;
                        dgh[row + j] = dr_pre;
                        dgx[row + hd + j] = du_pre;
                        dgh[row + hd + j] = du_pre;
                        dgx[row + 2 * hd + j] = dn_pre;
                        dgh[row + 2 * hd + j] = dn_pre * rv;
                    }
                }
                self.acc_map(grads, *gx, |i| dgx[i]);
                self.acc_map(grads, *gh, |i| dgh[i]);
                self.acc_map(grads, *h, |i| g[i] * u[i]);
            }
            Op::LogSoftmax(a) => {
                let c = node.value.cols();
                let mut dx = Vec::with_capacity(g.len());
                for (grow, orow) in g.chunks(c).zip(out.chunks(c)) {
                    let s: T = grow.iter().copied().sum();
                    dx.extend(grow.iter().zip(orow).map(|(&gi, &yi)| gi - yi.exp() * s));
                }
                self.acc_map(grads, *a, |i| dx[i]);
            }
            Op::SoftmaxCe {
                logits,
                targets,
                weights,
                norm,
                probs,
            } => {
                if *norm <= T::zero() {
                    return;
                }
                let c = self.dims(*logits).1;
                let scale = g[0] / *norm;
                self.acc_map(grads, *logits, |i| {
                    let (r, j) = (i / c, i % c);
                    let hot = if targets[r] == j { T::one() } else { T::zero() };
                    scale * weights[r] * (probs[i] - hot)
                });
            }
            Op::KlDiag {
                mu_q,
                log_sigma_q,
                mu_p,
                var_p,
            } => {
                let d = self.dims(*mu_q).1;
                let (mq, ls, mp) = (self.data(*mu_q), self.data(*log_sigma_q), self.data(*mu_p));
                let vp = *var_p;
                self.acc_map(grads, *mu_q, |i| g[i / d] * (mq[i] - mp[i]) / vp);
                self.acc_map(grads, *mu_p, |i| -g[i / d] * (mq[i] - mp[i]) / vp);
                self.acc_map(grads, *log_sigma_q, |i| g[i / d] * ((ls[i] + ls[i]).exp() / vp - T::one()));
            }
            Op::LatentReg { z, signs } => {
                let zv = self.data(*z);
                let b = zv.len();
                let scale = g[0] * T::of(4.0 / (b * b) as f64);
                let mut dz = vec![T::zero(); b];
                for i in 0..b {
                    let mut acc = T::zero();
                    for j in 0..b {
                        let t = (zv[i] - zv[j]).tanh();
                        acc = acc + (t - signs[i * b + j]) * (T::one() - t * t);
                    }
                    dz[i] = scale * acc;
                }
                self.acc_map(grads, *z, |i| dz[i]);
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.needs(v) {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }

    fn acc_map(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl Fn(usize) -> T) {
        self.acc(grads, v, |slot| {
            for (i, x) in slot.iter_mut().enumerate() {
                *x = *x + f(i);
            }
        });
    }
}
