use std::collections::{BTreeMap, HashMap};

use crate::tensor::{gemm_acc, gemm_at_acc, gemm_bt_acc};
use crate::{ParamStore, Real, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// One term of a negative log marginal likelihood: `-log(sum_{t in targets} p_t)`
/// where `p` is the softmax of the scores restricted to `candidates`.
///
/// Indices address the flattened scores tensor. `targets` must be a subset of
/// `candidates`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NllGroup {
    pub candidates: Vec<usize>,
    pub targets: Vec<usize>,
}

enum Value<'p, F> {
    Owned(Tensor<F>),
    Param(&'p Tensor<F>),
}

impl<F> Value<'_, F> {
    fn get(&self) -> &Tensor<F> {
        match self {
            Value::Owned(t) => t,
            Value::Param(t) => t,
        }
    }
}

enum Op<F> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather(Vec<(Var, usize)>),
    IndexAdd(Var, Vec<usize>),
    Sum(Var),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    Softmax(Var),
    Nll(Var, Vec<NllGroup>),
}

struct Node<'p, F> {
    value: Value<'p, F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Wengert list of tensor operations.
pub struct Tape<'p, F> {
    store: Option<&'p ParamStore<F>>,
    nodes: Vec<Node<'p, F>>,
    param_vars: HashMap<usize, Var>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<F> {
    params: BTreeMap<usize, Tensor<F>>,
    inputs: HashMap<Var, Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of a stored parameter, `None` if the loss did not touch it.
    pub fn param(&self, index: usize) -> Option<&Tensor<F>> {
        self.params.get(&index)
    }

    pub fn param_named<'a>(&'a self, store: &ParamStore<F>, name: &str) -> Option<&'a Tensor<F>> {
        store.index_of(name).and_then(|i| self.param(i))
    }

    pub fn input(&self, v: Var) -> Option<&Tensor<F>> {
        self.inputs.get(&v)
    }

    pub fn touched_params(&self) -> impl Iterator<Item = (usize, &Tensor<F>)> {
        self.params.iter().map(|(&i, t)| (i, t))
    }

    /// Adds `other`'s parameter gradients into `self`. Callers reduce in a fixed
    /// order to keep results reproducible.
    pub fn accumulate(&mut self, other: &Gradients<F>) {
        for (&i, g) in &other.params {
            match self.params.get_mut(&i) {
                Some(mine) => mine.add_assign(g),
                None => {
                    self.params.insert(i, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for g in self.params.values_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

fn check_same(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(TensorError::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn map<F: Real>(t: &Tensor<F>, f: impl Fn(F) -> F) -> Tensor<F> {
    Tensor::from_rows(t.rows(), t.cols(), t.data().iter().map(|&v| f(v)).collect())
        .expect("same length")
}

fn zip<F: Real>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    Tensor::from_rows(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("same length")
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Row-wise softmax; `-inf` entries receive exactly zero mass.
fn softmax_rows<F: Real>(t: &Tensor<F>) -> Result<Tensor<F>> {
    let (r, c) = (t.rows(), t.cols());
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = t.row_slice(i);
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        if m == F::neg_infinity() {
            return Err(TensorError::DegenerateMask { row: i });
        }
        let exps: Vec<F> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: F = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / s));
    }
    Tensor::from_rows(r, c, out)
}

fn log_sum_exp<F: Real>(values: impl Iterator<Item = F> + Clone) -> F {
    let m = values.clone().fold(F::neg_infinity(), F::max);
    if m == F::neg_infinity() {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<F>().ln()
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new(store: &'p ParamStore<F>) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    /// A tape with no parameter store; every [`Tape::param`] call fails.
    pub fn detached() -> Self {
        Tape {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        self.nodes[v.0].value.get()
    }

    /// Constant leaf; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf; its gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let store = self
            .store
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let idx = store
            .index_of(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        if let Some(&v) = self.param_vars.get(&idx) {
            return Ok(v);
        }
        self.nodes.push(Node {
            value: Value::Param(store.by_index(idx)),
            op: Op::Param(idx),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(idx, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(TensorError::shape("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![F::zero(); m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_rows(m, n, out)?, Op::MatMul(a, b), ng))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(TensorError::shape("matmul_bt", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = vec![F::zero(); m * n];
        gemm_bt_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_rows(m, n, out)?, Op::MatMulBt(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(TensorError::shape("add_row", ta.shape(), tb.shape()));
        }
        let c = ta.cols();
        let bd = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % c])
            .collect();
        let out = Tensor::from_rows(ta.rows(), c, data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::AddRow(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.value(a), self.value(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = map(self.value(a), |x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| F::one() - x);
        let ng = self.ng(a);
        self.push(out, Op::OneMinus(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = map(self.value(a), sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = map(self.value(a), F::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| x.max(F::zero()));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat_cols", "no inputs"))?;
        let rows = self.value(*first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(TensorError::shape(
                    "concat_cols",
                    self.value(*first).shape(),
                    self.value(p).shape(),
                ));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let out = Tensor::from_rows(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Vertical concatenation of tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat_rows", "no inputs"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(TensorError::shape(
                    "concat_rows",
                    self.value(*first).shape(),
                    t.shape(),
                ));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let out = Tensor::from_rows(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Stacks the listed rows (each taken from any recorded tensor) into a matrix.
    pub fn gather(&mut self, rows: &[(Var, usize)]) -> Result<Var> {
        let &(first, _) = rows
            .first()
            .ok_or_else(|| TensorError::invalid("gather", "no rows"))?;
        let cols = self.value(first).cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &(v, r) in rows {
            let t = self.value(v);
            if t.cols() != cols {
                return Err(TensorError::shape("gather", self.value(first).shape(), t.shape()));
            }
            if r >= t.rows() {
                return Err(TensorError::invalid(
                    "gather",
                    format!("row {r} out of range for shape {:?}", t.shape()),
                ));
            }
            data.extend_from_slice(t.row_slice(r));
        }
        let ng = rows.iter().any(|&(v, _)| self.ng(v));
        let out = Tensor::from_rows(rows.len(), cols, data)?;
        Ok(self.push(out, Op::Gather(rows.to_vec()), ng))
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let rows: Vec<_> = ids.iter().map(|&i| (table, i)).collect();
        self.gather(&rows)
    }

    /// `out[targets[i]] += src[i]` into an `n_rows`-row zero matrix; rows are
    /// accumulated in input order.
    pub fn index_add(&mut self, src: Var, targets: &[usize], n_rows: usize) -> Result<Var> {
        let t = self.value(src);
        if t.rows() != targets.len() {
            return Err(TensorError::shape("index_add", t.shape(), &[targets.len()]));
        }
        let cols = t.cols();
        let mut out = vec![F::zero(); n_rows * cols];
        for (i, &tg) in targets.iter().enumerate() {
            if tg >= n_rows {
                return Err(TensorError::invalid("index_add", format!("target {tg} >= {n_rows}")));
            }
            for (o, &v) in out[tg * cols..(tg + 1) * cols].iter_mut().zip(t.row_slice(i)) {
                *o += v;
            }
        }
        let ng = self.ng(src);
        let out = Tensor::from_rows(n_rows, cols, out)?;
        Ok(self.push(out, Op::IndexAdd(src, targets.to_vec()), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: F = self.value(a).data().iter().copied().sum();
        let ng = self.ng(a);
        self.push(Tensor::row(vec![s]), Op::Sum(a), ng)
    }

    /// Column-wise mean over rows.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![F::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(t.row_slice(i)) {
                *o += v;
            }
        }
        let n = F::of(r as f64);
        for o in &mut out {
            *o /= n;
        }
        let ng = self.ng(a);
        self.push(Tensor::row(out), Op::MeanRows(a), ng)
    }

    /// Column-wise maximum over rows; ties go to the first row.
    pub fn max_pool_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows() == 0 {
            return Err(TensorError::invalid("max_pool_rows", "no rows"));
        }
        let c = t.cols();
        let mut best = t.row_slice(0).to_vec();
        let mut arg = vec![0usize; c];
        for i in 1..t.rows() {
            for (j, &v) in t.row_slice(i).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    arg[j] = i;
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::row(best), Op::MaxRows(a, arg), ng))
    }

    /// Row-wise softmax. Entries equal to `-inf` get probability exactly 0.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a))?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    /// Row-wise `softmax(logits + mask)` with mask entries in `{0, -inf}`.
    pub fn masked_softmax(&mut self, logits: Var, mask: &Tensor<F>) -> Result<Var> {
        let t = self.value(logits);
        check_same("masked_softmax", t, mask)?;
        if mask
            .data()
            .iter()
            .any(|&m| m != F::zero() && m != F::neg_infinity())
        {
            return Err(TensorError::invalid("masked_softmax", "mask entries must be 0 or -inf"));
        }
        let m = self.constant(mask.clone());
        let shifted = self.add(logits, m)?;
        self.softmax(shifted)
    }

    /// Sum of `-log P(targets | candidates)` over the groups; see [`NllGroup`].
    pub fn nll(&mut self, scores: Var, groups: Vec<NllGroup>) -> Result<Var> {
        let data = self.value(scores).data();
        let mut total = F::zero();
        for g in &groups {
            if g.candidates.is_empty() || g.targets.is_empty() {
                return Err(TensorError::invalid("nll", "empty candidate or target set"));
            }
            if let Some(&bad) = g
                .candidates
                .iter()
                .chain(&g.targets)
                .find(|&&i| i >= data.len())
            {
                return Err(TensorError::invalid("nll", format!("index {bad} out of range")));
            }
            let all = log_sum_exp(g.candidates.iter().map(|&i| data[i]));
            let tgt = log_sum_exp(g.targets.iter().map(|&i| data[i]));
            total += all - tgt;
        }
        let ng = self.ng(scores);
        Ok(self.push(Tensor::row(vec![total]), Op::Nll(scores, groups), ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_rows(lt.rows(), lt.cols(), vec![F::one()])?);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    out.inputs.insert(Var(i), g);
                }
                Op::Param(idx) => {
                    out.params.insert(*idx, g);
                }
                op => self.propagate(op, Var(i), &g, &mut grads)?,
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        op: &Op<F>,
        me: Var,
        g: &Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
    ) -> Result<()> {
        let out = self.value(me);
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.ng(*a) {
                    let mut ga = vec![F::zero(); m * k];
                    gemm_bt_acc(g.data(), tb.data(), &mut ga, m, n, k);
                    self.acc(grads, *a, Tensor::from_rows(m, k, ga)?);
                }
                if self.ng(*b) {
                    let mut gb = vec![F::zero(); k * n];
                    gemm_at_acc(ta.data(), g.data(), &mut gb, m, k, n);
                    self.acc(grads, *b, Tensor::new(tb.shape().to_vec(), gb)?);
                }
            }
            Op::MatMulBt(a, b) => {
                // out = a b^T, a: m x k, b: n x k
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if self.ng(*a) {
                    let mut ga = vec![F::zero(); m * k];
                    gemm_acc(g.data(), tb.data(), &mut ga, m, n, k);
                    self.acc(grads, *a, Tensor::new(ta.shape().to_vec(), ga)?);
                }
                if self.ng(*b) {
                    let mut gb = vec![F::zero(); n * k];
                    gemm_at_acc(g.data(), ta.data(), &mut gb, m, n, k);
                    self.acc(grads, *b, Tensor::new(tb.shape().to_vec(), gb)?);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*b) {
                    let c = g.cols();
                    let mut gb = vec![F::zero(); c];
                    for r in 0..g.rows() {
                        for (o, &v) in gb.iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    self.acc(grads, *b, Tensor::new(shape, gb)?);
                }
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, map(g, |v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.acc(grads, *a, zip(g, tb, |x, y| x * y));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, zip(g, ta, |x, y| x * y));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(grads, *a, map(g, |v| v * s));
            }
            Op::OneMinus(a) => self.acc(grads, *a, map(g, |v| -v)),
            Op::Sigmoid(a) => self.acc(grads, *a, zip(g, out, |gv, y| gv * y * (F::one() - y))),
            Op::Tanh(a) => self.acc(grads, *a, zip(g, out, |gv, y| gv * (F::one() - y * y))),
            Op::Relu(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, zip(g, x, |gv, xv| if xv > F::zero() { gv } else { F::zero() }));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    let (r, c) = (t.rows(), t.cols());
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(r * c);
                        for i in 0..r {
                            d.extend_from_slice(&g.row_slice(i)[offset..offset + c]);
                        }
                        self.acc(grads, p, Tensor::new(t.shape().to_vec(), d)?);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let c = g.cols();
                for &p in parts {
                    let t = self.value(p);
                    let n = t.rows() * c;
                    if self.ng(p) {
                        let d = g.data()[offset..offset + n].to_vec();
                        self.acc(grads, p, Tensor::new(t.shape().to_vec(), d)?);
                    }
                    offset += n;
                }
            }
            Op::Gather(rows) => {
                // group contributions per source so each source receives one add
                let mut per_src: BTreeMap<Var, Tensor<F>> = BTreeMap::new();
                for (k, &(v, r)) in rows.iter().enumerate() {
                    if !self.ng(v) {
                        continue;
                    }
                    let entry = per_src
                        .entry(v)
                        .or_insert_with(|| Tensor::zeros_shape(self.value(v).shape()));
                    let c = entry.cols();
                    for (o, &x) in entry.data_mut()[r * c..(r + 1) * c]
                        .iter_mut()
                        .zip(g.row_slice(k))
                    {
                        *o += x;
                    }
                }
                for (v, t) in per_src {
                    self.acc(grads, v, t);
                }
            }
            Op::IndexAdd(src, targets) => {
                if self.ng(*src) {
                    let c = g.cols();
                    let mut d = Vec::with_capacity(targets.len() * c);
                    for &t in targets {
                        d.extend_from_slice(g.row_slice(t));
                    }
                    let shape = self.value(*src).shape().to_vec();
                    self.acc(grads, *src, Tensor::new(shape, d)?);
                }
            }
            Op::Sum(a) => {
                let s = g.scalar();
                let t = self.value(*a);
                self.acc(grads, *a, Tensor::new(t.shape().to_vec(), vec![s; t.len()])?);
            }
            Op::MeanRows(a) => {
                let t = self.value(*a);
                let n = F::of(t.rows() as f64);
                let mut d = Vec::with_capacity(t.len());
                for _ in 0..t.rows() {
                    d.extend(g.data().iter().map(|&v| v / n));
                }
                self.acc(grads, *a, Tensor::new(t.shape().to_vec(), d)?);
            }
            Op::MaxRows(a, arg) => {
                let t = self.value(*a);
                let c = t.cols();
                let mut d = vec![F::zero(); t.len()];
                for (j, &r) in arg.iter().enumerate() {
                    d[r * c + j] += g.data()[j];
                }
                self.acc(grads, *a, Tensor::new(t.shape().to_vec(), d)?);
            }
            Op::Softmax(a) => {
                let (r, c) = (out.rows(), out.cols());
                let mut d = Vec::with_capacity(r * c);
                for i in 0..r {
                    let p = out.row_slice(i);
                    let gr = g.row_slice(i);
                    let dot: F = p.iter().zip(gr).map(|(&x, &y)| x * y).sum();
                    d.extend(p.iter().zip(gr).map(|(&pv, &gv)| pv * (gv - dot)));
                }
                let shape = self.value(*a).shape().to_vec();
                self.acc(grads, *a, Tensor::new(shape, d)?);
            }
            Op::Nll(a, groups) => {
                let t = self.value(*a);
                let x = t.data();
                let s = g.scalar();
                let mut d = vec![F::zero(); t.len()];
                for grp in groups {
                    let all = log_sum_exp(grp.candidates.iter().map(|&i| x[i]));
                    let tgt = log_sum_exp(grp.targets.iter().map(|&i| x[i]));
                    for &i in &grp.candidates {
                        d[i] += s * (x[i] - all).exp();
                    }
                    for &i in &grp.targets {
                        d[i] -= s * (x[i] - tgt).exp();
                    }
                }
                self.acc(grads, *a, Tensor::new(t.shape().to_vec(), d)?);
            }
        }
        Ok(())
    }
}
