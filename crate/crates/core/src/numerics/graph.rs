//! Recorded computation tape with reverse-mode gradient propagation.
//!
//! A [`Graph`] borrows a [`ParamStore`] read-only while recording. Forward
//! ops append nodes; [`Graph::backward`] walks the tape in reverse and
//! returns [`Gradients`], which the caller folds into the store once the
//! graph is dropped. Two graphs over the same store are fully independent,
//! so separate forward passes can be recorded and differentiated in turn.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

enum Op<S> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    OuterAdd(Var, Var),
    Affine(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    Silu(Var),
    Abs(Var),
    LogSoftmax(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<S>, rstd: Vec<S> },
    Transpose(Var),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    /// Scalar whose gradient with respect to `input` was computed during forward.
    Custom { input: Var, grad: Vec<S> },
}

struct Node<S> {
    op: Op<S>,
    dims: Vec<usize>,
    value: Vec<S>,
}

pub struct Graph<'a, S: Real = f32> {
    store: &'a ParamStore<S>,
    nodes: Vec<Node<S>>,
    params: HashMap<ParamId, Var>,
}

/// Result of a backward pass: per-node gradients and per-parameter views.
pub struct Gradients<S> {
    nodes: Vec<Option<Vec<S>>>,
    params: Vec<(ParamId, usize)>,
}

impl<S: Real> Gradients<S> {
    /// Gradient of the loss with respect to a node, if it was reachable.
    pub fn of(&self, v: Var) -> Option<&[S]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for a parameter, if the loss depended on it.
    pub fn param(&self, id: ParamId) -> Option<&[S]> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|&(_, n)| self.nodes[n].as_deref())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[S])> {
        self.params
            .iter()
            .filter_map(|&(p, n)| self.nodes[n].as_deref().map(|g| (p, g)))
    }
}

fn matmul_raw<S: Real>(a: &[S], b: &[S], n: usize, k: usize, m: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn slot<S: Real>(grads: &mut [Option<Vec<S>>], v: Var, n: usize) -> &mut Vec<S> {
    grads[v.0].get_or_insert_with(|| vec![S::zero(); n])
}

impl<'a, S: Real> Graph<'a, S> {
    pub fn new(store: &'a ParamStore<S>) -> Self {
        Graph { store, nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn store(&self) -> &'a ParamStore<S> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[S] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.value(id).data(),
            _ => &node.value,
        }
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].dims
    }

    pub fn tensor(&self, v: Var) -> Tensor<S> {
        Tensor::new(self.dims(v).to_vec(), self.value(v).to_vec()).expect("node shapes are valid")
    }

    pub fn scalar(&self, v: Var) -> S {
        self.value(v)[0]
    }

    /// (rows, cols) of a 2-D node.
    pub fn shape2(&self, v: Var) -> Result<(usize, usize)> {
        match *self.dims(v) {
            [r, c] => Ok((r, c)),
            ref d => Err(shape_err!("expected a matrix, got dims {d:?}")),
        }
    }

    fn vec_len(&self, v: Var) -> Result<usize> {
        match *self.dims(v) {
            [n] => Ok(n),
            ref d => Err(shape_err!("expected a vector, got dims {d:?}")),
        }
    }

    fn push(&mut self, op: Op<S>, dims: Vec<usize>, value: Vec<S>) -> Result<Var> {
        debug_assert_eq!(dims.iter().product::<usize>(), value.len());
        if let Some(bad) = value.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value at element {bad} of node {}",
                self.nodes.len()
            )));
        }
        self.nodes.push(Node { op, dims, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, t: Tensor<S>) -> Result<Var> {
        let dims = t.dims().to_vec();
        self.push(Op::Input, dims, t.into_data())
    }

    pub fn zeros(&mut self, dims: &[usize]) -> Result<Var> {
        self.input(Tensor::zeros(dims)?)
    }

    /// Leaf node reading a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        self.store.check_id(id)?;
        let dims = self.store.value(id).dims().to_vec();
        self.nodes.push(Node { op: Op::Param(id), dims, value: Vec::new() });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.shape2(a)?;
        let (k2, m) = self.shape2(b)?;
        if k != k2 {
            return Err(shape_err!("matmul [{n}x{k}] * [{k2}x{m}]"));
        }
        let out = matmul_raw(self.value(a), self.value(b), n, k, m);
        self.push(Op::MatMul(a, b), vec![n, m], out)
    }

    fn same_dims(&self, a: Var, b: Var, what: &str) -> Result<Vec<usize>> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err!("{what}: {:?} vs {:?}", self.dims(a), self.dims(b)));
        }
        Ok(self.dims(a).to_vec())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<S>, f: impl Fn(S, S) -> S) -> Result<Var> {
        let dims = self.same_dims(a, b, "elementwise")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        self.push(op, dims, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds vector `b` (length M) to every row of matrix `a` (N×M).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.shape2(a)?;
        if self.vec_len(b)? != m {
            return Err(shape_err!("add_row: [{n}x{m}] + {:?}", self.dims(b)));
        }
        let bv = self.value(b);
        let out = self
            .value(a)
            .chunks(m)
            .flat_map(|row| row.iter().zip(bv).map(|(&x, &y)| x + y))
            .collect();
        self.push(Op::AddRow(a, b), vec![n, m], out)
    }

    /// All pairwise row sums: out[i*P + p] = a[i] + b[p], for a N×M and b P×M.
    pub fn outer_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.shape2(a)?;
        let (p, m2) = self.shape2(b)?;
        if m != m2 {
            return Err(shape_err!("outer_add: [{n}x{m}] vs [{p}x{m2}]"));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(n * p * m);
        for i in 0..n {
            for q in 0..p {
                out.extend(av[i * m..(i + 1) * m].iter().zip(&bv[q * m..(q + 1) * m]).map(|(&x, &y)| x + y));
            }
        }
        self.push(Op::OuterAdd(a, b), vec![n * p, m], out)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: S, shift: S) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| scale * x + shift).collect();
        let dims = self.dims(a).to_vec();
        self.push(Op::Affine(a, scale), dims, out)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var> {
        self.affine(a, c, S::zero())
    }

    fn map(&mut self, a: Var, op: Op<S>, f: impl Fn(S) -> S) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let dims = self.dims(a).to_vec();
        self.push(op, dims, out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), |x| x.tanh())
    }

    /// x·sigmoid(x).
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Abs(a), |x| x.abs())
    }

    fn row_op(&mut self, a: Var, op: Op<S>, log: bool) -> Result<Var> {
        let dims = self.dims(a).to_vec();
        let k = *dims.last().expect("non-empty dims");
        let mut out = Vec::with_capacity(self.value(a).len());
        for row in self.value(a).chunks(k) {
            let m = row.iter().copied().fold(S::neg_infinity(), S::max);
            let z: S = row.iter().map(|&x| (x - m).exp()).sum();
            if log {
                let lse = m + z.ln();
                out.extend(row.iter().map(|&x| x - lse));
            } else {
                out.extend(row.iter().map(|&x| (x - m).exp() / z));
            }
        }
        self.push(op, dims, out)
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.row_op(a, Op::LogSoftmax(a), true)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.row_op(a, Op::Softmax(a), false)
    }

    /// Per-row normalisation followed by elementwise gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.shape2(x)?;
        if self.vec_len(gain)? != m || self.vec_len(bias)? != m {
            return Err(shape_err!("layer_norm: width {m}, gain {:?}", self.dims(gain)));
        }
        let eps = S::of(LN_EPS);
        let inv_m = S::of(1.0 / m as f64);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let mut xhat = Vec::with_capacity(n * m);
        let mut rstd = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * m);
        for row in self.value(x).chunks(m) {
            let mu = row.iter().copied().sum::<S>() * inv_m;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>() * inv_m;
            let r = S::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mu) * r;
                xhat.push(h);
                out.push(h * gv[j] + bv[j]);
            }
        }
        self.push(Op::LayerNorm { x, gain, bias, xhat, rstd }, vec![n, m], out)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.shape2(a)?;
        let av = self.value(a);
        let mut out = vec![S::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = av[i * m + j];
            }
        }
        self.push(Op::Transpose(a), vec![m, n], out)
    }

    /// Rows [start, end) of a 2-D node.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.shape2(a)?;
        if start >= end || end > n {
            return Err(shape_err!("slice_rows [{start},{end}) of {n} rows"));
        }
        let out = self.value(a)[start * m..end * m].to_vec();
        self.push(Op::SliceRows(a, start), vec![end - start, m], out)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err!("concat_rows of nothing"))?;
        let (_, m) = self.shape2(first)?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape2(p)?;
            if c != m {
                return Err(shape_err!("concat_rows width {c} != {m}"));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * m);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push(Op::ConcatRows(parts.to_vec()), vec![rows, m], out)
    }

    /// Columns [start, end) of a 2-D node.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.shape2(a)?;
        if start >= end || end > m {
            return Err(shape_err!("slice_cols [{start},{end}) of {m} cols"));
        }
        let out = self.value(a).chunks(m).flat_map(|r| r[start..end].iter().copied()).collect();
        self.push(Op::SliceCols(a, start), vec![n, end - start], out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err!("concat_cols of nothing"))?;
        let (n, _) = self.shape2(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.shape2(p)?;
            if r != n {
                return Err(shape_err!("concat_cols rows {r} != {n}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), vec![n, total], out)
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let n: usize = dims.iter().product();
        if dims.contains(&0) || n != self.value(a).len() {
            return Err(shape_err!("reshape {:?} -> {dims:?}", self.dims(a)));
        }
        let out = self.value(a).to_vec();
        self.push(Op::Reshape(a), dims.to_vec(), out)
    }

    /// Row lookup: out[r] = table[indices[r]].
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (n, m) = self.shape2(table)?;
        if indices.is_empty() {
            return Err(shape_err!("gather_rows with no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(shape_err!("gather index {bad} out of {n} rows"));
        }
        let tv = self.value(table);
        let out = indices.iter().flat_map(|&i| tv[i * m..(i + 1) * m].iter().copied()).collect();
        self.push(Op::GatherRows(table, indices.to_vec()), vec![indices.len(), m], out)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().copied().sum();
        self.push(Op::Sum(a), vec![1], vec![s])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.iter().copied().sum::<S>() / S::of(v.len() as f64);
        self.push(Op::Mean(a), vec![1], vec![s])
    }

    /// Records a scalar computed outside the tape together with its gradient
    /// with respect to `input`.
    pub fn custom_scalar(&mut self, input: Var, value: S, grad: Vec<S>) -> Result<Var> {
        if grad.len() != self.value(input).len() {
            return Err(shape_err!("custom grad has {} values for {:?}", grad.len(), self.dims(input)));
        }
        self.push(Op::Custom { input, grad }, vec![1], vec![value])
    }

    /// Propagates d(loss)/d(node) to every node the scalar `loss` depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::State("backward called on a node that was never recorded".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(shape_err!("backward needs a scalar loss, got {:?}", self.dims(loss)));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);
        let mut params = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, &mut params);
            grads[i] = Some(g);
        }
        params.sort();
        Ok(Gradients { nodes: grads, params })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &[S],
        grads: &mut [Option<Vec<S>>],
        params: &mut Vec<(ParamId, usize)>,
    ) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Input => {}
            Op::Param(id) => params.push((*id, i)),
            &Op::MatMul(a, b) => {
                let [n, k] = self.nodes[a.0].dims[..] else { unreachable!() };
                let m = self.nodes[b.0].dims[1];
                let (av, bv) = (self.value(a), self.value(b));
                let da = slot(grads, a, n * k);
                for r in 0..n {
                    let grow = &g[r * m..(r + 1) * m];
                    for p in 0..k {
                        let brow = &bv[p * m..(p + 1) * m];
                        da[r * k + p] += grow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<S>();
                    }
                }
                let db = slot(grads, b, k * m);
                for r in 0..n {
                    let grow = &g[r * m..(r + 1) * m];
                    for p in 0..k {
                        let av = av[r * k + p];
                        if av == S::zero() {
                            continue;
                        }
                        for (d, &x) in db[p * m..(p + 1) * m].iter_mut().zip(grow) {
                            *d += av * x;
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                add_into(slot(grads, a, g.len()), g);
                add_into(slot(grads, b, g.len()), g);
            }
            &Op::Sub(a, b) => {
                add_into(slot(grads, a, g.len()), g);
                let db = slot(grads, b, g.len());
                for (d, &x) in db.iter_mut().zip(g) {
                    *d -= x;
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let da = slot(grads, a, g.len());
                for ((d, &x), &w) in da.iter_mut().zip(g).zip(bv) {
                    *d += x * w;
                }
                let db = slot(grads, b, g.len());
                for ((d, &x), &w) in db.iter_mut().zip(g).zip(av) {
                    *d += x * w;
                }
            }
            &Op::AddRow(a, b) => {
                add_into(slot(grads, a, g.len()), g);
                let m = node.dims[1];
                let db = slot(grads, b, m);
                for row in g.chunks(m) {
                    add_into(db, row);
                }
            }
            &Op::OuterAdd(a, b) => {
                let [n, m] = self.nodes[a.0].dims[..] else { unreachable!() };
                let p = self.nodes[b.0].dims[0];
                let da = slot(grads, a, n * m);
                for r in 0..n {
                    for q in 0..p {
                        let row = &g[(r * p + q) * m..(r * p + q + 1) * m];
                        add_into(&mut da[r * m..(r + 1) * m], row);
                    }
                }
                let db = slot(grads, b, p * m);
                for r in 0..n {
                    for q in 0..p {
                        let row = &g[(r * p + q) * m..(r * p + q + 1) * m];
                        add_into(&mut db[q * m..(q + 1) * m], row);
                    }
                }
            }
            &Op::Affine(a, scale) => {
                let da = slot(grads, a, g.len());
                for (d, &x) in da.iter_mut().zip(g) {
                    *d += scale * x;
                }
            }
            &Op::Sigmoid(a) => {
                let da = slot(grads, a, g.len());
                for ((d, &x), &s) in da.iter_mut().zip(g).zip(y) {
                    *d += x * s * (S::one() - s);
                }
            }
            &Op::Tanh(a) => {
                let da = slot(grads, a, g.len());
                for ((d, &x), &t) in da.iter_mut().zip(g).zip(y) {
                    *d += x * (S::one() - t * t);
                }
            }
            &Op::Silu(a) => {
                let av = self.value(a);
                let da = slot(grads, a, g.len());
                for ((d, &x), &v) in da.iter_mut().zip(g).zip(av) {
                    let s = sigmoid(v);
                    *d += x * s * (S::one() + v * (S::one() - s));
                }
            }
            &Op::Abs(a) => {
                let av = self.value(a);
                let da = slot(grads, a, g.len());
                for ((d, &x), &v) in da.iter_mut().zip(g).zip(av) {
                    if v > S::zero() {
                        *d += x;
                    } else if v < S::zero() {
                        *d -= x;
                    }
                }
            }
            &Op::LogSoftmax(a) => {
                let k = *node.dims.last().unwrap();
                let da = slot(grads, a, g.len());
                for ((drow, grow), yrow) in da.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                    let gs: S = grow.iter().copied().sum();
                    for ((d, &x), &l) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += x - l.exp() * gs;
                    }
                }
            }
            &Op::Softmax(a) => {
                let k = *node.dims.last().unwrap();
                let da = slot(grads, a, g.len());
                for ((drow, grow), yrow) in da.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                    let dot: S = grow.iter().zip(yrow).map(|(&x, &p)| x * p).sum();
                    for ((d, &x), &p) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += p * (x - dot);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let m = node.dims[1];
                let gv = self.value(*gain);
                let inv_m = S::of(1.0 / m as f64);
                let mut dgain = vec![S::zero(); m];
                let mut dbias = vec![S::zero(); m];
                let dx = slot(grads, *x, g.len());
                let mut dxhat = vec![S::zero(); m];
                for (r, (grow, hrow)) in g.chunks(m).zip(xhat.chunks(m)).enumerate() {
                    for j in 0..m {
                        dgain[j] += grow[j] * hrow[j];
                        dbias[j] += grow[j];
                        dxhat[j] = grow[j] * gv[j];
                    }
                    let mean_d = dxhat.iter().copied().sum::<S>() * inv_m;
                    let mean_dh = dxhat.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<S>() * inv_m;
                    for j in 0..m {
                        dx[r * m + j] += rstd[r] * (dxhat[j] - mean_d - hrow[j] * mean_dh);
                    }
                }
                add_into(slot(grads, *gain, m), &dgain);
                add_into(slot(grads, *bias, m), &dbias);
            }
            &Op::Transpose(a) => {
                let [n, m] = self.nodes[a.0].dims[..] else { unreachable!() };
                let da = slot(grads, a, n * m);
                for r in 0..n {
                    for c in 0..m {
                        da[r * m + c] += g[c * n + r];
                    }
                }
            }
            &Op::SliceRows(a, start) => {
                let m = node.dims[1];
                let total = self.value(a).len();
                let da = slot(grads, a, total);
                add_into(&mut da[start * m..start * m + g.len()], g);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    add_into(slot(grads, p, n), &g[off..off + n]);
                    off += n;
                }
            }
            &Op::SliceCols(a, start) => {
                let [n, w] = node.dims[..] else { unreachable!() };
                let m = self.nodes[a.0].dims[1];
                let da = slot(grads, a, n * m);
                for r in 0..n {
                    add_into(&mut da[r * m + start..r * m + start + w], &g[r * w..(r + 1) * w]);
                }
            }
            Op::ConcatCols(parts) => {
                let n = node.dims[0];
                let total = node.dims[1];
                let mut off = 0;
                for &p in parts {
                    let w = self.nodes[p.0].dims[1];
                    let dp = slot(grads, p, n * w);
                    for r in 0..n {
                        add_into(&mut dp[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                    }
                    off += w;
                }
            }
            &Op::Reshape(a) => add_into(slot(grads, a, g.len()), g),
            Op::GatherRows(table, idx) => {
                let [n, m] = self.nodes[table.0].dims[..] else { unreachable!() };
                let dt = slot(grads, *table, n * m);
                for (r, &i) in idx.iter().enumerate() {
                    add_into(&mut dt[i * m..(i + 1) * m], &g[r * m..(r + 1) * m]);
                }
            }
            &Op::Sum(a) => {
                let n = self.value(a).len();
                let da = slot(grads, a, n);
                da.iter_mut().for_each(|d| *d += g[0]);
            }
            &Op::Mean(a) => {
                let n = self.value(a).len();
                let share = g[0] / S::of(n as f64);
                let da = slot(grads, a, n);
                da.iter_mut().for_each(|d| *d += share);
            }
            Op::Custom { input, grad } => {
                let da = slot(grads, *input, grad.len());
                for (d, &x) in da.iter_mut().zip(grad) {
                    *d += g[0] * x;
                }
            }
        }
    }
}

fn add_into<S: Real>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
