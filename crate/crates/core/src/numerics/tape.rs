//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! Every op appends one node holding its output value. Backward walks the
//! list once in reverse append order, so the topological order is the
//! append order by construction. Inputs that are constants never receive
//! gradient buffers.

use std::collections::HashMap;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors, addressed by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real = f32> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate param {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Mutable access to every tensor, in id order.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.values.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Query/key row ranges for one block of a grouped attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnGroup {
    pub q: (usize, usize),
    pub k: (usize, usize),
}

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddConst(Var),
    MulConst(Var, Tensor<T>),
    Scale(Var, T),
    Shift(Var),
    Gelu(Var),
    Silu(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        scale: T,
        groups: Vec<AttnGroup>,
        probs: Vec<T>,
    },
    FrameDiff {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    MeanSquare(Var),
    Sum(Var),
    RepeatRows(Var),
    SliceCols(Var, usize),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only computation record. Single-threaded by construction.
#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn need2(a: &[usize], b: &[usize], op: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, a, b));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
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

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input that is differentiated against (see [`Grads::wrt`]).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a parameter once per tape; later calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.data(a),
            k as isize,
            1,
            self.data(b),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_vec(&[m, n], out), Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose2()?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Transpose(a), ng))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        need2(self.shape(a), self.shape(b), name)?;
        self.value(a).zip_map(self.value(b), f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    fn row_check(&self, a: Var, r: Var, name: &'static str) -> Result<usize> {
        let d = self.value(a).last_dim();
        if self.value(r).len() != d || self.value(a).rank() == 0 {
            return Err(Error::shape(name, self.shape(a), self.shape(r)));
        }
        Ok(d)
    }

    /// `a[.., j] + r[j]`: broadcast over every leading index.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let d = self.row_check(a, r, "add_row")?;
        let row = self.data(r).to_vec();
        let mut t = self.value(a).clone();
        for chunk in t.data_mut().chunks_mut(d) {
            for (x, &b) in chunk.iter_mut().zip(&row) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(r);
        Ok(self.push(t, Op::AddRow(a, r), ng))
    }

    /// `a[.., j] * r[j]`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let d = self.row_check(a, r, "mul_row")?;
        let row = self.data(r).to_vec();
        let mut t = self.value(a).clone();
        for chunk in t.data_mut().chunks_mut(d) {
            for (x, &b) in chunk.iter_mut().zip(&row) {
                *x *= b;
            }
        }
        let ng = self.ng(a) || self.ng(r);
        Ok(self.push(t, Op::MulRow(a, r), ng))
    }

    pub fn add_const(&mut self, a: Var, c: &Tensor<T>) -> Result<Var> {
        need2(self.shape(a), c.shape(), "add_const")?;
        let t = self.value(a).zip_map(c, |x, y| x + y)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::AddConst(a), ng))
    }

    pub fn mul_const(&mut self, a: Var, c: Tensor<T>) -> Result<Var> {
        need2(self.shape(a), c.shape(), "mul_const")?;
        let t = self.value(a).zip_map(&c, |x, y| x * y)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::MulConst(a, c), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let t = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    /// `a + s` elementwise.
    pub fn shift(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let t = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(t, Op::Shift(a), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(gelu);
        let ng = self.ng(a);
        self.push(t, Op::Gelu(a), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.ng(a);
        self.push(t, Op::Silu(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let ng = self.ng(a);
        self.push(t, Op::Relu(a), ng)
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rank() == 0 || x.last_dim() == 0 {
            return Err(Error::shape("softmax_lastdim", x.shape(), &[1]));
        }
        let mut t = x.clone();
        let d = t.last_dim();
        for row in t.data_mut().chunks_mut(d) {
            softmax_in_place(row);
        }
        let ng = self.ng(a);
        Ok(self.push(t, Op::Softmax(a), ng))
    }

    /// Normalizes every trailing-dimension slice; `gain`/`bias` are optional `[d]` affines.
    pub fn layer_norm(&mut self, x: Var, gain: Option<Var>, bias: Option<Var>, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if xv.rank() == 0 || d == 0 || eps <= 0.0 {
            return Err(Error::contract(format!(
                "layer_norm on {:?} with eps {eps}",
                xv.shape()
            )));
        }
        for p in [gain, bias].into_iter().flatten() {
            if self.value(p).len() != d {
                return Err(Error::shape("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        let rows = xv.rows();
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        for (r, row) in xv.data().chunks(d).enumerate() {
            let mean = row.iter().map(|v| v.f64()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = T::of(rs);
            for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = T::of((v.f64() - mean) * rs);
            }
        }
        let mut out = xhat.clone();
        if let Some(g) = gain {
            let g = self.data(g);
            for row in out.chunks_mut(d) {
                for (o, &gv) in row.iter_mut().zip(g) {
                    *o *= gv;
                }
            }
        }
        if let Some(b) = bias {
            let b = self.data(b);
            for row in out.chunks_mut(d) {
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += bv;
                }
            }
        }
        let ng = self.ng(x) || gain.is_some_and(|g| self.ng(g)) || bias.is_some_and(|b| self.ng(b));
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor::from_vec(&shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Multi-head scaled dot-product attention, `q: [Sq, D]`, `k, v: [Sk, D]`.
    ///
    /// Each group lets its query rows attend only to its key rows. Every query
    /// row must belong to exactly one group. One group spanning everything is
    /// ordinary dense attention.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, groups: &[AttnGroup]) -> Result<Var> {
        let (sq, sk) = (self.shape(q), self.shape(k));
        if sq.len() != 2 || sk.len() != 2 || sq[1] != sk[1] || self.shape(v) != sk {
            return Err(Error::shape("attention", sq, sk));
        }
        let (nq_total, d, nk_total) = (sq[0], sq[1], sk[0]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::contract(format!("attention: dim {d} not divisible by {heads} heads")));
        }
        let mut covered = vec![false; nq_total];
        for g in groups {
            if g.q.0 >= g.q.1 || g.k.0 >= g.k.1 || g.q.1 > nq_total || g.k.1 > nk_total {
                return Err(Error::contract(format!(
                    "attention group {g:?} outside {nq_total} queries / {nk_total} keys"
                )));
            }
            for c in &mut covered[g.q.0..g.q.1] {
                if *c {
                    return Err(Error::contract("attention groups overlap in queries"));
                }
                *c = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::contract("attention groups do not cover every query"));
        }
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut out = vec![T::zero(); nq_total * d];
        let mut probs = Vec::new();
        let di = d as isize;
        for g in groups {
            let (nq, nk) = (g.q.1 - g.q.0, g.k.1 - g.k.0);
            for h in 0..heads {
                let qo = g.q.0 * d + h * dh;
                let ko = g.k.0 * d + h * dh;
                let mut s = vec![T::zero(); nq * nk];
                T::gemm(nq, dh, nk, scale, &qd[qo..], di, 1, &kd[ko..], 1, di, T::zero(), &mut s, nk as isize, 1);
                for row in s.chunks_mut(nk) {
                    softmax_in_place(row);
                }
                T::gemm(nq, nk, dh, T::one(), &s, nk as isize, 1, &vd[ko..], di, 1, T::zero(), &mut out[qo..], di, 1);
                probs.extend_from_slice(&s);
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            Tensor::from_vec(&[nq_total, d], out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                scale,
                groups: groups.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Differences of consecutive slices along `axis`: `x[.., i+1, ..] - x[.., i, ..]`.
    pub fn frame_diff(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] < 2 {
            return Err(Error::contract(format!("frame_diff axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * (len - 1) * inner);
        for o in 0..outer {
            for f in 0..len - 1 {
                let a = o * len * inner + f * inner;
                let b = a + inner;
                out.extend((0..inner).map(|i| xd[b + i] - xd[a + i]));
            }
        }
        let mut oshape = shape;
        oshape[axis] = len - 1;
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::from_vec(&oshape, out),
            Op::FrameDiff { x, outer, len, inner },
            ng,
        ))
    }

    /// Mean of squared elements, accumulated in f64.
    pub fn mean_square(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::contract("mean_square of empty tensor"));
        }
        let s = self.value(x).sum_sq() / n as f64;
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(T::of(s)), Op::MeanSquare(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().map(|v| v.f64()).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(T::of(s)), Op::Sum(x), ng)
    }

    /// Stacks a `[d]` (or `[1, d]`) row `n` times into `[n, d]`.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Var {
        let row = self.data(x).to_vec();
        let d = row.len();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(&row);
        }
        let ng = self.ng(x);
        self.push(Tensor::from_vec(&[n, d], out), Op::RepeatRows(x), ng)
    }

    /// Columns `[start, start + len)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || start + len > s[1] {
            return Err(Error::contract(format!("slice_cols [{start}, +{len}) of {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xd[i * c + start..i * c + start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_vec(&[r, len], out), Op::SliceCols(x, start), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// `x @ w + b` for `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Grads {
            grads,
            params: self.params.clone(),
        })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.ng(v) {
                return;
            }
            let n = self.value(v).len();
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |ga| {
                    // dA = G @ B^T
                    T::gemm(m, n, k, T::one(), g, n as isize, 1, bd, 1, n as isize, T::one(), ga, k as isize, 1);
                });
                acc(*b, &mut |gb| {
                    // dB = A^T @ G
                    T::gemm(k, m, n, T::one(), ad, 1, k as isize, g, n as isize, 1, T::one(), gb, n as isize, 1);
                });
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (r, c) = (s[0], s[1]);
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    for (x, &y) in gb.iter_mut().zip(g) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |ga| {
                    for ((x, &y), &o) in ga.iter_mut().zip(g).zip(bd) {
                        *x += y * o;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, &y), &o) in gb.iter_mut().zip(g).zip(ad) {
                        *x += y * o;
                    }
                });
            }
            Op::AddRow(a, r) => {
                let d = self.value(*r).len();
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*r, &mut |gr| {
                    for chunk in g.chunks(d) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::MulRow(a, r) => {
                let d = self.value(*r).len();
                let (ad, rd) = (self.data(*a), self.data(*r));
                acc(*a, &mut |ga| {
                    for (gc, gi) in ga.chunks_mut(d).zip(g.chunks(d)) {
                        for ((x, &y), &rv) in gc.iter_mut().zip(gi).zip(rd) {
                            *x += y * rv;
                        }
                    }
                });
                acc(*r, &mut |gr| {
                    for (gi, ai) in g.chunks(d).zip(ad.chunks(d)) {
                        for ((x, &y), &av) in gr.iter_mut().zip(gi).zip(ai) {
                            *x += y * av;
                        }
                    }
                });
            }
            Op::AddConst(a) | Op::Shift(a) | Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::MulConst(a, c) => acc(*a, &mut |ga| {
                for ((x, &y), &cv) in ga.iter_mut().zip(g).zip(c.data()) {
                    *x += y * cv;
                }
            }),
            Op::Scale(a, s) => acc(*a, &mut |ga| {
                for (x, &y) in ga.iter_mut().zip(g) {
                    *x += y * *s;
                }
            }),
            Op::Gelu(a) => {
                let ad = self.data(*a);
                acc(*a, &mut |ga| {
                    for ((x, &y), &xv) in ga.iter_mut().zip(g).zip(ad) {
                        *x += y * gelu_grad(xv);
                    }
                });
            }
            Op::Silu(a) => {
                let ad = self.data(*a);
                acc(*a, &mut |ga| {
                    for ((x, &y), &xv) in ga.iter_mut().zip(g).zip(ad) {
                        let s = sigmoid(xv);
                        *x += y * s * (T::one() + xv * (T::one() - s));
                    }
                });
            }
            Op::Relu(a) => {
                let ad = self.data(*a);
                acc(*a, &mut |ga| {
                    for ((x, &y), &xv) in ga.iter_mut().zip(g).zip(ad) {
                        if xv > T::zero() {
                            *x += y;
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let d = node.value.last_dim();
                acc(*a, &mut |ga| {
                    for ((gx, gy), yy) in ga.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)) {
                        let dot: f64 = gy.iter().zip(yy).map(|(a, b)| a.f64() * b.f64()).sum();
                        let dot = T::of(dot);
                        for ((x, &gi), &yi) in gx.iter_mut().zip(gy).zip(yy) {
                            *x += yi * (gi - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = node.value.last_dim();
                if let Some(b) = bias {
                    acc(*b, &mut |gb| {
                        for chunk in g.chunks(d) {
                            add_into(gb, chunk);
                        }
                    });
                }
                if let Some(w) = gain {
                    acc(*w, &mut |gw| {
                        for (gi, xi) in g.chunks(d).zip(xhat.chunks(d)) {
                            for ((o, &a), &b) in gw.iter_mut().zip(gi).zip(xi) {
                                *o += a * b;
                            }
                        }
                    });
                }
                let gain_d = gain.map(|w| self.data(w));
                acc(*x, &mut |gx| {
                    let mut gh = vec![T::zero(); d];
                    for (r, ((go, gi), xi)) in gx
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        for j in 0..d {
                            gh[j] = match gain_d {
                                Some(w) => gi[j] * w[j],
                                None => gi[j],
                            };
                        }
                        let m1 = gh.iter().map(|v| v.f64()).sum::<f64>() / d as f64;
                        let m2 = gh.iter().zip(xi).map(|(a, b)| a.f64() * b.f64()).sum::<f64>() / d as f64;
                        let (m1, m2) = (T::of(m1), T::of(m2));
                        for j in 0..d {
                            go[j] += rstd[r] * (gh[j] - m1 - xi[j] * m2);
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                scale,
                groups,
                probs,
            } => {
                let d = self.shape(*q)[1];
                let dh = d / heads;
                let di = d as isize;
                let (qd, kd, vd) = (self.data(*q), self.data(*k), self.data(*v));
                let mut dq = vec![T::zero(); qd.len()];
                let mut dk = vec![T::zero(); kd.len()];
                let mut dv = vec![T::zero(); vd.len()];
                let mut off = 0;
                for grp in groups {
                    let (nq, nk) = (grp.q.1 - grp.q.0, grp.k.1 - grp.k.0);
                    let nki = nk as isize;
                    for h in 0..*heads {
                        let qo = grp.q.0 * d + h * dh;
                        let ko = grp.k.0 * d + h * dh;
                        let p = &probs[off..off + nq * nk];
                        off += nq * nk;
                        let mut dp = vec![T::zero(); nq * nk];
                        T::gemm(nq, dh, nk, T::one(), &g[qo..], di, 1, &vd[ko..], 1, di, T::zero(), &mut dp, nki, 1);
                        T::gemm(nk, nq, dh, T::one(), p, 1, nki, &g[qo..], di, 1, T::one(), &mut dv[ko..], di, 1);
                        for (dr, pr) in dp.chunks_mut(nk).zip(p.chunks(nk)) {
                            let dot = T::of(dr.iter().zip(pr).map(|(a, b)| a.f64() * b.f64()).sum::<f64>());
                            for (x, &pv) in dr.iter_mut().zip(pr) {
                                *x = pv * (*x - dot);
                            }
                        }
                        T::gemm(nq, nk, dh, *scale, &dp, nki, 1, &kd[ko..], di, 1, T::one(), &mut dq[qo..], di, 1);
                        T::gemm(nk, nq, dh, *scale, &dp, 1, nki, &qd[qo..], di, 1, T::one(), &mut dk[ko..], di, 1);
                    }
                }
                acc(*q, &mut |gq| add_into(gq, &dq));
                acc(*k, &mut |gk| add_into(gk, &dk));
                acc(*v, &mut |gv| add_into(gv, &dv));
            }
            Op::FrameDiff { x, outer, len, inner } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for f in 0..len - 1 {
                            let gi = (o * (len - 1) + f) * inner;
                            let a = o * len * inner + f * inner;
                            for i in 0..inner {
                                gx[a + inner + i] += g[gi + i];
                                gx[a + i] -= g[gi + i];
                            }
                        }
                    }
                });
            }
            Op::MeanSquare(x) => {
                let xd = self.data(*x);
                let c = g[0] * T::of(2.0 / xd.len() as f64);
                acc(*x, &mut |gx| {
                    for (o, &v) in gx.iter_mut().zip(xd) {
                        *o += c * v;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::RepeatRows(x) => {
                let d = self.value(*x).len();
                acc(*x, &mut |gx| {
                    for chunk in g.chunks(d) {
                        add_into(gx, chunk);
                    }
                });
            }
            Op::SliceCols(x, start) => {
                let c = self.shape(*x)[1];
                let len = node.value.shape()[1];
                acc(*x, &mut |gx| {
                    for (i, gi) in g.chunks(len).enumerate() {
                        add_into(&mut gx[i * c + start..i * c + start + len], gi);
                    }
                });
            }
        }
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Grads<T: Real> {
    grads: Vec<Option<Vec<T>>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Grads<T> {
    /// Gradient with respect to any node created before the loss; zeros if untouched.
    pub fn wrt(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        let shape = tape.shape(v);
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::from_vec(shape, g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    /// One gradient per parameter of `store`, in store order. Parameters the
    /// loss never touched get zeros.
    pub fn params(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store
            .iter()
            .map(|(id, _, value)| {
                match self.params.get(&id).and_then(|v| self.grads.get(v.0)).and_then(Option::as_ref) {
                    Some(g) => Tensor::from_vec(value.shape(), g.clone()),
                    None => Tensor::zeros(value.shape()),
                }
            })
            .collect()
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Max-subtracted softmax; the normalizer is summed in f64.
fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = 0.0f64;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        sum += x.f64();
    }
    let inv = T::of(1.0 / sum);
    for x in row.iter_mut() {
        *x *= inv;
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let th = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    T::of(0.5) * (T::one() + th) + T::of(0.5) * x * (T::one() - th * th) * du
}
