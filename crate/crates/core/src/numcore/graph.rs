use std::collections::HashMap;

use super::ops::{gemm_acc, gemm_ta_acc, gemm_tb_acc, sigmoid, softmax_unchecked};
use super::params::{Gradients, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Constant,
    Param(usize),
    MatMul(NodeId, NodeId),
    MatMulTA(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddCol(NodeId, NodeId),
    Scale(NodeId, T),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    Column(NodeId, usize),
    Blend(NodeId, NodeId, Vec<bool>),
    MeanCols(NodeId),
    CosineCols(NodeId, NodeId),
    GatherCols(NodeId, Vec<Option<u32>>),
    Broadcast(NodeId),
    Bce { p: NodeId, label: bool, weight: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Lower clamp applied to probabilities inside the cross-entropy node.
pub const PROB_CLAMP: f64 = 1e-7;

/// Reverse-mode tape over 2-D tensors. Values are computed eagerly as nodes
/// are pushed; `backward` walks the tape once in reverse.
///
/// Vectors are `[n, 1]` matrices. Every pushed value is checked for
/// finiteness.
pub struct Graph<'p, T: Real = f64> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    bound: HashMap<usize, NodeId>,
}

fn dims<T: Real>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn shape_of(&self, id: NodeId) -> (usize, usize) {
        dims(&self.nodes[id.0].value)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op_name(&op).to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// A constant matrix `[rows, cols]` (vectors become `[n, 1]`).
    pub fn constant(&mut self, value: Tensor<T>) -> Result<NodeId> {
        let (r, c) = dims(&value);
        let value = value.reshaped(vec![r, c])?;
        self.push(value, Op::Constant, false)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Result<NodeId> {
        self.constant(Tensor::zeros(&[rows, cols]))
    }

    /// Binds a named parameter block as a differentiable leaf. Repeated
    /// binds of one name return the same node.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        let idx = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::ModelFormat(format!("missing parameter block `{name}`")))?;
        if let Some(&id) = self.bound.get(&idx) {
            return Ok(id);
        }
        let t = self.params.value_at(idx);
        let (r, c) = dims(t);
        let value = t.clone().reshaped(vec![r, c])?;
        let id = self.push(value, Op::Param(idx), true)?;
        self.bound.insert(idx, id);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, k) = self.shape_of(a);
        let (k2, c) = self.shape_of(b);
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{r}x{k}] · [{k2}x{c}]")));
        }
        let mut out = vec![T::zero(); r * c];
        gemm_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            r,
            k,
            c,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(r, c, out)?, Op::MatMul(a, b), rg)
    }

    /// `aᵀ · b`
    pub fn matmul_ta(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (k, r) = self.shape_of(a);
        let (k2, c) = self.shape_of(b);
        if k != k2 {
            return Err(Error::shape(
                "matmul_ta",
                format!("[{k}x{r}]ᵀ · [{k2}x{c}]"),
            ));
        }
        let mut out = vec![T::zero(); r * c];
        gemm_ta_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            k,
            r,
            c,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(r, c, out)?, Op::MatMulTA(a, b), rg)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(usize, usize)> {
        let sa = self.shape_of(a);
        let sb = self.shape_of(b);
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(r, c, out)?, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(r, c, out)?, Op::Mul(a, b), rg)
    }

    /// Adds column vector `b` to every column of `a`.
    pub fn add_col(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape_of(a);
        if self.shape_of(b) != (r, 1) {
            return Err(Error::shape(
                "add_col",
                format!("[{r}x{c}] + {:?}", self.shape_of(b)),
            ));
        }
        let bv = self.value(b).data();
        let out = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i / c])
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(r, c, out)?, Op::AddCol(a, b), rg)
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> Result<NodeId> {
        let (r, c) = self.shape_of(a);
        let out = self.value(a).data().iter().map(|&x| x * s).collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(r, c, out)?, Op::Scale(a, s), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.tanh());
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    /// Softmax over all entries; output is an `[n, 1]` column.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::Empty("softmax"));
        }
        let out = softmax_unchecked(v.data());
        let n = out.len();
        let rg = self.rg(a);
        self.push(Tensor::matrix(n, 1, out)?, Op::Softmax(a), rg)
    }

    /// Stacks blocks with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let c = parts
            .first()
            .map(|&p| self.shape_of(p).1)
            .ok_or(Error::Empty("concat_rows"))?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.shape_of(p);
            if pc != c {
                return Err(Error::shape("concat_rows", format!("{pc} cols vs {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::matrix(rows, c, out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    /// Places blocks with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let r = parts
            .first()
            .map(|&p| self.shape_of(p).0)
            .ok_or(Error::Empty("concat_cols"))?;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.shape_of(p);
            if pr != r {
                return Err(Error::shape("concat_cols", format!("{pr} rows vs {r}")));
            }
            cols += pc;
        }
        let mut out = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                let v = self.value(p);
                let pc = v.cols();
                out.extend_from_slice(&v.data()[i * pc..(i + 1) * pc]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::matrix(r, cols, out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        )
    }

    pub fn column(&mut self, a: NodeId, j: usize) -> Result<NodeId> {
        let (r, c) = self.shape_of(a);
        if j >= c {
            return Err(Error::shape("column", format!("index {j} of {c}")));
        }
        let out = self.value(a).column(j);
        let rg = self.rg(a);
        self.push(Tensor::matrix(r, 1, out)?, Op::Column(a, j), rg)
    }

    /// Column-wise select: column `j` comes from `a` where `take_a[j]`, else from `b`.
    pub fn blend(&mut self, a: NodeId, b: NodeId, take_a: Vec<bool>) -> Result<NodeId> {
        let (r, c) = self.same_shape("blend", a, b)?;
        if take_a.len() != c {
            return Err(Error::shape(
                "blend",
                format!("mask {} vs {c} cols", take_a.len()),
            ));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out = (0..r * c)
            .map(|i| if take_a[i % c] { va[i] } else { vb[i] })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(r, c, out)?, Op::Blend(a, b, take_a), rg)
    }

    /// Mean over columns, summed left to right.
    pub fn mean_cols(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape_of(a);
        if c == 0 {
            return Err(Error::Empty("mean_cols"));
        }
        let v = self.value(a).data();
        let n = T::from_usize(c).unwrap();
        let out = (0..r)
            .map(|i| {
                let s = v[i * c..(i + 1) * c]
                    .iter()
                    .fold(T::zero(), |acc, &x| acc + x);
                s / n
            })
            .collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(r, 1, out)?, Op::MeanCols(a), rg)
    }

    /// Cosine similarity between column vector `q` and each column of `keys`;
    /// output `[c, 1]`. A zero-norm argument yields energy 0.
    pub fn cosine_cols(&mut self, q: NodeId, keys: NodeId) -> Result<NodeId> {
        let (r, one) = self.shape_of(q);
        let (kr, c) = self.shape_of(keys);
        if one != 1 || kr != r {
            return Err(Error::shape(
                "cosine_cols",
                format!("[{r}x{one}] vs [{kr}x{c}]"),
            ));
        }
        let qv = self.value(q).column(0);
        let kv = self.value(keys);
        let out = (0..c)
            .map(|j| cosine(&qv, &kv.column(j)))
            .collect::<Vec<_>>();
        let rg = self.rg(q) || self.rg(keys);
        self.push(Tensor::matrix(c, 1, out)?, Op::CosineCols(q, keys), rg)
    }

    /// Gathers rows of `table` (`[rows, dim]`) as columns of a `[dim, n]`
    /// output. `None` yields a zero column.
    pub fn gather_cols(&mut self, table: NodeId, ids: Vec<Option<u32>>) -> Result<NodeId> {
        let (rows, dim) = self.shape_of(table);
        let n = ids.len();
        let tv = self.value(table).data();
        let mut out = vec![T::zero(); dim * n];
        for (j, id) in ids.iter().enumerate() {
            if let Some(id) = *id {
                let id = id as usize;
                if id >= rows {
                    return Err(Error::TokenOutOfRange {
                        id: id as u32,
                        rows,
                    });
                }
                for d in 0..dim {
                    out[d * n + j] = tv[id * dim + d];
                }
            }
        }
        let rg = self.rg(table);
        self.push(Tensor::matrix(dim, n, out)?, Op::GatherCols(table, ids), rg)
    }

    /// Repeats a `[1, 1]` node into an `[n, 1]` column.
    pub fn broadcast(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        if self.shape_of(a) != (1, 1) {
            return Err(Error::shape("broadcast", format!("{:?}", self.shape_of(a))));
        }
        let x = self.value(a).data()[0];
        let rg = self.rg(a);
        self.push(Tensor::filled(&[n, 1], x), Op::Broadcast(a), rg)
    }

    /// Class-weighted binary cross-entropy of a probability node.
    pub fn weighted_bce(&mut self, p: NodeId, label: bool, weight: T) -> Result<NodeId> {
        if self.shape_of(p) != (1, 1) {
            return Err(Error::shape(
                "weighted_bce",
                format!("{:?}", self.shape_of(p)),
            ));
        }
        let pv = self.value(p).data()[0];
        let loss = crate::training::weighted_bce(pv, label, weight);
        let rg = self.rg(p);
        self.push(
            Tensor::matrix(1, 1, vec![loss])?,
            Op::Bce { p, label, weight },
            rg,
        )
    }

    /// Reverse pass from a scalar root. Returns gradients for every bound
    /// parameter block.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        if self.shape_of(root) != (1, 1) {
            return Err(Error::shape("backward", "root must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(&[1, 1], T::one()));
        let mut out = Gradients::empty(self.params.len());

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let y = &node.value;
            let gd = g.data();
            match &node.op {
                Op::Constant => {}
                Op::Param(idx) => {
                    let g = g.reshaped(self.params.value_at(*idx).shape().to_vec())?;
                    match &mut out.blocks[*idx] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
                Op::MatMul(a, b) => {
                    let (r, k) = self.shape_of(*a);
                    let c = y.cols();
                    if self.rg(*a) {
                        let mut da = vec![T::zero(); r * k];
                        gemm_tb_acc(gd, self.value(*b).data(), &mut da, r, c, k);
                        acc(&mut grads, *a, r, k, da);
                    }
                    if self.rg(*b) {
                        let mut db = vec![T::zero(); k * c];
                        gemm_ta_acc(self.value(*a).data(), gd, &mut db, r, k, c);
                        acc(&mut grads, *b, k, c, db);
                    }
                }
                Op::MatMulTA(a, b) => {
                    // y[r×c] = aᵀ b, a: k×r, b: k×c
                    let (k, r) = self.shape_of(*a);
                    let c = y.cols();
                    if self.rg(*a) {
                        // da = b · gᵀ  [k×r]
                        let mut da = vec![T::zero(); k * r];
                        gemm_tb_acc(self.value(*b).data(), gd, &mut da, k, c, r);
                        acc(&mut grads, *a, k, r, da);
                    }
                    if self.rg(*b) {
                        // db = a · g  [k×c]
                        let mut db = vec![T::zero(); k * c];
                        gemm_acc(self.value(*a).data(), gd, &mut db, k, r, c);
                        acc(&mut grads, *b, k, c, db);
                    }
                }
                Op::Add(a, b) => {
                    let (r, c) = dims(y);
                    if self.rg(*a) {
                        acc(&mut grads, *a, r, c, gd.to_vec());
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, r, c, gd.to_vec());
                    }
                }
                Op::Mul(a, b) => {
                    let (r, c) = dims(y);
                    if self.rg(*a) {
                        let d = zip_map(gd, self.value(*b).data(), |g, x| g * x);
                        acc(&mut grads, *a, r, c, d);
                    }
                    if self.rg(*b) {
                        let d = zip_map(gd, self.value(*a).data(), |g, x| g * x);
                        acc(&mut grads, *b, r, c, d);
                    }
                }
                Op::AddCol(a, b) => {
                    let (r, c) = dims(y);
                    if self.rg(*a) {
                        acc(&mut grads, *a, r, c, gd.to_vec());
                    }
                    if self.rg(*b) {
                        let d = (0..r)
                            .map(|i| gd[i * c..(i + 1) * c].iter().copied().sum())
                            .collect();
                        acc(&mut grads, *b, r, 1, d);
                    }
                }
                Op::Scale(a, s) => {
                    let (r, c) = dims(y);
                    acc(&mut grads, *a, r, c, gd.iter().map(|&g| g * *s).collect());
                }
                Op::Sigmoid(a) => {
                    let (r, c) = dims(y);
                    let d = zip_map(gd, y.data(), |g, s| g * s * (T::one() - s));
                    acc(&mut grads, *a, r, c, d);
                }
                Op::Tanh(a) => {
                    let (r, c) = dims(y);
                    let d = zip_map(gd, y.data(), |g, t| g * (T::one() - t * t));
                    acc(&mut grads, *a, r, c, d);
                }
                Op::Softmax(a) => {
                    let dot: T = gd.iter().zip(y.data()).map(|(&g, &p)| g * p).sum();
                    let d = zip_map(gd, y.data(), |g, p| p * (g - dot));
                    let (r, c) = self.shape_of(*a);
                    acc(&mut grads, *a, r, c, d);
                }
                Op::ConcatRows(parts) => {
                    let c = y.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, _) = self.shape_of(p);
                        if self.rg(p) {
                            let d = gd[offset * c..(offset + pr) * c].to_vec();
                            acc(&mut grads, p, pr, c, d);
                        }
                        offset += pr;
                    }
                }
                Op::ConcatCols(parts) => {
                    let (r, c) = dims(y);
                    let mut offset = 0;
                    for &p in parts {
                        let (_, pc) = self.shape_of(p);
                        if self.rg(p) {
                            let mut d = Vec::with_capacity(r * pc);
                            for i in 0..r {
                                d.extend_from_slice(&gd[i * c + offset..i * c + offset + pc]);
                            }
                            acc(&mut grads, p, r, pc, d);
                        }
                        offset += pc;
                    }
                }
                Op::Column(a, j) => {
                    let (r, c) = self.shape_of(*a);
                    let mut d = vec![T::zero(); r * c];
                    for i in 0..r {
                        d[i * c + j] = gd[i];
                    }
                    acc(&mut grads, *a, r, c, d);
                }
                Op::Blend(a, b, take_a) => {
                    let (r, c) = dims(y);
                    if self.rg(*a) {
                        let d = (0..r * c)
                            .map(|i| if take_a[i % c] { gd[i] } else { T::zero() })
                            .collect();
                        acc(&mut grads, *a, r, c, d);
                    }
                    if self.rg(*b) {
                        let d = (0..r * c)
                            .map(|i| if take_a[i % c] { T::zero() } else { gd[i] })
                            .collect();
                        acc(&mut grads, *b, r, c, d);
                    }
                }
                Op::MeanCols(a) => {
                    let (r, c) = self.shape_of(*a);
                    let n = T::from_usize(c).unwrap();
                    let d = (0..r * c).map(|i| gd[i / c] / n).collect();
                    acc(&mut grads, *a, r, c, d);
                }
                Op::CosineCols(q, keys) => {
                    let qv = self.value(*q).column(0);
                    let kv = self.value(*keys);
                    let (r, c) = dims(kv);
                    let qn = norm(&qv);
                    let mut dq = vec![T::zero(); r];
                    let mut dk = vec![T::zero(); r * c];
                    for j in 0..c {
                        let k = kv.column(j);
                        let kn = norm(&k);
                        if qn == T::zero() || kn == T::zero() {
                            continue;
                        }
                        let cos = y.data()[j];
                        let inv = T::one() / (qn * kn);
                        for i in 0..r {
                            dq[i] = dq[i] + gd[j] * (k[i] * inv - cos * qv[i] / (qn * qn));
                            dk[i * c + j] = gd[j] * (qv[i] * inv - cos * k[i] / (kn * kn));
                        }
                    }
                    if self.rg(*q) {
                        acc(&mut grads, *q, r, 1, dq);
                    }
                    if self.rg(*keys) {
                        acc(&mut grads, *keys, r, c, dk);
                    }
                }
                Op::GatherCols(table, ids) => {
                    let (rows, dim) = self.shape_of(*table);
                    let n = ids.len();
                    let mut d = vec![T::zero(); rows * dim];
                    for (j, id) in ids.iter().enumerate() {
                        if let Some(id) = *id {
                            let id = id as usize;
                            for k in 0..dim {
                                d[id * dim + k] = d[id * dim + k] + gd[k * n + j];
                            }
                        }
                    }
                    acc(&mut grads, *table, rows, dim, d);
                }
                Op::Broadcast(a) => {
                    let s = gd.iter().copied().sum();
                    acc(&mut grads, *a, 1, 1, vec![s]);
                }
                Op::Bce { p, label, weight } => {
                    let pv = self.value(*p).data()[0];
                    let d = gd[0] * crate::training::weighted_bce_derivative(pv, *label, *weight);
                    acc(&mut grads, *p, 1, 1, vec![d]);
                }
            }
        }

        for b in out.blocks.iter().flatten() {
            if !b.is_finite() {
                return Err(Error::NonFinite("backward".into()));
            }
        }
        Ok(out)
    }
}

fn acc<T: Real>(grads: &mut [Option<Tensor<T>>], id: NodeId, r: usize, c: usize, d: Vec<T>) {
    match &mut grads[id.0] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(d) {
                *a = *a + b;
            }
        }
        slot => *slot = Some(Tensor::matrix(r, c, d).expect("gradient shape")),
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Cosine similarity; 0 when either argument has zero norm.
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> T {
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    dot / (na * nb)
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Constant => "constant",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::MatMulTA(..) => "matmul_ta",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::AddCol(..) => "add_col",
        Op::Scale(..) => "scale",
        Op::Sigmoid(_) => "sigmoid",
        Op::Tanh(_) => "tanh",
        Op::Softmax(_) => "softmax",
        Op::ConcatRows(_) => "concat_rows",
        Op::ConcatCols(_) => "concat_cols",
        Op::Column(..) => "column",
        Op::Blend(..) => "blend",
        Op::MeanCols(_) => "mean_cols",
        Op::CosineCols(..) => "cosine_cols",
        Op::GatherCols(..) => "gather_cols",
        Op::Broadcast(..) => "broadcast",
        Op::Bce { .. } => "weighted_bce",
    }
}
