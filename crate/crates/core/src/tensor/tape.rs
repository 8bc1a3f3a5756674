use std::rc::Rc;

use super::kernels::{self, axpy, dot};
use super::{Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Affine(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Sqrt(Var),
    Ln(Var, T),
    Softmax(Var),
    MaskedSoftmax(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    AddN(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Embedding(Var, Vec<usize>),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    Scatter(Var, Vec<usize>),
    Transpose(Var),
    Max(Var, usize),
    Normalize(Var, T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records tensor operations in execution order so gradients can be replayed in reverse.
///
/// Nodes are appended only, so every operation's inputs precede it. A tape is
/// single-threaded; independent tapes may live on different threads.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape { op, detail: detail.into() }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant by `backward`.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    fn requires(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var, TensorError> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = self.requires(inputs);
        self.nodes.push(Node { value: Tensor::from_parts(shape, data), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn unary(&mut self, name: &'static str, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        self.push(name, shape, data, op, &[x])
    }

    /// Matrix product for ranks (2,2), (2,1), (1,2) and (1,1); the last is a dot product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (shape, data) = match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => (vec![m, n], kernels::matmul(self.data(a), self.data(b), m, k, n)),
            (&[m, k], &[k2]) if k == k2 => {
                let mut out = vec![T::zero(); m];
                kernels::matvec(self.data(a), m, k, self.data(b), &mut out);
                (vec![m], out)
            }
            (&[k], &[k2, n]) if k == k2 => (vec![n], kernels::matmul(self.data(a), self.data(b), 1, k, n)),
            (&[k], &[k2]) if k == k2 => (vec![], vec![dot(self.data(a), self.data(b))]),
            _ => return Err(shape_err("matmul", format!("{:?} x {:?}", sa, sb))),
        };
        self.push("matmul", shape, data, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        self.push("add", self.shape(a).to_vec(), data, Op::Add(a, b), &[a, b])
    }

    /// Adds vector `b` to every row of `a` (the only broadcasting the tape supports).
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b);
        if sb.len() != 1 || sa.last() != sb.first() {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", sa, sb)));
        }
        let d = sb[0];
        let bias = self.data(b);
        let data = self.data(a).iter().enumerate().map(|(i, &x)| x + bias[i % d]).collect();
        self.push("add_bias", sa, data, Op::AddBias(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x - y).collect();
        self.push("sub", self.shape(a).to_vec(), data, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        self.push("mul", self.shape(a).to_vec(), data, Op::Mul(a, b), &[a, b])
    }

    /// Multiplies every entry of `x` by the one-element tensor `s`.
    pub fn mul_scalar(&mut self, s: Var, x: Var) -> Result<Var, TensorError> {
        if self.value(s).len() != 1 {
            return Err(shape_err("mul_scalar", format!("scale has shape {:?}", self.shape(s))));
        }
        let k = self.item(s);
        let data = self.data(x).iter().map(|&v| k * v).collect();
        self.push("mul_scalar", self.shape(x).to_vec(), data, Op::MulScalar(s, x), &[s, x])
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var, TensorError> {
        self.unary("affine", x, Op::Affine(x, scale), |v| scale * v + shift)
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Result<Var, TensorError> {
        self.affine(x, scale, T::zero())
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, TensorError> {
        self.affine(x, -T::one(), T::zero())
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Result<Var, TensorError> {
        self.affine(x, -T::one(), T::one())
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("tanh", x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("relu", x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("exp", x, Op::Exp(x), |v| v.exp())
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, TensorError> {
        if self.data(x).iter().any(|&v| v < T::zero()) {
            return Err(TensorError::NonFinite { op: "sqrt" });
        }
        self.unary("sqrt", x, Op::Sqrt(x), |v| v.sqrt())
    }

    /// `ln(max(x, floor))`; entries at or below the floor get zero gradient.
    pub fn ln(&mut self, x: Var, floor: T) -> Result<Var, TensorError> {
        self.unary("ln", x, Op::Ln(x, floor), |v| v.max(floor).ln())
    }

    /// Softmax over the last axis (rank 1 or 2), computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let width = match shape.as_slice() {
            [n] | [_, n] if *n > 0 => *n,
            _ => return Err(shape_err("softmax", format!("{:?}", shape))),
        };
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        for (o, row) in out.chunks_mut(width).zip(src.chunks(width)) {
            kernels::softmax_into(row, None, o);
        }
        self.push("softmax", shape, out, Op::Softmax(x), &[x])
    }

    /// Softmax of a vector with `mask[i] == true` entries forced to probability zero.
    pub fn masked_softmax(&mut self, x: Var, mask: Rc<[bool]>) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 1 || shape[0] != mask.len() || mask.iter().all(|&m| m) {
            return Err(shape_err("masked_softmax", format!("{:?} with mask of {}", shape, mask.len())));
        }
        let mut out = vec![T::zero(); shape[0]];
        kernels::softmax_into(self.data(x), Some(&mask), &mut out);
        self.push("masked_softmax", shape, out, Op::MaskedSoftmax(x), &[x])
    }

    /// Concatenates vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(shape_err("concat", format!("part of shape {:?}", self.shape(p))));
            }
            data.extend_from_slice(self.data(p));
        }
        self.push("concat", vec![data.len()], data, Op::Concat(parts.to_vec()), parts)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var, TensorError> {
        let first = rows.first().ok_or_else(|| shape_err("stack", "no rows"))?;
        let width = self.shape(*first).to_vec();
        if width.len() != 1 {
            return Err(shape_err("stack", format!("row of shape {:?}", width)));
        }
        let mut data = Vec::with_capacity(rows.len() * width[0]);
        for &r in rows {
            if self.shape(r) != width.as_slice() {
                return Err(shape_err("stack", format!("{:?} vs {:?}", self.shape(r), width)));
            }
            data.extend_from_slice(self.data(r));
        }
        self.push("stack", vec![rows.len(), width[0]], data, Op::Stack(rows.to_vec()), rows)
    }

    /// Sum of equally shaped tensors.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or_else(|| shape_err("add_n", "no inputs"))?;
        let shape = self.shape(*first).to_vec();
        let mut data = vec![T::zero(); self.value(*first).len()];
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(shape_err("add_n", format!("{:?} vs {:?}", self.shape(p), shape)));
            }
            for (d, &v) in data.iter_mut().zip(self.data(p)) {
                *d += v;
            }
        }
        self.push("add_n", shape, data, Op::AddN(parts.to_vec()), parts)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let total = self.data(x).iter().copied().sum();
        self.push("sum", vec![], vec![total], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(shape_err("mean", "empty tensor"));
        }
        let total: T = self.data(x).iter().copied().sum();
        self.push("mean", vec![], vec![total / T::lit(n as f64)], Op::Mean(x), &[x])
    }

    /// Rows `ids` of a `[vocab, dim]` table, as a `[ids.len(), dim]` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(table).to_vec();
        let (rows, dim) = match shape.as_slice() {
            [r, d] => (*r, *d),
            _ => return Err(shape_err("embedding", format!("table shape {:?}", shape))),
        };
        if ids.is_empty() {
            return Err(shape_err("embedding", "no ids"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(shape_err("embedding", format!("id {} outside table of {} rows", bad, rows)));
        }
        let src = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            data.extend_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        self.push("embedding", vec![ids.len(), dim], data, Op::Embedding(table, ids.to_vec()), &[table])
    }

    /// Single row `id` of a `[vocab, dim]` table, as a vector.
    pub fn embedding_row(&mut self, table: Var, id: usize) -> Result<Var, TensorError> {
        let shape = self.shape(table).to_vec();
        match shape.as_slice() {
            [r, d] if id < *r => self.slice(table, id * d, *d),
            _ => Err(shape_err("embedding", format!("id {} with table {:?}", id, shape))),
        }
    }

    /// Contiguous run of `len` entries starting at flat offset `start`, as a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        if start + len > n || len == 0 {
            return Err(shape_err("slice", format!("[{}, {}) of {} entries", start, start + len, n)));
        }
        let data = self.data(x)[start..start + len].to_vec();
        self.push("slice", vec![len], data, Op::Slice(x, start), &[x])
    }

    /// Row `i` of a matrix.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        match shape.as_slice() {
            [r, c] if i < *r => self.slice(x, i * c, *c),
            _ => Err(shape_err("row", format!("row {} of {:?}", i, shape))),
        }
    }

    /// Entries at the given flat indices, as a vector.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let src = self.data(x);
        if idx.is_empty() || idx.iter().any(|&i| i >= src.len()) {
            return Err(shape_err("gather", format!("indices {:?} into {} entries", idx, src.len())));
        }
        let data = idx.iter().map(|&i| src[i]).collect();
        self.push("gather", vec![idx.len()], data, Op::Gather(x, idx.to_vec()), &[x])
    }

    /// One entry at a flat index, as a scalar.
    pub fn pick(&mut self, x: Var, i: usize) -> Result<Var, TensorError> {
        let src = self.data(x);
        if i >= src.len() {
            return Err(shape_err("pick", format!("index {} into {} entries", i, src.len())));
        }
        let v = src[i];
        self.push("pick", vec![], vec![v], Op::Gather(x, vec![i]), &[x])
    }

    /// Vector of length `size` holding `x[j]` at position `idx[j]` and zero elsewhere.
    /// Repeated indices accumulate.
    pub fn scatter(&mut self, x: Var, idx: &[usize], size: usize) -> Result<Var, TensorError> {
        let src = self.data(x);
        if self.shape(x) != [idx.len()] || idx.iter().any(|&i| i >= size) {
            return Err(shape_err("scatter", format!("{:?} into {} slots", self.shape(x), size)));
        }
        let mut data = vec![T::zero(); size];
        for (&i, &v) in idx.iter().zip(src) {
            data[i] += v;
        }
        self.push("scatter", vec![size], data, Op::Scatter(x, idx.to_vec()), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let (r, c) = match shape.as_slice() {
            [r, c] => (*r, *c),
            _ => return Err(shape_err("transpose", format!("{:?}", shape))),
        };
        let src = self.data(x);
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        self.push("transpose", vec![c, r], data, Op::Transpose(x), &[x])
    }

    /// Largest entry as a scalar; gradient flows to the first maximal index.
    pub fn max(&mut self, x: Var) -> Result<Var, TensorError> {
        let src = self.data(x);
        if src.is_empty() {
            return Err(shape_err("max", "empty tensor"));
        }
        let mut best = 0;
        for (i, &v) in src.iter().enumerate() {
            if v > src[best] {
                best = i;
            }
        }
        let v = src[best];
        self.push("max", vec![], vec![v], Op::Max(x, best), &[x])
    }

    /// `x / ||x||` for a vector; a zero vector is a numeric error.
    pub fn normalize(&mut self, x: Var) -> Result<Var, TensorError> {
        if self.shape(x).len() != 1 {
            return Err(shape_err("normalize", format!("{:?}", self.shape(x))));
        }
        let src = self.data(x);
        let norm = dot(src, src).sqrt();
        if !(norm > T::zero()) {
            return Err(TensorError::NonFinite { op: "normalize" });
        }
        let data = src.iter().map(|&v| v / norm).collect();
        self.push("normalize", self.shape(x).to_vec(), data, Op::Normalize(x, norm), &[x])
    }

    /// Reverse pass from a scalar loss with seed gradient 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).len() != 1 || !self.value(loss).shape().is_empty() {
            return Err(TensorError::Usage(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_deref() else { continue };
            self.backprop_node(node, g, lower);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (da, db) = (self.data(*a), self.data(*b));
                match (sa, sb) {
                    (&[m, k], &[_, n]) => {
                        if let Some(ga) = self.slot(grads, *a) {
                            for i in 0..m {
                                let gi = &g[i * n..(i + 1) * n];
                                for p in 0..k {
                                    ga[i * k + p] += dot(gi, &db[p * n..(p + 1) * n]);
                                }
                            }
                        }
                        if let Some(gb) = self.slot(grads, *b) {
                            for i in 0..m {
                                let gi = &g[i * n..(i + 1) * n];
                                for p in 0..k {
                                    let aip = da[i * k + p];
                                    if aip != T::zero() {
                                        axpy(aip, gi, &mut gb[p * n..(p + 1) * n]);
                                    }
                                }
                            }
                        }
                    }
                    (&[m, k], &[_]) => {
                        if let Some(ga) = self.slot(grads, *a) {
                            kernels::outer_acc(g, db, ga);
                        }
                        if let Some(gb) = self.slot(grads, *b) {
                            kernels::matvec_t_acc(da, m, k, g, gb);
                        }
                    }
                    (&[k], &[_, n]) => {
                        if let Some(ga) = self.slot(grads, *a) {
                            for p in 0..k {
                                ga[p] += dot(g, &db[p * n..(p + 1) * n]);
                            }
                        }
                        if let Some(gb) = self.slot(grads, *b) {
                            kernels::outer_acc(da, g, gb);
                        }
                    }
                    _ => {
                        if let Some(ga) = self.slot(grads, *a) {
                            axpy(g[0], db, ga);
                        }
                        if let Some(gb) = self.slot(grads, *b) {
                            axpy(g[0], da, gb);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.slot(grads, *v) {
                        axpy(T::one(), g, gv);
                    }
                }
            }
            Op::AddBias(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(T::one(), g, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let d = gb.len();
                    for row in g.chunks(d) {
                        axpy(T::one(), row, gb);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(T::one(), g, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    axpy(-T::one(), g, gb);
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &gi), &bi) in ga.iter_mut().zip(g).zip(db) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((x, &gi), &ai) in gb.iter_mut().zip(g).zip(da) {
                        *x += gi * ai;
                    }
                }
            }
            Op::MulScalar(s, x) => {
                let k = self.item(*s);
                let dx = self.data(*x);
                if let Some(gs) = self.slot(grads, *s) {
                    gs[0] += dot(g, dx);
                }
                if let Some(gx) = self.slot(grads, *x) {
                    axpy(k, g, gx);
                }
            }
            Op::Affine(x, scale) => {
                if let Some(gx) = self.slot(grads, *x) {
                    axpy(*scale, g, gx);
                }
            }
            Op::Tanh(x) => self.pointwise(grads, *x, g, |i, _| T::one() - out[i] * out[i]),
            Op::Sigmoid(x) => self.pointwise(grads, *x, g, |i, _| out[i] * (T::one() - out[i])),
            Op::Relu(x) => self.pointwise(grads, *x, g, |_, v| if v > T::zero() { T::one() } else { T::zero() }),
            Op::Exp(x) => self.pointwise(grads, *x, g, |i, _| out[i]),
            Op::Sqrt(x) => self.pointwise(grads, *x, g, |i, _| {
                if out[i] > T::zero() {
                    T::one() / (T::lit(2.0) * out[i])
                } else {
                    T::zero()
                }
            }),
            Op::Ln(x, floor) => {
                let floor = *floor;
                self.pointwise(grads, *x, g, |_, v| if v > floor { T::one() / v } else { T::zero() })
            }
            Op::Softmax(x) | Op::MaskedSoftmax(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let width = *node.value.shape().last().unwrap();
                    for ((y, dy), dx) in out.chunks(width).zip(g.chunks(width)).zip(gx.chunks_mut(width)) {
                        kernels::softmax_backward_acc(y, dy, dx);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if let Some(gp) = self.slot(grads, *p) {
                        axpy(T::one(), &g[offset..offset + n], gp);
                    }
                    offset += n;
                }
            }
            Op::Stack(parts) => {
                let width = node.value.shape()[1];
                for (r, p) in parts.iter().enumerate() {
                    if let Some(gp) = self.slot(grads, *p) {
                        axpy(T::one(), &g[r * width..(r + 1) * width], gp);
                    }
                }
            }
            Op::AddN(parts) => {
                for p in parts {
                    if let Some(gp) = self.slot(grads, *p) {
                        axpy(T::one(), g, gp);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let share = g[0] / T::lit(gx.len() as f64);
                    gx.iter_mut().for_each(|v| *v += share);
                }
            }
            Op::Embedding(table, ids) => {
                if let Some(gt) = self.slot(grads, *table) {
                    let dim = node.value.shape()[1];
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(T::one(), &g[r * dim..(r + 1) * dim], &mut gt[id * dim..(id + 1) * dim]);
                    }
                }
            }
            Op::Slice(x, start) => {
                if let Some(gx) = self.slot(grads, *x) {
                    axpy(T::one(), g, &mut gx[*start..*start + g.len()]);
                }
            }
            Op::Gather(x, idx) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (&i, &gi) in idx.iter().zip(g) {
                        gx[i] += gi;
                    }
                }
            }
            Op::Scatter(x, idx) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (d, &i) in gx.iter_mut().zip(idx) {
                        *d += g[i];
                    }
                }
            }
            Op::Transpose(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let (c, r) = (node.value.shape()[0], node.value.shape()[1]);
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Max(x, best) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx[*best] += g[0];
                }
            }
            Op::Normalize(x, norm) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let inner = dot(out, g);
                    for ((d, &gi), &yi) in gx.iter_mut().zip(g).zip(out) {
                        *d += (gi - yi * inner) / *norm;
                    }
                }
            }
        }
    }

    /// Gradient buffer for `v`, allocated on first use; `None` for constants.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]).as_mut_slice())
    }

    fn pointwise(&self, grads: &mut [Option<Vec<T>>], x: Var, g: &[T], deriv: impl Fn(usize, T) -> T) {
        let src = self.data(x);
        if let Some(gx) = self.slot(grads, x) {
            for (i, (d, &gi)) in gx.iter_mut().zip(g).enumerate() {
                *d += gi * deriv(i, src[i]);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient buffer for `v`, or `None` if no path from the loss reached it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v` shaped like its value; zeros when unreached.
    pub fn wrt(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        let shape = tape.shape(v).to_vec();
        match self.get(v) {
            Some(g) => Tensor::from_parts(shape, g.to_vec()),
            None => Tensor::zeros(&shape),
        }
    }
}
