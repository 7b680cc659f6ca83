use super::{Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    AddRowBias(Var, Var),
    Relu(Var),
    Softmax { x: Var, pre: usize, len: usize, post: usize },
    MeanAxis { x: Var, pre: usize, len: usize, post: usize },
    Sum(Var),
    ConcatCols(Vec<Var>),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<S>, rstd: Vec<S> },
    GatherRows(Var, Vec<usize>),
    RowSqDist(Var, Var),
}

#[derive(Debug)]
struct Node<S> {
    tensor: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so every operation's inputs precede
/// it and a reverse sweep is a valid topological traversal.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

type OpResult = Result<Var, TensorError>;

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> Option<(usize, usize, usize)> {
    if axis >= shape.len() {
        return None;
    }
    let pre = shape[..axis].iter().product();
    let post = shape[axis + 1..].iter().product();
    Some((pre, shape[axis], post))
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => tensor.requires_grad(),
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { tensor, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor. Its `requires_grad` flag decides whether it
    /// receives gradients.
    pub fn leaf(&mut self, tensor: Tensor<S>) -> Var {
        self.push(tensor, Op::Leaf, &[])
    }

    pub fn constant(&mut self, tensor: Tensor<S>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].tensor
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].tensor.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.tensor.zero_grad();
        }
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        self.value(v).dims2().ok_or_else(|| TensorError::Rank { op, expected: 2, shape: self.shape(v).to_vec() })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> OpResult {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![S::zero(); m * n];
        S::gemm(
            m,
            k,
            n,
            S::one(),
            self.value(a).values(),
            k as isize,
            1,
            self.value(b).values(),
            n as isize,
            1,
            S::zero(),
            &mut out,
            n as isize,
            1,
        );
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> OpResult {
        let (m, n) = self.dims2("transpose", a)?;
        let src = self.value(a).values();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(a), &[a]))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<Tensor<S>, TensorError> {
        self.same_shape(op, a, b)?;
        let vals = self.value(a).values().iter().zip(self.value(b).values()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(self.shape(a).to_vec(), vals))
    }

    pub fn add(&mut self, a: Var, b: Var) -> OpResult {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> OpResult {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> OpResult {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let src = self.value(a);
        let t = Tensor::from_parts(src.shape().to_vec(), src.values().iter().map(|&x| x * c).collect());
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Var {
        let src = self.value(a);
        let t = Tensor::from_parts(src.shape().to_vec(), src.values().iter().map(|&x| x + c).collect());
        self.push(t, Op::AddScalar(a), &[a])
    }

    /// `x[i, j] + bias[j]` for `x: [m, n]`, `bias: [n]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> OpResult {
        let (m, n) = self.dims2("add_row_bias", x)?;
        if self.shape(bias) != [n] {
            return Err(mismatch("add_row_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).values();
        let mut out = self.value(x).values().to_vec();
        for row in out.chunks_exact_mut(n) {
            row.iter_mut().zip(b).for_each(|(o, &bj)| *o = *o + bj);
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::AddRowBias(x, bias), &[x, bias]))
    }

    /// Kernel-size-1 convolution over time: `x: [T, c_in]`, `weight: [c_in, c_out]`, `bias: [c_out]`.
    pub fn conv1d_k1(&mut self, x: Var, weight: Var, bias: Var) -> OpResult {
        let (_, c_in) = self.dims2("conv1d_k1", x)?;
        let (w_in, c_out) = self.dims2("conv1d_k1", weight)?;
        if c_in != w_in {
            return Err(mismatch("conv1d_k1", self.shape(x), self.shape(weight)));
        }
        if self.shape(bias) != [c_out] {
            return Err(mismatch("conv1d_k1", self.shape(weight), self.shape(bias)));
        }
        let y = self.matmul(x, weight)?;
        self.add_row_bias(y, bias)
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let z = S::zero();
        let t = Tensor::from_parts(src.shape().to_vec(), src.values().iter().map(|&x| if x > z { x } else { z }).collect());
        self.push(t, Op::Relu(a), &[a])
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> OpResult {
        let shape = self.shape(x).to_vec();
        let (pre, len, post) =
            split_axis(&shape, axis).ok_or(TensorError::InvalidAxis { op: "softmax", axis, shape: shape.clone() })?;
        let src = self.value(x).values();
        let mut out = vec![S::zero(); src.len()];
        for p in 0..pre {
            for q in 0..post {
                let at = |a: usize| (p * len + a) * post + q;
                let max = (0..len).map(|a| src[at(a)]).fold(S::neg_infinity(), S::max);
                let mut total = S::zero();
                for a in 0..len {
                    let e = (src[at(a)] - max).exp();
                    out[at(a)] = e;
                    total = total + e;
                }
                for a in 0..len {
                    out[at(a)] = out[at(a)] / total;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { x, pre, len, post }, &[x]))
    }

    /// Mean along `axis`; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> OpResult {
        let shape = self.shape(x).to_vec();
        let (pre, len, post) =
            split_axis(&shape, axis).ok_or(TensorError::InvalidAxis { op: "mean_axis", axis, shape: shape.clone() })?;
        if len == 0 {
            return Err(TensorError::InvalidAxis { op: "mean_axis", axis, shape });
        }
        let src = self.value(x).values();
        let inv = S::one() / S::from_usize_lossy(len);
        let mut out = vec![S::zero(); pre * post];
        for p in 0..pre {
            for a in 0..len {
                for q in 0..post {
                    out[p * post + q] = out[p * post + q] + src[(p * len + a) * post + q];
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::MeanAxis { x, pre, len, post }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Concatenates rank-2 tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> OpResult {
        let first = *parts.first().ok_or(TensorError::Empty { op: "concat_cols" })?;
        let (m, _) = self.dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2("concat_cols", p)?;
            if r != m {
                return Err(mismatch("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).values()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, total], out), Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Per-row normalization `gain * (x - mean) / sqrt(var + eps) + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> OpResult {
        let (m, n) = self.dims2("layer_norm", x)?;
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        let src = self.value(x).values();
        let (g, b) = (self.value(gain).values(), self.value(bias).values());
        let nn = S::from_usize_lossy(n);
        let mut xhat = vec![S::zero(); m * n];
        let mut rstd = vec![S::zero(); m];
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<S>() / nn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / nn;
            let r = S::one() / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::LayerNorm { x, gain, bias, xhat, rstd },
            &[x, gain, bias],
        ))
    }

    /// Row lookup `out[r] = x[idx[r]]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> OpResult {
        let (m, n) = self.dims2("gather_rows", x)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(TensorError::IndexOutOfRange { index: bad, len: m });
        }
        let src = self.value(x).values();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        Ok(self.push(Tensor::from_parts(vec![idx.len(), n], out), Op::GatherRows(x, idx.to_vec()), &[x]))
    }

    /// Row-wise squared Euclidean distance: `[m, n] x [m, n] -> [m]`.
    pub fn row_sq_dist(&mut self, a: Var, b: Var) -> OpResult {
        let (m, n) = self.dims2("row_sq_dist", a)?;
        self.same_shape("row_sq_dist", a, b)?;
        let (av, bv) = (self.value(a).values(), self.value(b).values());
        let out = (0..m)
            .map(|i| crate::matrix::sq_dist(&av[i * n..(i + 1) * n], &bv[i * n..(i + 1) * n]))
            .collect();
        Ok(self.push(Tensor::from_parts(vec![m], out), Op::RowSqDist(a, b), &[a, b]))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into every reachable
    /// leaf created with `requires_grad`.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.shape(loss).to_vec() });
        }
        let mut adj: Vec<Option<Vec<S>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![S::one()]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((i, g));
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        for (i, g) in leaf_grads {
            self.nodes[i].tensor.accumulate_grad(&g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[S], adj: &mut [Option<Vec<S>>]) {
        let nodes = &self.nodes;
        // Adds into the adjoint of `v` when it participates in differentiation.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [S])| {
            let node = &nodes[v.0];
            if !node.needs_grad {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![S::zero(); node.tensor.len()]);
            f(slot);
        };
        let out = &nodes[i].tensor;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = nodes[a.0].tensor.dims2().expect("rank checked");
                let n = nodes[b.0].tensor.dims2().expect("rank checked").1;
                let (av, bv) = (nodes[a.0].tensor.values(), nodes[b.0].tensor.values());
                // dA = G · Bᵀ
                acc(*a, &mut |ga| {
                    S::gemm(m, n, k, S::one(), g, n as isize, 1, bv, 1, n as isize, S::one(), ga, k as isize, 1)
                });
                // dB = Aᵀ · G
                acc(*b, &mut |gb| {
                    S::gemm(k, m, n, S::one(), av, 1, k as isize, g, n as isize, 1, S::one(), gb, n as isize, 1)
                });
            }
            Op::Transpose(a) => {
                let (m, n) = nodes[a.0].tensor.dims2().expect("rank checked");
                acc(*a, &mut |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] = ga[r * n + c] + g[c * m + r];
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
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &x)| *o = *o - x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].tensor.values(), nodes[b.0].tensor.values());
                acc(*a, &mut |ga| {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o = *o + x * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &x), &y) in gb.iter_mut().zip(g).zip(av) {
                        *o = *o + x * y;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o = *o + x * *c)),
            Op::AddScalar(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::AddRowBias(x, bias) => {
                let n = nodes[bias.0].tensor.len();
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*bias, &mut |gb| {
                    for row in g.chunks_exact(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Relu(a) => {
                let xv = nodes[a.0].tensor.values();
                acc(*a, &mut |ga| {
                    for ((o, &gg), &x) in ga.iter_mut().zip(g).zip(xv) {
                        if x > S::zero() {
                            *o = *o + gg;
                        }
                    }
                });
            }
            Op::Softmax { x, pre, len, post } => {
                let y = out.values();
                let (pre, len, post) = (*pre, *len, *post);
                acc(*x, &mut |gx| {
                    for p in 0..pre {
                        for q in 0..post {
                            let at = |a: usize| (p * len + a) * post + q;
                            let dot = (0..len).fold(S::zero(), |s, a| s + g[at(a)] * y[at(a)]);
                            for a in 0..len {
                                gx[at(a)] = gx[at(a)] + y[at(a)] * (g[at(a)] - dot);
                            }
                        }
                    }
                });
            }
            Op::MeanAxis { x, pre, len, post } => {
                let (pre, len, post) = (*pre, *len, *post);
                let inv = S::one() / S::from_usize_lossy(len);
                acc(*x, &mut |gx| {
                    for p in 0..pre {
                        for a in 0..len {
                            for q in 0..post {
                                let at = (p * len + a) * post + q;
                                gx[at] = gx[at] + g[p * post + q] * inv;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o = *o + g[0])),
            Op::ConcatCols(parts) => {
                let (m, total) = out.dims2().expect("rank 2");
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].tensor.dims2().expect("rank 2").1;
                    acc(*p, &mut |gp| {
                        for r in 0..m {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let n = nodes[gain.0].tensor.len();
                let gv = nodes[gain.0].tensor.values();
                acc(*bias, &mut |gb| {
                    for row in g.chunks_exact(n) {
                        add_into(gb, row);
                    }
                });
                acc(*gain, &mut |gg| {
                    for (row, h) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for j in 0..n {
                            gg[j] = gg[j] + row[j] * h[j];
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    let nn = S::from_usize_lossy(n);
                    for (r, (row, h)) in g.chunks_exact(n).zip(xhat.chunks_exact(n)).enumerate() {
                        let mut mean_d = S::zero();
                        let mut mean_dh = S::zero();
                        for j in 0..n {
                            let d = row[j] * gv[j];
                            mean_d = mean_d + d;
                            mean_dh = mean_dh + d * h[j];
                        }
                        mean_d = mean_d / nn;
                        mean_dh = mean_dh / nn;
                        for j in 0..n {
                            let d = row[j] * gv[j];
                            let o = &mut gx[r * n + j];
                            *o = *o + rstd[r] * (d - mean_d - h[j] * mean_dh);
                        }
                    }
                });
            }
            Op::GatherRows(x, idx) => {
                let n = nodes[x.0].tensor.dims2().expect("rank 2").1;
                acc(*x, &mut |gx| {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut gx[src * n..(src + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::RowSqDist(a, b) => {
                let n = nodes[a.0].tensor.dims2().expect("rank 2").1;
                let (av, bv) = (nodes[a.0].tensor.values(), nodes[b.0].tensor.values());
                let two = S::lit(2.0);
                acc(*a, &mut |ga| {
                    for (k, o) in ga.iter_mut().enumerate() {
                        *o = *o + two * g[k / n] * (av[k] - bv[k]);
                    }
                });
                acc(*b, &mut |gb| {
                    for (k, o) in gb.iter_mut().enumerate() {
                        *o = *o - two * g[k / n] * (av[k] - bv[k]);
                    }
                });
            }
        }
    }
}

#[inline]
fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    dst.iter_mut().zip(src).for_each(|(o, &x)| *o = *o + x);
}
