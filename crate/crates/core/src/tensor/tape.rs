use crate::error::{Error, Result};
use crate::scalar::{gemm, MatView, Scalar};

use super::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    MatMul { a: Var, b: Var, trans_b: bool, shared_b: bool, batch: usize, m: usize, k: usize, n: usize },
    Permute { a: Var, axes: Vec<usize> },
    Reshape { a: Var },
    Relu { a: Var },
    Softmax { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gather { a: Var, index: Vec<usize> },
    Narrow { a: Var, axis: usize, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Sum { a: Var },
    Mean { a: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a computation.
///
/// Nodes are stored in creation order, which is a topological order of the
/// graph, so the backward pass is a single reverse sweep that touches every
/// node at most once. A tape is confined to one thread; independent graphs
/// (one per candidate set) may be built in parallel.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Sum whose result does not depend on the order of `values`.
pub(crate) fn order_free_sum<T: Scalar>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.total_order(b));
    values.iter().fold(T::zero(), |acc, &v| acc + v)
}

fn suffix_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if b.len() > a.len() || a[a.len() - b.len()..] != *b {
        return Err(Error::shape(op, a, b));
    }
    Ok(())
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    // stride in the input for each output axis
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return (out, out_shape);
    }
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

fn accumulate<'g, T: Scalar>(grads: &'g mut [Option<Vec<T>>], v: Var, len: usize) -> &'g mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// `a + b`, where `b`'s shape is a suffix of `a`'s (broadcast over leading dims).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        suffix_broadcast("add", av.shape(), bv.shape())?;
        let bl = bv.numel();
        let data = av.data().iter().enumerate().map(|(i, &x)| x + bv.data()[i % bl]).collect();
        let value = Tensor { shape: av.shape().to_vec(), data };
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product with the same broadcast rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        suffix_broadcast("mul", av.shape(), bv.shape())?;
        let bl = bv.numel();
        let data = av.data().iter().enumerate().map(|(i, &x)| x * bv.data()[i % bl]).collect();
        let value = Tensor { shape: av.shape().to_vec(), data };
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let av = self.value(a);
        let value = Tensor { shape: av.shape().to_vec(), data: av.data().iter().map(|&x| x * factor).collect() };
        self.push(value, Op::Scale { a, factor }, &[a])
    }

    /// Matrix product over the last two axes.
    ///
    /// `a: [.., m, k]`; `b` is either a shared `[k, n]` matrix or carries the
    /// same leading batch dims as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` over the last two axes, with `b: [.., n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ash, bsh) = (av.shape(), bv.shape());
        let op = if trans_b { "matmul_nt" } else { "matmul" };
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(Error::shape(op, ash, bsh));
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (bk, n) = if trans_b {
            (bsh[bsh.len() - 1], bsh[bsh.len() - 2])
        } else {
            (bsh[bsh.len() - 2], bsh[bsh.len() - 1])
        };
        let shared_b = bsh.len() == 2;
        if bk != k || (!shared_b && bsh[..bsh.len() - 2] != ash[..ash.len() - 2]) {
            return Err(Error::shape(op, ash, bsh));
        }
        let batch: usize = ash[..ash.len() - 2].iter().product();
        let mut out_shape = ash.to_vec();
        *out_shape.last_mut().unwrap() = n;
        let mut data = vec![T::zero(); batch * m * n];
        let bview = |slice| if trans_b { MatView::t(slice, n, k) } else { MatView::new(slice, k, n) };
        if shared_b {
            gemm(MatView::new(av.data(), batch * m, k), bview(bv.data()), &mut data, false);
        } else {
            for i in 0..batch {
                gemm(
                    MatView::new(&av.data()[i * m * k..(i + 1) * m * k], m, k),
                    bview(&bv.data()[i * k * n..(i + 1) * k * n]),
                    &mut data[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let value = Tensor { shape: out_shape, data };
        Ok(self.push(value, Op::MatMul { a, b, trans_b, shared_b, batch, m, k, n }, &[a, b]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let mut seen = vec![false; av.rank()];
        if axes.len() != av.rank() || axes.iter().any(|&x| x >= seen.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(Error::shape("permute", av.shape(), axes));
        }
        let (data, shape) = permute_data(av.data(), av.shape(), axes);
        Ok(self.push(Tensor { shape, data }, Op::Permute { a, axes: axes.to_vec() }, &[a]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.value(a).rank();
        if r < 2 {
            return Err(Error::shape("transpose", self.shape(a), &[]));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { a }, &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let value = Tensor { shape: av.shape().to_vec(), data };
        self.push(value, Op::Relu { a }, &[a])
    }

    /// Softmax along the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let width = *av.shape().last().ok_or_else(|| Error::shape("softmax", av.shape(), &[]))?;
        let mut data = av.data().to_vec();
        if width > 0 {
            for row in data.chunks_mut(width) {
                let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                let mut total = T::zero();
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    total += *x;
                }
                for x in row.iter_mut() {
                    *x /= total;
                }
            }
        }
        let value = Tensor { shape: av.shape().to_vec(), data };
        Ok(self.push(value, Op::Softmax { a }, &[a]))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias` (both `[d]`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = *xv.shape().last().ok_or_else(|| Error::shape("layer_norm", xv.shape(), &[]))?;
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::shape("layer_norm", xv.shape(), self.shape(p)));
            }
        }
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.numel() / d.max(1);
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.numel());
        let dn = T::of(d as f64);
        let eps = T::of(eps);
        for row in xv.data().chunks(d.max(1)) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let r = (var + eps).sqrt().recip();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * gv[j] + bv[j]);
            }
        }
        let value = Tensor { shape: xv.shape().to_vec(), data: out };
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias]))
    }

    /// Selects rows along axis 0: `out[i] = a[index[i]]`.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if av.rank() == 0 {
            return Err(Error::shape("gather", av.shape(), &[]));
        }
        let rows = av.shape()[0];
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather", av.shape(), &[bad]));
        }
        let width = av.numel() / rows.max(1);
        let mut data = Vec::with_capacity(index.len() * width);
        for &i in index {
            data.extend_from_slice(&av.data()[i * width..(i + 1) * width]);
        }
        let mut shape = av.shape().to_vec();
        shape[0] = index.len();
        Ok(self.push(Tensor { shape, data }, Op::Gather { a, index: index.to_vec() }, &[a]))
    }

    /// Embedding lookup: rows of a `[vocab, dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        if self.value(table).rank() != 2 {
            return Err(Error::shape("embedding", self.shape(table), &[]));
        }
        self.gather(table, ids)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if axis >= av.rank() || start + len > av.shape()[axis] {
            return Err(Error::shape("narrow", av.shape(), &[axis, start, len]));
        }
        let (outer, inner) = outer_inner(av.shape(), axis);
        let full = av.shape()[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            data.extend_from_slice(&av.data()[base..base + len * inner]);
        }
        let mut shape = av.shape().to_vec();
        shape[axis] = len;
        Ok(self.push(Tensor { shape, data }, Op::Narrow { a, axis, start }, &[a]))
    }

    /// Joins tensors along `axis`; all other dims must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?);
        if axis >= first.len() {
            return Err(Error::shape("concat", first, &[axis]));
        }
        let mut shape = first.to_vec();
        shape[axis] = 0;
        for &p in parts {
            let ps = self.shape(p);
            let mut masked = ps.to_vec();
            if ps.len() != shape.len() {
                return Err(Error::shape("concat", &shape, ps));
            }
            masked[axis] = 0;
            let mut expect = shape.clone();
            expect[axis] = 0;
            if masked != expect {
                return Err(Error::shape("concat", first, ps));
            }
            shape[axis] += ps[axis];
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let pv = self.value(p);
                let chunk = pv.shape()[axis] * inner;
                data.extend_from_slice(&pv.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(self.push(Tensor { shape, data }, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(total), Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let total = av.data().iter().copied().sum::<T>() / T::of(av.numel() as f64);
        self.push(Tensor::scalar(total), Op::Mean { a }, &[a])
    }

    /// Mean over rows of `-log softmax(logits)[target]`, `logits: [rows, classes]`.
    ///
    /// The row losses are summed in sorted order, so the value is independent of
    /// row order.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != targets.len() || targets.is_empty() {
            return Err(Error::shape("cross_entropy", lv.shape(), &[targets.len()]));
        }
        let classes = lv.shape()[1];
        if targets.iter().any(|&t| t >= classes) {
            return Err(Error::InvalidArgument(format!("cross_entropy target out of range for {classes} classes")));
        }
        let mut probs = Vec::with_capacity(lv.numel());
        let mut losses = Vec::with_capacity(targets.len());
        for (row, &t) in lv.data().chunks(classes).zip(targets) {
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let total: T = row.iter().map(|&x| (x - max).exp()).sum();
            let lse = max + total.ln();
            losses.push(lse - row[t]);
            probs.extend(row.iter().map(|&x| (x - lse).exp()));
        }
        let mean = order_free_sum(&mut losses) / T::of(targets.len() as f64);
        Ok(self.push(
            Tensor::scalar(mean),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            &[logits],
        ))
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(Error::shape("backward", rv.shape(), &[1]));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|data| Tensor { shape: self.nodes[i].value.shape().to_vec(), data }))
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                if self.wants(*a) {
                    let ga = accumulate(grads, *a, g.len());
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if self.wants(*b) {
                    let bl = self.value(*b).numel();
                    let gb = accumulate(grads, *b, bl);
                    for (i, &y) in g.iter().enumerate() {
                        gb[i % bl] += y;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let bl = bv.len();
                if self.wants(*a) {
                    let ga = accumulate(grads, *a, g.len());
                    for (i, &y) in g.iter().enumerate() {
                        ga[i] += y * bv[i % bl];
                    }
                }
                if self.wants(*b) {
                    let gb = accumulate(grads, *b, bl);
                    for (i, &y) in g.iter().enumerate() {
                        gb[i % bl] += y * av[i];
                    }
                }
            }
            Op::Scale { a, factor } => {
                if self.wants(*a) {
                    let ga = accumulate(grads, *a, g.len());
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *factor);
                }
            }
            &Op::MatMul { a, b, trans_b, shared_b, batch, m, k, n } => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                if self.wants(a) {
                    let ga = accumulate(grads, a, av.len());
                    // dA = dC · Bᵀ   (B logical [k, n])
                    let bt = |s| if trans_b { MatView::new(s, n, k) } else { MatView::t(s, k, n) };
                    if shared_b {
                        gemm(MatView::new(g, batch * m, n), bt(bv), ga, true);
                    } else {
                        for i in 0..batch {
                            gemm(
                                MatView::new(&g[i * m * n..(i + 1) * m * n], m, n),
                                bt(&bv[i * k * n..(i + 1) * k * n]),
                                &mut ga[i * m * k..(i + 1) * m * k],
                                true,
                            );
                        }
                    }
                }
                if self.wants(b) {
                    let gb = accumulate(grads, b, bv.len());
                    // dB = Aᵀ · dC, or dC ᵀ· A when B is stored transposed
                    let rows = if shared_b { batch * m } else { m };
                    let count = if shared_b { 1 } else { batch };
                    for i in 0..count {
                        let ai = &av[i * rows * k..(i + 1) * rows * k];
                        let gi = &g[i * rows * n..(i + 1) * rows * n];
                        let out = &mut gb[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            gemm(MatView::t(gi, rows, n), MatView::new(ai, rows, k), out, true);
                        } else {
                            gemm(MatView::t(ai, rows, k), MatView::new(gi, rows, n), out, true);
                        }
                    }
                }
            }
            Op::Permute { a, axes } => {
                if self.wants(*a) {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &ax) in axes.iter().enumerate() {
                        inverse[ax] = i;
                    }
                    let (back, _) = permute_data(g, node.value.shape(), &inverse);
                    let ga = accumulate(grads, *a, g.len());
                    ga.iter_mut().zip(&back).for_each(|(x, &y)| *x += y);
                }
            }
            Op::Reshape { a } => {
                if self.wants(*a) {
                    let ga = accumulate(grads, *a, g.len());
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
            }
            Op::Relu { a } => {
                if self.wants(*a) {
                    let av = self.value(*a).data();
                    let ga = accumulate(grads, *a, g.len());
                    for i in 0..g.len() {
                        if av[i] > T::zero() {
                            ga[i] += g[i];
                        }
                    }
                }
            }
            Op::Softmax { a } => {
                if self.wants(*a) {
                    let y = node.value.data();
                    let width = *node.value.shape().last().unwrap();
                    let ga = accumulate(grads, *a, g.len());
                    if width > 0 {
                        for ((gr, yr), out) in g.chunks(width).zip(y.chunks(width)).zip(ga.chunks_mut(width)) {
                            let dot: T = gr.iter().zip(yr).map(|(&p, &q)| p * q).sum();
                            for j in 0..width {
                                out[j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                if self.wants(*gain) {
                    let gg = accumulate(grads, *gain, d);
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if self.wants(*bias) {
                    let gb = accumulate(grads, *bias, d);
                    for gr in g.chunks(d) {
                        for j in 0..d {
                            gb[j] += gr[j];
                        }
                    }
                }
                if self.wants(*x) {
                    let dn = T::of(d as f64);
                    let gx = accumulate(grads, *x, g.len());
                    let mut dxhat = vec![T::zero(); d];
                    for (r, ((gr, hr), out)) in g.chunks(d).zip(xhat.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                        for j in 0..d {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let m1 = dxhat.iter().copied().sum::<T>() / dn;
                        let m2 = dxhat.iter().zip(hr).map(|(&p, &q)| p * q).sum::<T>() / dn;
                        for j in 0..d {
                            out[j] += rstd[r] * (dxhat[j] - m1 - hr[j] * m2);
                        }
                    }
                }
            }
            Op::Gather { a, index } => {
                if self.wants(*a) {
                    let len = self.value(*a).numel();
                    let width = if index.is_empty() { 0 } else { g.len() / index.len() };
                    let ga = accumulate(grads, *a, len);
                    for (r, &src) in index.iter().enumerate() {
                        for j in 0..width {
                            ga[src * width + j] += g[r * width + j];
                        }
                    }
                }
            }
            Op::Narrow { a, axis, start } => {
                if self.wants(*a) {
                    let ash = self.value(*a).shape();
                    let (outer, inner) = outer_inner(ash, *axis);
                    let (full, len) = (ash[*axis], node.value.shape()[*axis]);
                    let ga = accumulate(grads, *a, ash.iter().product());
                    for o in 0..outer {
                        let dst = o * full * inner + start * inner;
                        let src = o * len * inner;
                        for j in 0..len * inner {
                            ga[dst + j] += g[src + j];
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, inner) = outer_inner(node.value.shape(), *axis);
                let full = node.value.shape()[*axis];
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    if self.wants(p) {
                        let gp = accumulate(grads, p, outer * len * inner);
                        for o in 0..outer {
                            let src = o * full * inner + offset * inner;
                            for j in 0..len * inner {
                                gp[o * len * inner + j] += g[src + j];
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Sum { a } => {
                if self.wants(*a) {
                    let len = self.value(*a).numel();
                    accumulate(grads, *a, len).iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean { a } => {
                if self.wants(*a) {
                    let len = self.value(*a).numel();
                    let share = g[0] / T::of(len as f64);
                    accumulate(grads, *a, len).iter_mut().for_each(|x| *x += share);
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if self.wants(*logits) {
                    let classes = probs.len() / targets.len();
                    let share = g[0] / T::of(targets.len() as f64);
                    let gl = accumulate(grads, *logits, probs.len());
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == t { T::one() } else { T::zero() };
                            gl[r * classes + c] += (probs[r * classes + c] - onehot) * share;
                        }
                    }
                }
            }
        }
    }
}
