//! Reverse-mode automatic differentiation over a define-by-run tape.
//!
//! Every forward operation appends a node holding its value and the ids of its
//! inputs. [`Tape::backward`] walks the nodes in reverse, accumulating adjoints
//! only along paths that lead to a leaf created with `requires_grad`.

use crate::distributions;
use crate::tensor::{self, ConvGeom, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Softplus,
    Exp,
    Log,
    Square,
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Offset(Var),
    Unary(Var, Unary),
    Linear { x: Var, w: Var, b: Var },
    MatMul(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    RepeatRows(Var),
    MeanRows(Var),
    Sum(Var),
    Reshape(Var),
    Softmax(Var),
    Blend { weights: Var, items: Vec<Var> },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    KlDiag { q_loc: Var, q_scale: Var, p_loc: Var, p_scale: Var },
    BernoulliLogLik { target: Var, probs: Var },
}

#[derive(Clone, Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Records a computation for later differentiation.
#[derive(Clone, Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.any_grad(&[a, b]);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.any_grad(&[a, b]);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.any_grad(&[a, b]);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).map(|x| x * c);
        let ng = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn offset(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).map(|x| x + c);
        let ng = self.any_grad(&[a]);
        self.push(value, Op::Offset(a), ng)
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let value = self.value(a).map(|x| apply_unary(kind, x));
        let ng = self.any_grad(&[a]);
        self.push(value, Op::Unary(a, kind), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Unary::LeakyRelu(slope))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    /// `x · w + b` with `x: [n, i]`, `w: [i, o]`, `b: [o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, i) = (xv.rows(), xv.cols());
        assert_eq!(wv.shape(), &[i, bv.len()], "linear: weight shape {:?} vs input width {i}", wv.shape());
        let o = bv.len();
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(bv.data());
        }
        tensor::gemm(n, i, o, xv.data(), false, wv.data(), false, &mut out, true);
        let ng = self.any_grad(&[x, w, b]);
        self.push(Tensor::new(vec![n, o], out), Op::Linear { x, w, b }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k) = (av.rows(), av.cols());
        assert_eq!(bv.rows(), k, "matmul inner dimension");
        let m = bv.cols();
        let mut out = vec![F::zero(); n * m];
        tensor::gemm(n, k, m, av.data(), false, bv.data(), false, &mut out, false);
        let ng = self.any_grad(&[a, b]);
        self.push(Tensor::new(vec![n, m], out), Op::MatMul(a, b), ng)
    }

    /// Concatenates 2-d tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                let v = self.value(p);
                assert_eq!(v.rows(), rows, "concat_cols: row mismatch");
                out.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let ng = self.any_grad(parts);
        self.push(Tensor::new(vec![rows, total], out), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        assert!(start + len <= cols, "slice_cols out of range");
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v.data()[r * cols + start..r * cols + start + len]);
        }
        let ng = self.any_grad(&[x]);
        self.push(Tensor::new(vec![rows, len], out), Op::SliceCols { x, start }, ng)
    }

    /// Stacks tensors along the first axis; trailing shapes must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let tail = self.value(parts[0]).shape()[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            assert_eq!(&v.shape()[1..], &tail[..], "concat_rows: trailing shape mismatch");
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let ng = self.any_grad(parts);
        self.push(Tensor::new(shape, out), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x);
        let c = v.cols();
        assert!(start + len <= v.rows(), "slice_rows out of range");
        let mut shape = v.shape().to_vec();
        shape[0] = len;
        let data = v.data()[start * c..(start + len) * c].to_vec();
        let ng = self.any_grad(&[x]);
        self.push(Tensor::new(shape, data), Op::SliceRows { x, start }, ng)
    }

    /// Tiles a single-row tensor `n` times along the first axis.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Var {
        let v = self.value(x);
        assert_eq!(v.rows(), 1, "repeat_rows expects one row");
        let mut data = Vec::with_capacity(n * v.len());
        for _ in 0..n {
            data.extend_from_slice(v.data());
        }
        let mut shape = v.shape().to_vec();
        shape[0] = n;
        let ng = self.any_grad(&[x]);
        self.push(Tensor::new(shape, data), Op::RepeatRows(x), ng)
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (n, c) = (v.rows(), v.cols());
        let inv = F::one() / F::lit(n as f64);
        let mut out = vec![F::zero(); c];
        for r in 0..n {
            for (o, &x) in out.iter_mut().zip(&v.data()[r * c..(r + 1) * c]) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
        let ng = self.any_grad(&[x]);
        self.push(Tensor::new(vec![1, c], out), Op::MeanRows(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshape(shape);
        let ng = self.any_grad(&[x]);
        self.push(v, Op::Reshape(x), ng)
    }

    /// Row-wise softmax over the trailing axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let c = v.cols();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(c) {
            distributions::softmax_in_place(row);
        }
        let shape = v.shape().to_vec();
        let ng = self.any_grad(&[x]);
        self.push(Tensor::new(shape, out), Op::Softmax(x), ng)
    }

    /// `Σ_k weights[k] · items[k]`; the weights form a vector with one entry per item.
    pub fn blend(&mut self, weights: Var, items: &[Var]) -> Var {
        let w = self.value(weights).data().to_vec();
        assert_eq!(w.len(), items.len(), "blend: {} weights for {} items", w.len(), items.len());
        let mut acc: Option<Tensor<F>> = None;
        for (&wk, &item) in w.iter().zip(items) {
            if wk == F::zero() {
                continue;
            }
            let v = self.value(item);
            match acc.as_mut() {
                None => acc = Some(v.map(|x| wk * x)),
                Some(a) => {
                    assert_eq!(a.shape(), v.shape(), "blend: item shape mismatch");
                    a.axpy(wk, v);
                }
            }
        }
        let value = acc.unwrap_or_else(|| Tensor::zeros(self.value(items[0]).shape()));
        let mut deps = items.to_vec();
        deps.push(weights);
        let ng = self.any_grad(&deps);
        self.push(value, Op::Blend { weights, items: items.to_vec() }, ng)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Var {
        let value = tensor::conv2d(self.value(x), self.value(w), self.value(b), geom);
        let ng = self.any_grad(&[x, w, b]);
        self.push(value, Op::Conv2d { x, w, b, geom }, ng)
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Var {
        let value = tensor::conv_transpose2d(self.value(x), self.value(w), self.value(b), geom);
        let ng = self.any_grad(&[x, w, b]);
        self.push(value, Op::ConvTranspose2d { x, w, b, geom }, ng)
    }

    /// Analytic `KL(q ‖ p)` between diagonal Gaussians, summed over all elements.
    pub fn kl_diag(&mut self, q_loc: Var, q_scale: Var, p_loc: Var, p_scale: Var) -> Var {
        let (ql, qs, pl, ps) = (self.value(q_loc), self.value(q_scale), self.value(p_loc), self.value(p_scale));
        assert!(
            ql.len() == qs.len() && ql.len() == pl.len() && ql.len() == ps.len(),
            "kl_diag: dimension mismatch"
        );
        let mut total = F::zero();
        for i in 0..ql.len() {
            total += distributions::kl_term(ql.data()[i], qs.data()[i], pl.data()[i], ps.data()[i]);
        }
        let ng = self.any_grad(&[q_loc, q_scale, p_loc, p_scale]);
        self.push(Tensor::scalar(total), Op::KlDiag { q_loc, q_scale, p_loc, p_scale }, ng)
    }

    /// Bernoulli log-likelihood of `target` under pixel probabilities `probs`, summed.
    pub fn bernoulli_log_lik(&mut self, target: Var, probs: Var) -> Var {
        let (x, p) = (self.value(target), self.value(probs));
        assert_eq!(x.shape(), p.shape(), "bernoulli_log_lik: shape mismatch");
        let total = x.data().iter().zip(p.data()).map(|(&x, &p)| distributions::bernoulli_term(x, p)).sum();
        let ng = self.any_grad(&[target, probs]);
        self.push(Tensor::scalar(total), Op::BernoulliLogLik { target, probs }, ng)
    }

    /// Back-propagates from `root`, seeding its adjoint with ones.
    pub fn backward(&self, root: Var) -> Grads<F> {
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        if !self.nodes[root.0].needs_grad {
            return Grads { grads };
        }
        grads[root.0] = Some(Tensor::full(self.nodes[root.0].value.shape(), F::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Grads { grads }
    }

    fn backprop_node(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.zip_map(val(*b), |g, y| g * y));
                }
                if needs(*b) {
                    accumulate(grads, *b, g.zip_map(val(*a), |g, x| g * x));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::Offset(a) => accumulate(grads, *a, g.clone()),
            Op::Unary(a, kind) => {
                let x = val(*a);
                let y = &node.value;
                let mut out = g.clone();
                for ((o, &xv), &yv) in out.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *o *= unary_derivative(*kind, xv, yv);
                }
                accumulate(grads, *a, out);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (n, i, o) = (xv.rows(), xv.cols(), wv.shape()[1]);
                if needs(*x) {
                    let mut dx = vec![F::zero(); n * i];
                    tensor::gemm(n, o, i, g.data(), false, wv.data(), true, &mut dx, false);
                    accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx));
                }
                if needs(*w) {
                    let mut dw = vec![F::zero(); i * o];
                    tensor::gemm(i, n, o, xv.data(), true, g.data(), false, &mut dw, false);
                    accumulate(grads, *w, Tensor::new(vec![i, o], dw));
                }
                if needs(*b) {
                    let mut db = vec![F::zero(); o];
                    for row in g.data().chunks(o) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, Tensor::new(val(*b).shape().to_vec(), db));
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if needs(*a) {
                    let mut da = vec![F::zero(); n * k];
                    tensor::gemm(n, m, k, g.data(), false, bv.data(), true, &mut da, false);
                    accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da));
                }
                if needs(*b) {
                    let mut db = vec![F::zero(); k * m];
                    tensor::gemm(k, n, m, av.data(), true, g.data(), false, &mut db, false);
                    accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db));
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if needs(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(grads, p, Tensor::new(val(p).shape().to_vec(), d));
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let (rows, cols) = (xv.rows(), xv.cols());
                let len = g.cols();
                let mut d = vec![F::zero(); rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + len].copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    if needs(p) {
                        let d = g.data()[offset..offset + n].to_vec();
                        accumulate(grads, p, Tensor::new(val(p).shape().to_vec(), d));
                    }
                    offset += n;
                }
            }
            Op::SliceRows { x, start } => {
                let xv = val(*x);
                let c = xv.cols();
                let mut d = vec![F::zero(); xv.len()];
                d[start * c..start * c + g.len()].copy_from_slice(g.data());
                accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d));
            }
            Op::RepeatRows(x) => {
                let xv = val(*x);
                let c = xv.len();
                let mut d = vec![F::zero(); c];
                for row in g.data().chunks(c) {
                    for (o, &v) in d.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d));
            }
            Op::MeanRows(x) => {
                let xv = val(*x);
                let n = xv.rows();
                let inv = F::one() / F::lit(n as f64);
                let mut d = Vec::with_capacity(xv.len());
                for _ in 0..n {
                    d.extend(g.data().iter().map(|&v| v * inv));
                }
                accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d));
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                accumulate(grads, *x, Tensor::full(val(*x).shape(), s));
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, g.clone().reshape(val(*x).shape()));
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let c = y.cols();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let dot: F = drow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for (dv, &yv) in drow.iter_mut().zip(yrow) {
                        *dv = yv * (*dv - dot);
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::Blend { weights, items } => {
                let w = val(*weights);
                for (k, &item) in items.iter().enumerate() {
                    if needs(item) {
                        let wk = w.data()[k];
                        accumulate(grads, item, g.map(|v| v * wk));
                    }
                }
                if needs(*weights) {
                    let dw: Vec<F> = items.iter().map(|&item| g.dot(val(item))).collect();
                    accumulate(grads, *weights, Tensor::new(w.shape().to_vec(), dw));
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = tensor::conv2d_backward(val(*x), val(*w), g, *geom, needs(*x));
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                if needs(*w) {
                    accumulate(grads, *w, dw);
                }
                if needs(*b) {
                    accumulate(grads, *b, db);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (dx, dw, db) = tensor::conv_transpose2d_backward(val(*x), val(*w), g, *geom, needs(*x));
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                if needs(*w) {
                    accumulate(grads, *w, dw);
                }
                if needs(*b) {
                    accumulate(grads, *b, db);
                }
            }
            Op::KlDiag { q_loc, q_scale, p_loc, p_scale } => {
                let s = g.data()[0];
                let (ql, qs, pl, ps) = (val(*q_loc), val(*q_scale), val(*p_loc), val(*p_scale));
                let n = ql.len();
                let mut d = [vec![F::zero(); n], vec![F::zero(); n], vec![F::zero(); n], vec![F::zero(); n]];
                for i in 0..n {
                    let gi = distributions::kl_term_grad(ql.data()[i], qs.data()[i], pl.data()[i], ps.data()[i]);
                    for (slot, gv) in d.iter_mut().zip(gi) {
                        slot[i] = s * gv;
                    }
                }
                let [dql, dqs, dpl, dps] = d;
                for (v, dv) in [(*q_loc, dql), (*q_scale, dqs), (*p_loc, dpl), (*p_scale, dps)] {
                    if needs(v) {
                        accumulate(grads, v, Tensor::new(val(v).shape().to_vec(), dv));
                    }
                }
            }
            Op::BernoulliLogLik { target, probs } => {
                let s = g.data()[0];
                let (x, p) = (val(*target), val(*probs));
                if needs(*probs) {
                    let d = x.zip_map(p, |x, p| s * distributions::bernoulli_term_dp(x, p));
                    accumulate(grads, *probs, d);
                }
                if needs(*target) {
                    let d = x.zip_map(p, |_, p| s * distributions::bernoulli_term_dx(p));
                    accumulate(grads, *target, d);
                }
            }
        }
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn apply_unary<F: Scalar>(kind: Unary, x: F) -> F {
    match kind {
        Unary::Sigmoid => distributions::sigmoid(x),
        Unary::Tanh => x.tanh(),
        Unary::Relu => x.max(F::zero()),
        Unary::LeakyRelu(slope) => {
            if x > F::zero() {
                x
            } else {
                x * F::lit(slope)
            }
        }
        Unary::Softplus => distributions::softplus(x),
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Square => x * x,
    }
}

fn unary_derivative<F: Scalar>(kind: Unary, x: F, y: F) -> F {
    match kind {
        Unary::Sigmoid => y * (F::one() - y),
        Unary::Tanh => F::one() - y * y,
        Unary::Relu => {
            if x > F::zero() {
                F::one()
            } else {
                F::zero()
            }
        }
        Unary::LeakyRelu(slope) => {
            if x > F::zero() {
                F::one()
            } else {
                F::lit(slope)
            }
        }
        Unary::Softplus => distributions::sigmoid(x),
        Unary::Exp => y,
        Unary::Log => F::one() / x,
        Unary::Square => x + x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference gradient of `f` at `x`.
    fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let eps = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += eps;
                xm[i] -= eps;
                (f(&xp) - f(&xm)) / (2.0 * eps)
            })
            .collect()
    }

    fn check(shape: &[usize], x0: &[f64], build: impl Fn(&mut Tape<f64>, Var) -> Var) {
        let eval = |x: &[f64]| {
            let mut t = Tape::new();
            let v = t.leaf(Tensor::from_f64(shape, x), true);
            let out = build(&mut t, v);
            t.value(out).data()[0]
        };
        let mut t = Tape::new();
        let v = t.leaf(Tensor::from_f64(shape, x0), true);
        let out = build(&mut t, v);
        let grads = t.backward(out);
        let analytic = grads.get(v).expect("gradient reaches leaf");
        let numeric = numeric_grad(x0, eval);
        for (a, n) in analytic.data().iter().zip(&numeric) {
            let denom = a.abs().max(n.abs()).max(1e-2);
            assert!((a - n).abs() / denom < 1e-6, "analytic {a} vs numeric {n}");
        }
    }

    const X6: [f64; 6] = [0.3, -0.7, 1.2, 0.05, -1.5, 0.8];

    #[test]
    fn unary_ops_gradients() {
        for kind in [Unary::Sigmoid, Unary::Tanh, Unary::Relu, Unary::LeakyRelu(0.2), Unary::Softplus, Unary::Exp, Unary::Square] {
            check(&[2, 3], &X6, |t, v| {
                let y = t.unary(v, kind);
                t.sum(y)
            });
        }
        let pos: Vec<f64> = X6.iter().map(|x| x.abs() + 0.2).collect();
        check(&[6], &pos, |t, v| {
            let y = t.unary(v, Unary::Log);
            t.sum(y)
        });
    }

    #[test]
    fn structural_ops_gradients() {
        let weights = Tensor::from_f64(&[2, 3], &[0.5, -1.0, 2.0, 0.1, 0.3, -0.2]);
        check(&[2, 3], &X6, |t, v| {
            let w = t.constant(weights.clone());
            let m = t.mul(v, w);
            let a = t.slice_cols(m, 1, 2);
            let b = t.slice_rows(v, 1, 1);
            let b = t.repeat_rows(b, 2);
            let c = t.concat_cols(&[a, b]);
            let mean = t.mean_rows(c);
            let sq = t.unary(mean, Unary::Square);
            let r = t.concat_rows(&[sq, mean]);
            let s = t.softmax(r);
            let s = t.mul(s, s);
            t.sum(s)
        });
    }

    #[test]
    fn linear_and_matmul_gradients() {
        let w = Tensor::from_f64(&[3, 2], &[0.2, -0.4, 0.7, 0.1, -0.3, 0.5]);
        check(&[2, 3], &X6, |t, x| {
            let wv = t.constant(w.clone());
            let b = t.constant(Tensor::from_f64(&[2], &[0.1, -0.2]));
            let y = t.linear(x, wv, b);
            let y = t.tanh(y);
            t.sum(y)
        });
        check(&[3, 2], &X6, |t, wv| {
            let x = t.constant(Tensor::from_f64(&[2, 3], &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]));
            let y = t.matmul(x, wv);
            let y = t.unary(y, Unary::Square);
            t.sum(y)
        });
    }

    #[test]
    fn blend_gradients_in_weights_and_items() {
        check(&[3], &[0.2, 0.5, 0.3], |t, w| {
            let items: Vec<Var> = (0..3)
                .map(|k| t.constant(Tensor::from_f64(&[2], &[k as f64 + 1.0, -(k as f64)])))
                .collect();
            let b = t.blend(w, &items);
            let b = t.unary(b, Unary::Square);
            t.sum(b)
        });
        check(&[2], &[1.5, -0.5], |t, item| {
            let w = t.constant(Tensor::from_f64(&[2], &[0.25, 0.75]));
            let other = t.constant(Tensor::from_f64(&[2], &[3.0, 1.0]));
            let b = t.blend(w, &[item, other]);
            let b = t.unary(b, Unary::Square);
            t.sum(b)
        });
    }

    #[test]
    fn conv_gradients() {
        let g = ConvGeom::new(3, 2, 1);
        let x0: Vec<f64> = (0..2 * 5 * 5).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.1).collect();
        let w0: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 5 % 11) as f64 - 5.0) * 0.05).collect();
        check(&[1, 2, 5, 5], &x0, |t, x| {
            let w = t.constant(Tensor::from_f64(&[3, 2, 3, 3], &w0));
            let b = t.constant(Tensor::from_f64(&[3], &[0.1, 0.0, -0.1]));
            let y = t.conv2d(x, w, b, g);
            let y = t.tanh(y);
            t.sum(y)
        });
        check(&[3, 2, 3, 3], &w0, |t, w| {
            let x = t.constant(Tensor::from_f64(&[1, 2, 5, 5], &x0));
            let b = t.constant(Tensor::from_f64(&[3], &[0.1, 0.0, -0.1]));
            let y = t.conv2d(x, w, b, g);
            let y = t.tanh(y);
            t.sum(y)
        });
        let gt = ConvGeom::new(4, 2, 1);
        let xt: Vec<f64> = (0..2 * 3 * 3).map(|i| ((i * 3 % 5) as f64 - 2.0) * 0.2).collect();
        let wt: Vec<f64> = (0..2 * 3 * 16).map(|i| ((i * 7 % 13) as f64 - 6.0) * 0.03).collect();
        check(&[1, 2, 3, 3], &xt, |t, x| {
            let w = t.constant(Tensor::from_f64(&[2, 3, 4, 4], &wt));
            let b = t.constant(Tensor::from_f64(&[3], &[0.2, -0.1, 0.0]));
            let y = t.conv_transpose2d(x, w, b, gt);
            let y = t.sigmoid(y);
            t.sum(y)
        });
        check(&[2, 3, 4, 4], &wt, |t, w| {
            let x = t.constant(Tensor::from_f64(&[1, 2, 3, 3], &xt));
            let b = t.constant(Tensor::from_f64(&[3], &[0.2, -0.1, 0.0]));
            let y = t.conv_transpose2d(x, w, b, gt);
            let y = t.sigmoid(y);
            t.sum(y)
        });
    }

    #[test]
    fn fused_loss_gradients() {
        // q_loc, q_scale, p_loc, p_scale packed into one leaf so all four are checked.
        check(&[4, 2], &[0.3, -0.2, 0.8, 1.3, -0.1, 0.4, 1.1, 0.6], |t, v| {
            let ql = t.slice_rows(v, 0, 1);
            let qs = t.slice_rows(v, 1, 1);
            let pl = t.slice_rows(v, 2, 1);
            let ps = t.slice_rows(v, 3, 1);
            t.kl_diag(ql, qs, pl, ps)
        });
        check(&[2, 3], &[0.0, 1.0, 0.3, 0.2, 0.7, 0.45], |t, v| {
            let x = t.slice_rows(v, 0, 1);
            let p = t.slice_rows(v, 1, 1);
            t.bernoulli_log_lik(x, p)
        });
    }

    #[test]
    fn unused_branches_get_no_gradient() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Tensor::scalar(2.0), true);
        let c = t.constant(Tensor::scalar(3.0));
        let y = t.mul(a, c);
        let grads = t.backward(y);
        assert_eq!(grads.get(a).unwrap().data(), &[3.0]);
        assert!(grads.get(c).is_none());
    }
}
