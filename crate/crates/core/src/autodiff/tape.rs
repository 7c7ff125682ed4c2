use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MinEw(Var, Var),
    MaxEw(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Square(Var),
    Sqrt(Var),
    SumRows(Var),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    RowMin(Var, Vec<usize>),
    RowMax(Var, Vec<usize>),
    Cols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentMean(Var, Vec<Vec<usize>>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    SoftmaxRows(Var),
    MatMul(Var, Var),
    ComplexAbs2(Var, Var),
    ProjectRows(Var, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MinEw(..) => "min",
            Op::MaxEw(..) => "max",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowMin(..) => "row_min",
            Op::RowMax(..) => "row_max",
            Op::Cols(..) => "cols",
            Op::GatherRows(..) => "gather_rows",
            Op::SegmentMean(..) => "segment_mean",
            Op::ConcatCols(..) => "concat_cols",
            Op::Reshape(..) => "reshape",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::MatMul(..) => "matmul",
            Op::ComplexAbs2(..) => "complex_abs2",
            Op::ProjectRows(..) => "project_rows",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only record of tensor operations for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    non_finite: Option<(&'static str, usize)>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Adjoint of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn bidx(t: &Tensor, r: usize, c: usize) -> usize {
    let rr = if t.rows() == 1 { 0 } else { r };
    let cc = if t.cols() == 1 { 0 } else { c };
    rr * t.cols() + cc
}

fn broadcast_shape(a: &Tensor, b: &Tensor) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast {:?} with {:?}", a.shape(), b.shape())
        }
    };
    (dim(a.rows(), b.rows()), dim(a.cols(), b.cols()))
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (r, c) = broadcast_shape(a, b);
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(r, c, data);
    }
    let mut out = Tensor::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            out.set(i, j, f(a.data()[bidx(a, i, j)], b.data()[bidx(b, i, j)]));
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some((op.name(), id));
        }
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(id)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Input treated as a constant by [`backward`](Self::backward).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Fails with the first operation that produced a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite {
            Some((op, node)) => Err(Error::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(op, value, ng)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let value = zip_broadcast(self.value(a), self.value(b), f);
        let ng = self.ng(a) || self.ng(b);
        self.push(op, value, ng)
    }

    // ---------------------------------------------------------------------
    // Elementwise (binary ops broadcast over unit rows / columns)

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Elementwise minimum; ties pass the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::MinEw(a, b), |x, y| if x <= y { x } else { y })
    }

    /// Elementwise maximum; ties pass the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::MaxEw(a, b), |x, y| if x >= y { x } else { y })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| s * x)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn log2(&mut self, a: Var) -> Var {
        let l = self.ln(a);
        self.scale(l, std::f64::consts::LOG2_E)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    // ---------------------------------------------------------------------
    // Reductions

    /// Sum of each row, shape `(r, 1)`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let v = Tensor::column(data);
        let ng = self.ng(a);
        self.push(Op::SumRows(a), v, ng)
    }

    /// Sum of each column, shape `(1, c)`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut data = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            for (d, x) in data.iter_mut().zip(t.row(r)) {
                *d += x;
            }
        }
        let ng = self.ng(a);
        self.push(Op::SumCols(a), Tensor::row_vector(data), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Op::Sum(a), Tensor::scalar(s), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.ng(a);
        self.push(Op::Mean(a), Tensor::scalar(s), ng)
    }

    /// Minimum of each row, shape `(r, 1)`; the gradient flows to the
    /// smallest index attaining it.
    pub fn row_min(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let arg: Vec<usize> = (0..t.rows())
            .map(|r| crate::rates::argmin(t.row(r)))
            .collect();
        let data = arg.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let ng = self.ng(a);
        self.push(Op::RowMin(a, arg), Tensor::column(data), ng)
    }

    /// Maximum of each row, shape `(r, 1)`; ties go to the smallest index.
    pub fn row_max(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let arg: Vec<usize> = (0..t.rows())
            .map(|r| {
                let row = t.row(r);
                let mut best = 0;
                for (j, &x) in row.iter().enumerate().skip(1) {
                    if x > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect();
        let data = arg.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let ng = self.ng(a);
        self.push(Op::RowMax(a, arg), Tensor::column(data), ng)
    }

    // ---------------------------------------------------------------------
    // Structural

    /// Columns `start..start + len`.
    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.cols(), "column slice out of range");
        let mut out = Tensor::zeros(t.rows(), len);
        for r in 0..t.rows() {
            out.row_mut(r)
                .copy_from_slice(&t.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(Op::Cols(a, start), out, ng)
    }

    /// Row `j` of the output is row `idx[j]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(idx.len(), t.cols());
        for (j, &i) in idx.iter().enumerate() {
            out.row_mut(j).copy_from_slice(t.row(i));
        }
        let ng = self.ng(a);
        self.push(Op::GatherRows(a, idx), out, ng)
    }

    /// Row `g` of the output is the mean of rows `groups[g]` of `a`
    /// (zeros for an empty group).
    pub fn segment_mean(&mut self, a: Var, groups: Vec<Vec<usize>>) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(groups.len(), t.cols());
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let w = 1.0 / members.len() as f64;
            let row = out.row_mut(g);
            for &i in members {
                for (o, x) in row.iter_mut().zip(t.row(i)) {
                    *o += w * x;
                }
            }
        }
        let ng = self.ng(a);
        self.push(Op::SegmentMean(a, groups), out, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[c0..c0 + t.cols()].copy_from_slice(t.row(r));
                c0 += t.cols();
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Op::ConcatCols(parts.to_vec()), out, ng)
    }

    /// Same row-major data viewed as `rows × cols`.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let t = self.value(a);
        let out = Tensor::new(rows, cols, t.data().to_vec());
        let ng = self.ng(a);
        self.push(Op::Reshape(a), out, ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - hi).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        let ng = self.ng(a);
        self.push(Op::SoftmaxRows(a), out, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::MatMul(a, b), out, ng)
    }

    /// Row-wise `|Σ_t h_t w_t|²` where each row interleaves `(re, im)`
    /// pairs. Either operand may have a single row, which is broadcast.
    pub fn complex_abs2(&mut self, h: Var, w: Var) -> Var {
        let (th, tw) = (self.value(h), self.value(w));
        assert_eq!(th.cols(), tw.cols(), "complex_abs2 width mismatch");
        assert_eq!(th.cols() % 2, 0, "complex_abs2 needs interleaved pairs");
        let rows = th.rows().max(tw.rows());
        let data = (0..rows)
            .map(|r| {
                let (z_re, z_im) = complex_dot(
                    th.row(if th.rows() == 1 { 0 } else { r }),
                    tw.row(if tw.rows() == 1 { 0 } else { r }),
                );
                z_re * z_re + z_im * z_im
            })
            .collect();
        let ng = self.ng(h) || self.ng(w);
        self.push(Op::ComplexAbs2(h, w), Tensor::column(data), ng)
    }

    /// Scales every row with norm above `radius` back onto the sphere.
    pub fn project_rows(&mut self, a: Var, radius: f64) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > radius {
                row.iter_mut().for_each(|x| *x *= radius / n);
            }
        }
        let ng = self.ng(a);
        self.push(Op::ProjectRows(a, radius), out, ng)
    }

    // ---------------------------------------------------------------------
    // Reverse pass

    /// Adjoints of every node reachable from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        self.check_finite()?;
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op: node.op.name(),
                    node: id,
                });
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Grads { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b),
            slot => *slot = Some(g),
        }
    }

    /// Sums a broadcast adjoint back down to `v`'s shape.
    fn reduce_to(&self, v: Var, g: Tensor) -> Tensor {
        let shape = self.shape(v);
        if g.shape() == shape {
            return g;
        }
        let mut out = Tensor::zeros(shape.0, shape.1);
        for r in 0..g.rows() {
            for c in 0..g.cols() {
                let j = bidx(&out, r, c);
                out.data_mut()[j] += g.get(r, c);
            }
        }
        out
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[id].value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, self.reduce_to(*a, g.clone()));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, self.reduce_to(*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, self.reduce_to(*a, g.clone()));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, self.reduce_to(*b, g.map(|x| -x)));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let ga = zip_broadcast(g, val(*b), |x, y| x * y);
                    self.accumulate(grads, *a, self.reduce_to(*a, ga));
                }
                if self.ng(*b) {
                    let gb = zip_broadcast(g, val(*a), |x, y| x * y);
                    self.accumulate(grads, *b, self.reduce_to(*b, gb));
                }
            }
            Op::Div(a, b) => {
                if self.ng(*a) {
                    let ga = zip_broadcast(g, val(*b), |x, y| x / y);
                    self.accumulate(grads, *a, self.reduce_to(*a, ga));
                }
                if self.ng(*b) {
                    // d(a/b)/db = -out / b
                    let t = zip_broadcast(out, val(*b), |o, y| -o / y);
                    let gb = zip_broadcast(g, &t, |x, y| x * y);
                    self.accumulate(grads, *b, self.reduce_to(*b, gb));
                }
            }
            Op::MinEw(a, b) | Op::MaxEw(a, b) => {
                let is_min = matches!(self.nodes[id].op, Op::MinEw(..));
                let pick_a = zip_broadcast(val(*a), val(*b), |x, y| {
                    let first = if is_min { x <= y } else { x >= y };
                    if first {
                        1.0
                    } else {
                        0.0
                    }
                });
                if self.ng(*a) {
                    let ga = zip_broadcast(g, &pick_a, |x, p| x * p);
                    self.accumulate(grads, *a, self.reduce_to(*a, ga));
                }
                if self.ng(*b) {
                    let gb = zip_broadcast(g, &pick_a, |x, p| x * (1.0 - p));
                    self.accumulate(grads, *b, self.reduce_to(*b, gb));
                }
            }
            Op::Neg(a) => self.accumulate(grads, *a, g.map(|x| -x)),
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| s * x)),
            Op::Offset(a) | Op::Reshape(a) => {
                let s = self.shape(*a);
                self.accumulate(grads, *a, Tensor::new(s.0, s.1, g.data().to_vec()))
            }
            Op::Exp(a) => self.accumulate(grads, *a, zip_broadcast(g, out, |x, o| x * o)),
            Op::Ln(a) => self.accumulate(grads, *a, zip_broadcast(g, val(*a), |x, y| x / y)),
            Op::Tanh(a) => {
                self.accumulate(grads, *a, zip_broadcast(g, out, |x, o| x * (1.0 - o * o)))
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, zip_broadcast(g, out, |x, o| x * o * (1.0 - o)))
            }
            Op::Relu(a) => self.accumulate(
                grads,
                *a,
                zip_broadcast(g, val(*a), |x, y| if y > 0.0 { x } else { 0.0 }),
            ),
            Op::Square(a) => {
                self.accumulate(grads, *a, zip_broadcast(g, val(*a), |x, y| 2.0 * x * y))
            }
            Op::Sqrt(a) => self.accumulate(grads, *a, zip_broadcast(g, out, |x, o| x / (2.0 * o))),
            Op::SumRows(a) | Op::SumCols(a) | Op::Sum(a) => {
                let s = self.shape(*a);
                let ga = zip_broadcast(&Tensor::zeros(s.0, s.1), g, |_, y| y);
                self.accumulate(grads, *a, ga);
            }
            Op::Mean(a) => {
                let s = self.shape(*a);
                let n = (s.0 * s.1) as f64;
                self.accumulate(grads, *a, Tensor::full(s.0, s.1, g.item() / n));
            }
            Op::RowMin(a, arg) | Op::RowMax(a, arg) => {
                let s = self.shape(*a);
                let mut ga = Tensor::zeros(s.0, s.1);
                for (r, &c) in arg.iter().enumerate() {
                    ga.set(r, c, g.get(r, 0));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Cols(a, start) => {
                let s = self.shape(*a);
                let mut ga = Tensor::zeros(s.0, s.1);
                for r in 0..s.0 {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let s = self.shape(*a);
                let mut ga = Tensor::zeros(s.0, s.1);
                for (j, &i) in idx.iter().enumerate() {
                    for (d, x) in ga.row_mut(i).iter_mut().zip(g.row(j)) {
                        *d += x;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentMean(a, groups) => {
                let s = self.shape(*a);
                let mut ga = Tensor::zeros(s.0, s.1);
                for (gi, members) in groups.iter().enumerate() {
                    let w = 1.0 / members.len().max(1) as f64;
                    for &i in members {
                        for (d, x) in ga.row_mut(i).iter_mut().zip(g.row(gi)) {
                            *d += w * x;
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.ng(p) {
                        let mut gp = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    c0 += cols;
                }
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (o, gr) = (out.row(r), g.row(r));
                    let dot: f64 = o.iter().zip(gr).map(|(x, y)| x * y).sum();
                    for (j, d) in ga.row_mut(r).iter_mut().enumerate() {
                        *d = o[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    let s = self.shape(*a);
                    let mut ga = Tensor::zeros(s.0, s.1);
                    gemm(g, false, val(*b), true, &mut ga, 0.0);
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let s = self.shape(*b);
                    let mut gb = Tensor::zeros(s.0, s.1);
                    gemm(val(*a), true, g, false, &mut gb, 0.0);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::ComplexAbs2(h, w) => {
                let (th, tw) = (val(*h), val(*w));
                let mut gh = Tensor::zeros(th.rows(), th.cols());
                let mut gw = Tensor::zeros(tw.rows(), tw.cols());
                for r in 0..out.rows() {
                    let rh = if th.rows() == 1 { 0 } else { r };
                    let rw = if tw.rows() == 1 { 0 } else { r };
                    let (hr, wr) = (th.row(rh), tw.row(rw));
                    let (z_re, z_im) = complex_dot(hr, wr);
                    let s = 2.0 * g.get(r, 0);
                    // d|z|²/dx_re = 2 Re(conj(z)·y), d|z|²/dx_im = -2 Im(conj(z)·y),
                    // where y is the other factor.
                    for t in 0..hr.len() / 2 {
                        let (a_re, a_im) = (hr[2 * t], hr[2 * t + 1]);
                        let (b_re, b_im) = (wr[2 * t], wr[2 * t + 1]);
                        let gwr = gw.row_mut(rw);
                        gwr[2 * t] += s * (z_re * a_re + z_im * a_im);
                        gwr[2 * t + 1] -= s * (z_re * a_im - z_im * a_re);
                        let ghr = gh.row_mut(rh);
                        ghr[2 * t] += s * (z_re * b_re + z_im * b_im);
                        ghr[2 * t + 1] -= s * (z_re * b_im - z_im * b_re);
                    }
                }
                if self.ng(*h) {
                    self.accumulate(grads, *h, gh);
                }
                if self.ng(*w) {
                    self.accumulate(grads, *w, gw);
                }
            }
            Op::ProjectRows(a, radius) => {
                let x = val(*a);
                let mut ga = g.clone();
                for r in 0..x.rows() {
                    let xr = x.row(r);
                    let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > *radius {
                        let dot: f64 = xr.iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                        let gr = ga.row_mut(r);
                        for (j, d) in gr.iter_mut().enumerate() {
                            *d = radius / n * (*d - xr[j] * dot / (n * n));
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Σ_t a_t b_t` over interleaved complex rows.
fn complex_dot(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut re = 0.0;
    let mut im = 0.0;
    for t in 0..a.len() / 2 {
        let (ar, ai, br, bi) = (a[2 * t], a[2 * t + 1], b[2 * t], b[2 * t + 1]);
        re += ar * br - ai * bi;
        im += ar * bi + ai * br;
    }
    (re, im)
}
