//! Operation tape for reverse-mode differentiation over dense matrices.
//!
//! Every op appends a node holding its forward value. [`Graph::backward`]
//! walks the tape in reverse and returns the adjoint of every node that the
//! loss depends on.

use super::tensor::{gemm, Tensor};
use crate::error::{GeneError, Result};

/// Floor applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Square(usize),
    LogClamped(usize),
    SoftmaxRows(usize),
    ConcatCols(Vec<usize>),
    SliceCols { src: usize, start: usize },
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    Reshape(usize),
    CrossEntropy {
        probs: usize,
        targets: Vec<usize>,
        weights: Option<Vec<f64>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(GeneError::dim(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn as_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(GeneError::dim(format!("{what}: expected a matrix, got {s:?}"))),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of a `rows×cols` buffer, max-shifted.
pub fn softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(cols).zip(out.chunks_mut(cols)) {
        let m = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - m).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v)
    }

    /// Leaf node: a constant input or a bound parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix(self.val(a), "matmul lhs")?;
        let (k2, n) = as_matrix(self.val(b), "matmul rhs")?;
        if k != k2 {
            return Err(GeneError::dim(format!(
                "matmul: {m}x{k} times {k2}x{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.val(a).data(), false, self.val(b).data(), false, &mut out, 0.0);
        Ok(self.push(Tensor::raw(vec![m, n], out), Op::MatMul(a.0, b.0)))
    }

    /// `x[i, j] + bias[j]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = as_matrix(self.val(x), "add_bias input")?;
        if self.val(bias).len() != cols {
            return Err(GeneError::dim(format!(
                "bias of length {} for {cols} columns",
                self.val(bias).len()
            )));
        }
        let b = self.val(bias).data();
        let mut out = self.val(x).data().to_vec();
        for row in out.chunks_mut(cols) {
            for (o, bj) in row.iter_mut().zip(b) {
                *o += bj;
            }
        }
        Ok(self.push(Tensor::raw(vec![rows, cols], out), Op::AddBias(x.0, bias.0)))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        same_shape(self.val(a), self.val(b), what)?;
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.val(a).shape().to_vec();
        Ok(self.push(Tensor::raw(shape, data), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.val(x).map(f);
        self.push(t, op)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x.0, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x.0))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x.0))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x.0))
    }

    /// `ln(max(x, PROB_CLAMP))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(PROB_CLAMP).ln(), Op::LogClamped(x.0))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = as_matrix(self.val(x), "softmax_rows")?;
        let out = softmax_rows(self.val(x).data(), c);
        Ok(self.push(Tensor::raw(vec![r, c], out), Op::SoftmaxRows(x.0)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| GeneError::dim("concat of zero tensors"))?;
        let rows = as_matrix(self.val(*first), "concat")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = as_matrix(self.val(*p), "concat")?;
            if r != rows {
                return Err(GeneError::dim(format!("concat: {r} rows vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.val(*p).data()[i * w..(i + 1) * w]);
            }
        }
        let op = Op::ConcatCols(parts.iter().map(|p| p.0).collect());
        Ok(self.push(Tensor::raw(vec![rows, total], out), op))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = as_matrix(self.val(x), "slice_cols")?;
        if width == 0 || start + width > c {
            return Err(GeneError::dim(format!(
                "slice [{start}, {}) of {c} columns",
                start + width
            )));
        }
        let src = self.val(x).data();
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + width]);
        }
        Ok(self.push(
            Tensor::raw(vec![r, width], out),
            Op::SliceCols { src: x.0, start },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.val(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x.0))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.val(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x.0))
    }

    /// Column means over the batch: `rows×cols -> 1×cols`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = as_matrix(self.val(x), "mean_rows")?;
        let mut out = vec![0.0; c];
        for row in self.val(x).data().chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        Ok(self.push(Tensor::raw(vec![1, c], out), Op::MeanRows(x.0)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.val(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x.0)))
    }

    /// Weighted negative log-likelihood of `targets` under row-probabilities
    /// `probs`, normalised by the total weight (plain mean without weights).
    pub fn cross_entropy(
        &mut self,
        probs: Var,
        targets: &[usize],
        class_weights: Option<&[f64]>,
    ) -> Result<Var> {
        let (r, k) = as_matrix(self.val(probs), "cross_entropy")?;
        if targets.len() != r {
            return Err(GeneError::dim(format!(
                "cross_entropy: {} targets for {r} rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(GeneError::data(format!(
                "target index {bad} out of range for {k} classes"
            )));
        }
        if let Some(w) = class_weights {
            if w.len() != k {
                return Err(GeneError::dim("class weight length differs from class count"));
            }
        }
        let weights: Option<Vec<f64>> =
            class_weights.map(|w| targets.iter().map(|&t| w[t]).collect());
        let p = self.val(probs).data();
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let w = weights.as_ref().map_or(1.0, |w| w[i]);
            num -= w * p[i * k + t].max(PROB_CLAMP).ln();
            den += w;
        }
        let loss = if den > 0.0 { num / den } else { 0.0 };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs: probs.0,
                targets: targets.to_vec(),
                weights,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.val(loss);
        if lv.len() != 1 {
            return Err(GeneError::dim(format!(
                "backward from non-scalar {:?}",
                lv.shape()
            )));
        }
        if !lv.item().is_finite() {
            return Err(GeneError::numeric(format!("loss is {}", lv.item())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::raw(lv.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let acc = |i: usize, t: Tensor, grads: &mut Vec<Option<Tensor>>| match &mut grads[i] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, k) = (av.rows(), av.cols());
                    let n = bv.cols();
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, bv.data(), true, &mut ga, 0.0);
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g.data(), false, &mut gb, 0.0);
                    acc(*a, Tensor::raw(av.shape().to_vec(), ga), &mut grads);
                    acc(*b, Tensor::raw(bv.shape().to_vec(), gb), &mut grads);
                }
                Op::AddBias(x, b) => {
                    let bshape = self.nodes[*b].value.shape().to_vec();
                    let cols = y.cols();
                    let mut gb = vec![0.0; cols];
                    for row in g.data().chunks(cols) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    acc(*b, Tensor::raw(bshape, gb), &mut grads);
                    acc(*x, g, &mut grads);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|v| -v), &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let ga = zip(&g, bv, |gi, bi| gi * bi);
                    let gb = zip(&g, av, |gi, ai| gi * ai);
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Op::Scale(x, c) => acc(*x, g.map(|v| v * c), &mut grads),
                Op::AddScalar(x) | Op::Reshape(x) => {
                    let shape = self.nodes[*x].value.shape().to_vec();
                    acc(*x, Tensor::raw(shape, g.into_data()), &mut grads)
                }
                Op::Tanh(x) => acc(*x, zip(&g, y, |gi, yi| gi * (1.0 - yi * yi)), &mut grads),
                Op::Sigmoid(x) => acc(*x, zip(&g, y, |gi, yi| gi * yi * (1.0 - yi)), &mut grads),
                Op::Exp(x) => acc(*x, zip(&g, y, |gi, yi| gi * yi), &mut grads),
                Op::Relu(x) => {
                    let xv = &self.nodes[*x].value;
                    acc(*x, zip(&g, xv, |gi, xi| if xi > 0.0 { gi } else { 0.0 }), &mut grads)
                }
                Op::Square(x) => {
                    let xv = &self.nodes[*x].value;
                    acc(*x, zip(&g, xv, |gi, xi| 2.0 * gi * xi), &mut grads)
                }
                Op::LogClamped(x) => {
                    let xv = &self.nodes[*x].value;
                    acc(
                        *x,
                        zip(&g, xv, |gi, xi| if xi > PROB_CLAMP { gi / xi } else { 0.0 }),
                        &mut grads,
                    )
                }
                Op::SoftmaxRows(x) => {
                    let c = y.cols();
                    let mut out = vec![0.0; y.len()];
                    for ((gr, yr), o) in g.data().chunks(c).zip(y.data().chunks(c)).zip(out.chunks_mut(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((oi, gi), yi) in o.iter_mut().zip(gr).zip(yr) {
                            *oi = yi * (gi - dot);
                        }
                    }
                    acc(*x, Tensor::raw(y.shape().to_vec(), out), &mut grads)
                }
                Op::ConcatCols(parts) => {
                    let rows = y.rows();
                    let total = y.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.cols();
                        let mut out = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            out.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                        }
                        acc(p, Tensor::raw(vec![rows, w], out), &mut grads);
                        offset += w;
                    }
                }
                Op::SliceCols { src, start } => {
                    let sv = &self.nodes[*src].value;
                    let (rows, c) = (sv.rows(), sv.cols());
                    let w = y.cols();
                    let mut out = vec![0.0; rows * c];
                    for i in 0..rows {
                        out[i * c + start..i * c + start + w].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    acc(*src, Tensor::raw(vec![rows, c], out), &mut grads)
                }
                Op::Sum(x) => {
                    let xv = &self.nodes[*x].value;
                    acc(*x, Tensor::raw(xv.shape().to_vec(), vec![g.item(); xv.len()]), &mut grads)
                }
                Op::Mean(x) => {
                    let xv = &self.nodes[*x].value;
                    let v = g.item() / xv.len() as f64;
                    acc(*x, Tensor::raw(xv.shape().to_vec(), vec![v; xv.len()]), &mut grads)
                }
                Op::MeanRows(x) => {
                    let xv = &self.nodes[*x].value;
                    let r = xv.rows() as f64;
                    let mut out = Vec::with_capacity(xv.len());
                    for _ in 0..xv.rows() {
                        out.extend(g.data().iter().map(|v| v / r));
                    }
                    acc(*x, Tensor::raw(xv.shape().to_vec(), out), &mut grads)
                }
                Op::CrossEntropy {
                    probs,
                    targets,
                    weights,
                } => {
                    let pv = &self.nodes[*probs].value;
                    let k = pv.cols();
                    let den: f64 = weights.as_ref().map_or(targets.len() as f64, |w| w.iter().sum());
                    let mut out = vec![0.0; pv.len()];
                    if den > 0.0 {
                        for (i, &t) in targets.iter().enumerate() {
                            let w = weights.as_ref().map_or(1.0, |w| w[i]);
                            let p = pv.data()[i * k + t];
                            if p > PROB_CLAMP {
                                out[i * k + t] = -g.item() * w / (den * p);
                            }
                        }
                    }
                    acc(*probs, Tensor::raw(pv.shape().to_vec(), out), &mut grads)
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::raw(
        b.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::check_gradients;
    use crate::numcore::Rng;

    fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::raw(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect())
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&[0.0, 0.0], 2);
        assert_eq!(s, vec![0.5, 0.5]);
        let s = softmax_rows(&[2f64.ln(), 0.0], 2);
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15 && (s[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn elementwise_ops_pass_gradient_checks() {
        let mut rng = Rng::new(3);
        for trial in 0..5 {
            let a = rand_tensor(&mut rng, &[3, 4]);
            let b = rand_tensor(&mut rng, &[3, 4]);
            let err = check_gradients(&[a, b], |g, v| {
                let s = g.mul(v[0], v[1])?;
                let t = g.tanh(s);
                let u = g.sigmoid(v[0]);
                let e = g.exp(v[1]);
                let w = g.sub(t, u)?;
                let w = g.add(w, e)?;
                let w = g.softmax_rows(w)?;
                let w = g.square(w);
                let c = g.concat_cols(&[w, v[0]])?;
                let c = g.slice_cols(c, 2, 4)?;
                let m = g.mean_rows(c)?;
                let m = g.scale(m, 1.7);
                Ok(g.sum(m))
            })
            .unwrap();
            assert!(err <= 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn cross_entropy_values_and_errors() {
        let mut g = Graph::new();
        let p = g.input(Tensor::matrix(1, 4, vec![0.25; 4]).unwrap());
        let l = g.cross_entropy(p, &[2], None).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
        let p = g.input(Tensor::matrix(1, 2, vec![0.9, 0.1]).unwrap());
        let l = g.cross_entropy(p, &[1], None).unwrap();
        assert!((g.value(l).item() - (-(0.1f64).ln())).abs() < 1e-12);
        let p = g.input(Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap());
        let l = g.cross_entropy(p, &[1], None).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        assert!(matches!(g.cross_entropy(p, &[2], None), Err(GeneError::Data(_))));
    }

    #[test]
    fn backward_rejects_non_finite_loss() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(1000.0));
        let e = g.exp(x);
        let e = g.exp(e);
        assert!(matches!(g.backward(e), Err(GeneError::Numeric(_))));
    }
}
