//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! Models are written once against the [`Graph`] trait. [`Eager`] evaluates
//! values directly and borrows frozen weights without copying them; [`Tape`]
//! records every operation that depends on a trainable leaf so that
//! [`Tape::backward`] can replay it in reverse. Operations whose inputs are
//! all constant are stored as plain constants, so a frozen forward pass on a
//! tape never produces backward work.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{norm_stats, sigmoid, Tensor, GELU_K};

/// The operations a model forward pass may use.
pub trait Graph<'w> {
    type Node: Clone;

    fn constant(&mut self, t: Tensor) -> Self::Node;
    fn constant_ref(&mut self, t: &'w Tensor) -> Self::Node;
    fn value<'s>(&'s self, n: &'s Self::Node) -> &'s Tensor;

    fn matmul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn matmul_nt(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn add_row(&mut self, a: &Self::Node, bias: &Self::Node) -> Result<Self::Node>;
    fn scale(&mut self, a: &Self::Node, s: f64) -> Self::Node;
    fn softmax_rows(&mut self, a: &Self::Node) -> Self::Node;
    fn layer_norm(
        &mut self,
        x: &Self::Node,
        gain: &Self::Node,
        bias: &Self::Node,
    ) -> Result<Self::Node>;
    fn quick_gelu(&mut self, a: &Self::Node) -> Self::Node;
    fn slice_cols(&mut self, a: &Self::Node, start: usize, len: usize) -> Result<Self::Node>;
    fn concat_cols(&mut self, parts: &[Self::Node]) -> Result<Self::Node>;
    fn concat_rows(&mut self, parts: &[Self::Node]) -> Result<Self::Node>;
    fn select_rows(&mut self, a: &Self::Node, idx: &[usize]) -> Result<Self::Node>;
    fn l2_normalize_rows(&mut self, a: &Self::Node) -> Self::Node;

    /// `x · w + b` with frozen `w` and `b`.
    fn linear(&mut self, x: &Self::Node, w: &'w Tensor, b: &'w Tensor) -> Result<Self::Node> {
        let w = self.constant_ref(w);
        let b = self.constant_ref(b);
        let y = self.matmul(x, &w)?;
        self.add_row(&y, &b)
    }

    /// Layer norm with frozen affine parameters.
    fn layer_norm_frozen(
        &mut self,
        x: &Self::Node,
        gain: &'w Tensor,
        bias: &'w Tensor,
    ) -> Result<Self::Node> {
        let g = self.constant_ref(gain);
        let b = self.constant_ref(bias);
        self.layer_norm(x, &g, &b)
    }
}

/// Direct evaluation without recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl<'w> Graph<'w> for Eager {
    type Node = Cow<'w, Tensor>;

    fn constant(&mut self, t: Tensor) -> Self::Node {
        Cow::Owned(t)
    }

    fn constant_ref(&mut self, t: &'w Tensor) -> Self::Node {
        Cow::Borrowed(t)
    }

    fn value<'s>(&'s self, n: &'s Self::Node) -> &'s Tensor {
        n
    }

    fn matmul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        a.matmul(b).map(Cow::Owned)
    }

    fn matmul_nt(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        a.matmul_nt(b).map(Cow::Owned)
    }

    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        a.add(b).map(Cow::Owned)
    }

    fn add_row(&mut self, a: &Self::Node, bias: &Self::Node) -> Result<Self::Node> {
        a.add_row(bias).map(Cow::Owned)
    }

    fn scale(&mut self, a: &Self::Node, s: f64) -> Self::Node {
        Cow::Owned(a.scale(s))
    }

    fn softmax_rows(&mut self, a: &Self::Node) -> Self::Node {
        Cow::Owned(a.softmax_rows())
    }

    fn layer_norm(
        &mut self,
        x: &Self::Node,
        gain: &Self::Node,
        bias: &Self::Node,
    ) -> Result<Self::Node> {
        x.layer_norm(gain, bias).map(Cow::Owned)
    }

    fn quick_gelu(&mut self, a: &Self::Node) -> Self::Node {
        Cow::Owned(a.quick_gelu())
    }

    fn slice_cols(&mut self, a: &Self::Node, start: usize, len: usize) -> Result<Self::Node> {
        a.slice_cols(start, len).map(Cow::Owned)
    }

    fn concat_cols(&mut self, parts: &[Self::Node]) -> Result<Self::Node> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| p.as_ref()).collect();
        Tensor::concat_cols(&refs).map(Cow::Owned)
    }

    fn concat_rows(&mut self, parts: &[Self::Node]) -> Result<Self::Node> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| p.as_ref()).collect();
        Tensor::concat_rows(&refs).map(Cow::Owned)
    }

    fn select_rows(&mut self, a: &Self::Node, idx: &[usize]) -> Result<Self::Node> {
        a.select_rows(idx).map(Cow::Owned)
    }

    fn l2_normalize_rows(&mut self, a: &Self::Node) -> Self::Node {
        Cow::Owned(a.l2_normalize_rows())
    }
}

/// Handle to a value recorded on a [`Tape`].
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
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm(Var, Var, Var),
    QuickGelu(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Transpose(Var),
    L2NormalizeRows(Var),
    Sqrt(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    tracked: bool,
}

/// Single-writer record of operations for one differentiation pass.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `like`'s shape when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded nodes that carry backward work.
    pub fn tracked_len(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.tracked && !matches!(n.op, Op::Leaf))
            .count()
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    pub fn get(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        if inputs.iter().any(|&v| self.tracked(v)) {
            self.push(Cow::Owned(value), op, true)
        } else {
            self.push(Cow::Owned(value), Op::Leaf, false)
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.get(a).sub(self.get(b))?;
        Ok(self.record(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.get(a).mul(self.get(b))?;
        Ok(self.record(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = self.get(a).log_softmax_rows();
        self.record(v, Op::LogSoftmaxRows(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.get(a).transpose()?;
        Ok(self.record(v, Op::Transpose(a), &[a]))
    }

    /// Elementwise square root; inputs must be positive for a finite
    /// gradient.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let av = self.get(a);
        let v = Tensor::new(
            av.shape().to_vec(),
            av.data().iter().map(|x| x.sqrt()).collect(),
        )?;
        Ok(self.record(v, Op::Sqrt(a), &[a]))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.get(a).sum());
        self.record(v, Op::Sum(a), &[a])
    }

    /// Reverse replay from a one-element `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.get(output).len() != 1 {
            return Err(Error::dim("backward: output must hold a single value"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::new(self.get(output).shape().to_vec(), vec![1.0])?);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (input, contrib) in self.local_grads(node, &g)? {
                if !self.tracked(input) {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node<'a>, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let y = node.value.as_ref();
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.get(*a), self.get(*b));
                let ga = g.matmul_nt(bv)?.reshape(av.shape().to_vec())?;
                let a2 = as_matrix(av)?;
                let gb = a2.matmul_tn(g)?.reshape(bv.shape().to_vec())?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::MatMulNt(a, b) => {
                // y = a bᵀ: ga = g b, gb = gᵀ a
                let (av, bv) = (self.get(*a), self.get(*b));
                let ga = g.matmul(&as_matrix(bv)?)?.reshape(av.shape().to_vec())?;
                let gb = g.matmul_tn(&as_matrix(av)?)?.reshape(bv.shape().to_vec())?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Mul(a, b) => {
                let ga = g.mul(self.get(*b))?;
                let gb = g.mul(self.get(*a))?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddRow(a, bias) => {
                let c = g.cols();
                let mut gb = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                let gb = Tensor::new(self.get(*bias).shape().to_vec(), gb)?;
                vec![(*a, g.clone()), (*bias, gb)]
            }
            Op::Scale(a, s) => vec![(*a, g.scale(*s))],
            Op::SoftmaxRows(a) => {
                let mut out = g.clone();
                let c = g.cols();
                for (orow, yrow) in out.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let inner: f64 = orow.iter().zip(yrow).map(|(gi, yi)| gi * yi).sum();
                    for (o, &yi) in orow.iter_mut().zip(yrow) {
                        *o = yi * (*o - inner);
                    }
                }
                vec![(*a, out)]
            }
            Op::LogSoftmaxRows(a) => {
                let mut out = g.clone();
                let c = g.cols();
                for (orow, yrow) in out.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let total: f64 = orow.iter().sum();
                    for (o, &yi) in orow.iter_mut().zip(yrow) {
                        *o -= yi.exp() * total;
                    }
                }
                vec![(*a, out)]
            }
            Op::LayerNorm(x, gain, bias) => {
                let xv = self.get(*x);
                let gv = self.get(*gain);
                let d = xv.cols();
                let mut gx = vec![0.0; xv.len()];
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for ((xr, gr), gxr) in xv
                    .data()
                    .chunks(d)
                    .zip(g.data().chunks(d))
                    .zip(gx.chunks_mut(d))
                {
                    let (mean, rstd) = norm_stats(xr);
                    let xhat: Vec<f64> = xr.iter().map(|v| (v - mean) * rstd).collect();
                    let dxhat: Vec<f64> = gr.iter().zip(gv.data()).map(|(a, b)| a * b).collect();
                    let m1 = dxhat.iter().sum::<f64>() / d as f64;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gxr[j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                        ggain[j] += gr[j] * xhat[j];
                        gbias[j] += gr[j];
                    }
                }
                vec![
                    (*x, Tensor::new(xv.shape().to_vec(), gx)?),
                    (*gain, Tensor::new(gv.shape().to_vec(), ggain)?),
                    (*bias, Tensor::new(self.get(*bias).shape().to_vec(), gbias)?),
                ]
            }
            Op::QuickGelu(a) => {
                let xv = self.get(*a);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &gi)| {
                        let s = sigmoid(GELU_K * x);
                        gi * (s + GELU_K * x * s * (1.0 - s))
                    })
                    .collect();
                vec![(*a, Tensor::new(xv.shape().to_vec(), data)?)]
            }
            Op::SliceCols(a, start) => {
                let av = self.get(*a);
                let (c, len) = (av.cols(), g.cols());
                let mut out = vec![0.0; av.len()];
                for r in 0..av.rows() {
                    out[r * c + start..r * c + start + len].copy_from_slice(g.row(r));
                }
                vec![(*a, Tensor::new(av.shape().to_vec(), out)?)]
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for p in parts {
                    let pv = self.get(*p);
                    let w = pv.cols();
                    let piece = g.slice_cols(offset, w)?.reshape(pv.shape().to_vec())?;
                    res.push((*p, piece));
                    offset += w;
                }
                res
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for p in parts {
                    let pv = self.get(*p);
                    let n = pv.len();
                    let piece =
                        Tensor::new(pv.shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                    debug_assert_eq!(pv.cols(), c);
                    res.push((*p, piece));
                    offset += n;
                }
                res
            }
            Op::SelectRows(a, idx) => {
                let av = self.get(*a);
                let c = av.cols();
                let mut out = vec![0.0; av.len()];
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                vec![(*a, Tensor::new(av.shape().to_vec(), out)?)]
            }
            Op::Transpose(a) => {
                let gt = g.transpose()?.reshape(self.get(*a).shape().to_vec())?;
                vec![(*a, gt)]
            }
            Op::L2NormalizeRows(a) => {
                let xv = self.get(*a);
                let c = xv.cols();
                let mut out = vec![0.0; xv.len()];
                for r in 0..xv.rows() {
                    let xr = xv.row(r);
                    let n = crate::tensor::norm(xr);
                    if n == 0.0 {
                        continue;
                    }
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        out[r * c + j] = (gr[j] - yr[j] * proj) / n;
                    }
                }
                vec![(*a, Tensor::new(xv.shape().to_vec(), out)?)]
            }
            Op::Sqrt(a) => {
                let out = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gi, yi)| gi * 0.5 / yi)
                    .collect();
                vec![(*a, Tensor::new(y.shape().to_vec(), out)?)]
            }
            Op::Sum(a) => {
                let av = self.get(*a);
                vec![(
                    *a,
                    Tensor::new(av.shape().to_vec(), vec![g.data()[0]; av.len()])?,
                )]
            }
        })
    }
}

fn as_matrix(t: &Tensor) -> Result<Tensor> {
    if t.shape().len() == 1 {
        t.clone().reshape(vec![1, t.len()])
    } else {
        Ok(t.clone())
    }
}

impl<'a> Graph<'a> for Tape<'a> {
    type Node = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    fn value<'s>(&'s self, n: &'s Var) -> &'s Tensor {
        self.get(*n)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.get(*a).matmul(self.get(*b))?;
        Ok(self.record(v, Op::MatMul(*a, *b), &[*a, *b]))
    }

    fn matmul_nt(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.get(*a).matmul_nt(self.get(*b))?;
        Ok(self.record(v, Op::MatMulNt(*a, *b), &[*a, *b]))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.get(*a).add(self.get(*b))?;
        Ok(self.record(v, Op::Add(*a, *b), &[*a, *b]))
    }

    fn add_row(&mut self, a: &Var, bias: &Var) -> Result<Var> {
        let v = self.get(*a).add_row(self.get(*bias))?;
        Ok(self.record(v, Op::AddRow(*a, *bias), &[*a, *bias]))
    }

    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let v = self.get(*a).scale(s);
        self.record(v, Op::Scale(*a, s), &[*a])
    }

    fn softmax_rows(&mut self, a: &Var) -> Var {
        let v = self.get(*a).softmax_rows();
        self.record(v, Op::SoftmaxRows(*a), &[*a])
    }

    fn layer_norm(&mut self, x: &Var, gain: &Var, bias: &Var) -> Result<Var> {
        let v = self.get(*x).layer_norm(self.get(*gain), self.get(*bias))?;
        Ok(self.record(v, Op::LayerNorm(*x, *gain, *bias), &[*x, *gain, *bias]))
    }

    fn quick_gelu(&mut self, a: &Var) -> Var {
        let v = self.get(*a).quick_gelu();
        self.record(v, Op::QuickGelu(*a), &[*a])
    }

    fn slice_cols(&mut self, a: &Var, start: usize, len: usize) -> Result<Var> {
        let v = self.get(*a).slice_cols(start, len)?;
        Ok(self.record(v, Op::SliceCols(*a, start), &[*a]))
    }

    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.get(*p)).collect();
        let v = Tensor::concat_cols(&refs)?;
        Ok(self.record(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.get(*p)).collect();
        let v = Tensor::concat_rows(&refs)?;
        Ok(self.record(v, Op::ConcatRows(parts.to_vec()), parts))
    }

    fn select_rows(&mut self, a: &Var, idx: &[usize]) -> Result<Var> {
        let v = self.get(*a).select_rows(idx)?;
        Ok(self.record(v, Op::SelectRows(*a, idx.to_vec()), &[*a]))
    }

    fn l2_normalize_rows(&mut self, a: &Var) -> Var {
        let v = self.get(*a).l2_normalize_rows();
        self.record(v, Op::L2NormalizeRows(*a), &[*a])
    }
}

/// Compares the analytic gradient of a scalar function against a
/// five-point central difference with step `h`, returning the largest
/// per-coordinate `|analytic − numeric| / max(|analytic|, |numeric|, ε)`.
/// The floor `ε = 1e-9 · max(1, |f(θ)|)` is the resolution of the
/// difference quotient; it only matters for gradients that vanish.
///
/// `f` must build its computation on the supplied tape from the given
/// parameter variable and return the scalar output.
pub fn grad_check<'a, F>(f: F, theta: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'a>, Var) -> Result<Var>,
{
    grad_check_coords(f, theta, h, None)
}

/// [`grad_check`] restricted to a subset of flat coordinates.
pub fn grad_check_coords<'a, F>(
    f: F,
    theta: &Tensor,
    h: f64,
    coords: Option<&[usize]>,
) -> Result<f64>
where
    F: Fn(&mut Tape<'a>, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let p = tape.param(t.clone());
        let out = f(&mut tape, p)?;
        let v = tape.get(out).data()[0];
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("non-finite loss {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let p = tape.param(theta.clone());
    let out = f(&mut tape, p)?;
    if !tape.get(out).data()[0].is_finite() {
        return Err(Error::Evaluation("non-finite loss".into()));
    }
    let floor = 1e-9 * tape.get(out).data()[0].abs().max(1.0);
    let analytic = tape.backward(out)?.get_or_zeros(p, theta);

    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..theta.len()).collect();
            &all
        }
    };
    let mut worst: f64 = 0.0;
    for &i in coords {
        let at = |step: f64| {
            let mut t = theta.clone();
            t.data_mut()[i] += step;
            eval(&t)
        };
        let numeric = (at(-2.0 * h)? - 8.0 * at(-h)? + 8.0 * at(h)? - at(2.0 * h)?) / (12.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    Ok(worst)
}
