//! The operation set the codec's networks are written against.
//!
//! Networks are generic over [`Ops`]; [`Eval`] computes values eagerly and
//! drops intermediates, [`Graph`] records a tape for reverse-mode gradients.

use std::collections::HashMap;
use std::sync::Arc;

use super::conv::{conv2d, conv2d_backward, ConvSpec};
use super::kernels as k;
use super::layers::Conv2d;
use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Tensor;

pub trait Ops {
    type T: Clone;

    fn constant(&mut self, t: Tensor) -> Self::T;
    fn value<'a>(&'a self, t: &'a Self::T) -> &'a Tensor;
    fn param(&mut self, id: ParamId) -> Self::T;

    fn conv(&mut self, x: &Self::T, layer: &Conv2d) -> Self::T;
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    /// Multiply every element by a one-element tensor.
    fn mul_scalar(&mut self, a: &Self::T, s: &Self::T) -> Self::T;
    fn scale(&mut self, a: &Self::T, s: f64) -> Self::T;
    fn mul_const(&mut self, a: &Self::T, c: &Tensor) -> Self::T;
    fn leaky_relu(&mut self, a: &Self::T, slope: f64) -> Self::T;
    fn sigmoid(&mut self, a: &Self::T) -> Self::T;
    fn tanh(&mut self, a: &Self::T) -> Self::T;
    fn exp(&mut self, a: &Self::T) -> Self::T;
    fn clamp(&mut self, a: &Self::T, lo: f64, hi: f64) -> Self::T;
    fn concat(&mut self, xs: &[&Self::T]) -> Self::T;
    fn slice_channels(&mut self, a: &Self::T, start: usize, len: usize) -> Self::T;
    fn pad_sym(&mut self, a: &Self::T, p: usize) -> Self::T;
    fn upsample2x(&mut self, a: &Self::T) -> Self::T;
    fn split_cols(&mut self, a: &Self::T, parity: usize) -> Self::T;
    fn interleave_cols(&mut self, even: &Self::T, odd: &Self::T) -> Self::T;
    fn transpose(&mut self, a: &Self::T) -> Self::T;
    fn shift_cols(&mut self, a: &Self::T, offset: isize) -> Self::T;
    /// Round half away from zero; straight-through (identity) gradient.
    fn round(&mut self, a: &Self::T) -> Self::T;
    /// Elementwise `-log2` of the Laplace bin probability of `x` under `(mu, sigma)`.
    fn laplace_bits(&mut self, x: &Self::T, mu: &Self::T, sigma: &Self::T) -> Self::T;
    /// Sum of all elements as a one-element tensor.
    fn sum(&mut self, a: &Self::T) -> Self::T;
}

/// Eager evaluation without gradient bookkeeping.
pub struct Eval<'p> {
    params: &'p ParamStore,
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params }
    }
}

fn expect_same(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl Ops for Eval<'_> {
    type T = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }
    fn value<'a>(&'a self, t: &'a Tensor) -> &'a Tensor {
        t
    }
    fn param(&mut self, id: ParamId) -> Tensor {
        self.params.get(id).clone()
    }
    fn conv(&mut self, x: &Tensor, layer: &Conv2d) -> Tensor {
        let w = self.params.get(layer.weight);
        let b = layer.bias.map(|id| self.params.get(id));
        conv2d(x, &layer.spec, w, b, layer.mask.as_deref().map(|m| m.as_slice())).expect("conv shapes")
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        expect_same(a, b, "add");
        a.zip_map(b, |x, y| x + y)
    }
    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        expect_same(a, b, "sub");
        a.zip_map(b, |x, y| x - y)
    }
    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        expect_same(a, b, "mul");
        a.zip_map(b, |x, y| x * y)
    }
    fn mul_scalar(&mut self, a: &Tensor, s: &Tensor) -> Tensor {
        let s = s.data()[0];
        a.map(|x| x * s)
    }
    fn scale(&mut self, a: &Tensor, s: f64) -> Tensor {
        a.map(|x| x * s)
    }
    fn mul_const(&mut self, a: &Tensor, c: &Tensor) -> Tensor {
        expect_same(a, c, "mul_const");
        a.zip_map(c, |x, y| x * y)
    }
    fn leaky_relu(&mut self, a: &Tensor, slope: f64) -> Tensor {
        a.map(|x| k::leaky(x, slope))
    }
    fn sigmoid(&mut self, a: &Tensor) -> Tensor {
        a.map(k::sigmoid)
    }
    fn tanh(&mut self, a: &Tensor) -> Tensor {
        a.map(f64::tanh)
    }
    fn exp(&mut self, a: &Tensor) -> Tensor {
        a.map(f64::exp)
    }
    fn clamp(&mut self, a: &Tensor, lo: f64, hi: f64) -> Tensor {
        a.map(|x| x.clamp(lo, hi))
    }
    fn concat(&mut self, xs: &[&Tensor]) -> Tensor {
        k::concat_channels(xs)
    }
    fn slice_channels(&mut self, a: &Tensor, start: usize, len: usize) -> Tensor {
        k::slice_channels(a, start, len)
    }
    fn pad_sym(&mut self, a: &Tensor, p: usize) -> Tensor {
        k::pad_sym(a, p)
    }
    fn upsample2x(&mut self, a: &Tensor) -> Tensor {
        k::upsample2x(a)
    }
    fn split_cols(&mut self, a: &Tensor, parity: usize) -> Tensor {
        k::split_cols(a, parity)
    }
    fn interleave_cols(&mut self, even: &Tensor, odd: &Tensor) -> Tensor {
        k::interleave_cols(even, odd)
    }
    fn transpose(&mut self, a: &Tensor) -> Tensor {
        k::transpose(a)
    }
    fn shift_cols(&mut self, a: &Tensor, offset: isize) -> Tensor {
        k::shift_cols(a, offset)
    }
    fn round(&mut self, a: &Tensor) -> Tensor {
        a.map(k::round_half_away)
    }
    fn laplace_bits(&mut self, x: &Tensor, mu: &Tensor, sigma: &Tensor) -> Tensor {
        expect_same(x, mu, "laplace_bits");
        expect_same(x, sigma, "laplace_bits");
        let data = x
            .data()
            .iter()
            .zip(mu.data())
            .zip(sigma.data())
            .map(|((&v, &m), &s)| k::laplace_bits(v, m, s))
            .collect();
        Tensor::from_vec(x.shape(), data).expect("same shape")
    }
    fn sum(&mut self, a: &Tensor) -> Tensor {
        Tensor::scalar(a.sum())
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
        mask: Option<Arc<Vec<bool>>>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    PadSym(Var, usize),
    Upsample(Var),
    SplitCols(Var, usize),
    Interleave(Var, Var),
    Transpose(Var),
    ShiftCols(Var, isize),
    Round(Var),
    LaplaceBits(Var, Var, Var),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode tape over the [`Ops`] set.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Backpropagate from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.val(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param => grads[i] = Some(g),
                Op::Conv { x, w, b, spec, mask } => {
                    let cg = conv2d_backward(
                        self.val(*x),
                        spec,
                        self.val(*w),
                        mask.as_deref().map(|m| m.as_slice()),
                        &g,
                        true,
                    )
                    .expect("conv backward shapes");
                    if let Some(gi) = cg.input {
                        acc(&mut grads, *x, gi);
                    }
                    acc(&mut grads, *w, cg.weight);
                    if let Some(b) = b {
                        let bt = cg.bias.reshape(self.val(*b).shape()).expect("bias shape");
                        acc(&mut grads, *b, bt);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.val(*b), |x, y| x * y);
                    let gb = g.zip_map(self.val(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulScalar(a, s) => {
                    let sv = self.val(*s).data()[0];
                    let gs: f64 = g.data().iter().zip(self.val(*a).data()).map(|(x, y)| x * y).sum();
                    acc(&mut grads, *a, g.map(|v| v * sv));
                    acc(&mut grads, *s, Tensor::scalar(gs).reshape(self.val(*s).shape()).unwrap());
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|v| v * s)),
                Op::MulConst(a, c) => acc(&mut grads, *a, g.zip_map(c, |x, y| x * y)),
                Op::LeakyRelu(a, slope) => {
                    let ga = g.zip_map(self.val(*a), |gv, x| if x >= 0.0 { gv } else { gv * slope });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y));
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(&node.value, |gv, y| gv * y)),
                Op::Clamp(a, lo, hi) => {
                    let ga = g.zip_map(self.val(*a), |gv, x| if x >= *lo && x <= *hi { gv } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Concat(xs) => {
                    let mut start = 0;
                    for x in xs {
                        let c = self.val(*x).c();
                        acc(&mut grads, *x, k::slice_channels(&g, start, c));
                        start += c;
                    }
                }
                Op::Slice(a, start) => {
                    let src = self.val(*a);
                    let mut ga = Tensor::zeros(src.shape());
                    for b in 0..g.n() {
                        for ch in 0..g.c() {
                            ga.plane_mut(b, start + ch).copy_from_slice(g.plane(b, ch));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::PadSym(a, p) => {
                    let ga = k::pad_sym_backward(&g, *p, self.val(*a).shape());
                    acc(&mut grads, *a, ga);
                }
                Op::Upsample(a) => acc(&mut grads, *a, k::upsample2x_backward(&g)),
                Op::SplitCols(a, parity) => {
                    let zeros = Tensor::zeros(g.shape());
                    let ga = if *parity == 0 {
                        k::interleave_cols(&g, &zeros)
                    } else {
                        k::interleave_cols(&zeros, &g)
                    };
                    acc(&mut grads, *a, ga);
                }
                Op::Interleave(e, o) => {
                    acc(&mut grads, *e, k::split_cols(&g, 0));
                    acc(&mut grads, *o, k::split_cols(&g, 1));
                }
                Op::Transpose(a) => acc(&mut grads, *a, k::transpose(&g)),
                Op::ShiftCols(a, off) => acc(&mut grads, *a, k::shift_cols_backward(&g, *off)),
                Op::Round(a) => acc(&mut grads, *a, g),
                Op::LaplaceBits(x, mu, s) => {
                    let (xv, mv, sv) = (self.val(*x), self.val(*mu), self.val(*s));
                    let shape = xv.shape();
                    let mut gx = Vec::with_capacity(xv.len());
                    let mut gm = Vec::with_capacity(xv.len());
                    let mut gs = Vec::with_capacity(xv.len());
                    for i in 0..xv.len() {
                        let (dv, dm, ds) = k::laplace_bits_grad(xv.data()[i], mv.data()[i], sv.data()[i]);
                        let gi = g.data()[i];
                        gx.push(gi * dv);
                        gm.push(gi * dm);
                        gs.push(gi * ds);
                    }
                    acc(&mut grads, *x, Tensor::from_vec(shape, gx).unwrap());
                    acc(&mut grads, *mu, Tensor::from_vec(shape, gm).unwrap());
                    acc(&mut grads, *s, Tensor::from_vec(shape, gs).unwrap());
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    acc(&mut grads, *a, Tensor::full(self.val(*a).shape(), gv));
                }
            }
        }

        let mut params = Grads::empty(self.params.len());
        for (&pid, &var) in &self.param_nodes {
            if let Some(g) = &grads[var.0] {
                params.accumulate(pid, g);
            }
        }
        Gradients { nodes: grads, params }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Grads,
}

impl Gradients {
    /// Gradient with respect to a constant or parameter; intermediate
    /// gradients are dropped during the backward sweep.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> &Grads {
        &self.params
    }

    pub fn into_params(self) -> Grads {
        self.params
    }
}

impl Ops for Graph<'_> {
    type T = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }
    fn value<'a>(&'a self, t: &'a Var) -> &'a Tensor {
        self.val(*t)
    }
    fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param);
        self.param_nodes.insert(id, v);
        v
    }
    fn conv(&mut self, x: &Var, layer: &Conv2d) -> Var {
        let w = self.param(layer.weight);
        let b = layer.bias.map(|id| self.param(id));
        let out = conv2d(
            self.val(*x),
            &layer.spec,
            self.val(w),
            b.map(|b| self.val(b)),
            layer.mask.as_deref().map(|m| m.as_slice()),
        )
        .expect("conv shapes");
        self.push(
            out,
            Op::Conv {
                x: *x,
                w,
                b,
                spec: layer.spec,
                mask: layer.mask.clone(),
            },
        )
    }
    fn add(&mut self, a: &Var, b: &Var) -> Var {
        expect_same(self.val(*a), self.val(*b), "add");
        let v = self.val(*a).zip_map(self.val(*b), |x, y| x + y);
        self.push(v, Op::Add(*a, *b))
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        expect_same(self.val(*a), self.val(*b), "sub");
        let v = self.val(*a).zip_map(self.val(*b), |x, y| x - y);
        self.push(v, Op::Sub(*a, *b))
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        expect_same(self.val(*a), self.val(*b), "mul");
        let v = self.val(*a).zip_map(self.val(*b), |x, y| x * y);
        self.push(v, Op::Mul(*a, *b))
    }
    fn mul_scalar(&mut self, a: &Var, s: &Var) -> Var {
        assert_eq!(self.val(*s).len(), 1, "mul_scalar needs a one-element tensor");
        let sv = self.val(*s).data()[0];
        let v = self.val(*a).map(|x| x * sv);
        self.push(v, Op::MulScalar(*a, *s))
    }
    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let v = self.val(*a).map(|x| x * s);
        self.push(v, Op::Scale(*a, s))
    }
    fn mul_const(&mut self, a: &Var, c: &Tensor) -> Var {
        expect_same(self.val(*a), c, "mul_const");
        let v = self.val(*a).zip_map(c, |x, y| x * y);
        self.push(v, Op::MulConst(*a, c.clone()))
    }
    fn leaky_relu(&mut self, a: &Var, slope: f64) -> Var {
        let v = self.val(*a).map(|x| k::leaky(x, slope));
        self.push(v, Op::LeakyRelu(*a, slope))
    }
    fn sigmoid(&mut self, a: &Var) -> Var {
        let v = self.val(*a).map(k::sigmoid);
        self.push(v, Op::Sigmoid(*a))
    }
    fn tanh(&mut self, a: &Var) -> Var {
        let v = self.val(*a).map(f64::tanh);
        self.push(v, Op::Tanh(*a))
    }
    fn exp(&mut self, a: &Var) -> Var {
        let v = self.val(*a).map(f64::exp);
        self.push(v, Op::Exp(*a))
    }
    fn clamp(&mut self, a: &Var, lo: f64, hi: f64) -> Var {
        let v = self.val(*a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(*a, lo, hi))
    }
    fn concat(&mut self, xs: &[&Var]) -> Var {
        let ts: Vec<&Tensor> = xs.iter().map(|v| self.val(**v)).collect();
        let v = k::concat_channels(&ts);
        self.push(v, Op::Concat(xs.iter().map(|v| **v).collect()))
    }
    fn slice_channels(&mut self, a: &Var, start: usize, len: usize) -> Var {
        let v = k::slice_channels(self.val(*a), start, len);
        self.push(v, Op::Slice(*a, start))
    }
    fn pad_sym(&mut self, a: &Var, p: usize) -> Var {
        let v = k::pad_sym(self.val(*a), p);
        self.push(v, Op::PadSym(*a, p))
    }
    fn upsample2x(&mut self, a: &Var) -> Var {
        let v = k::upsample2x(self.val(*a));
        self.push(v, Op::Upsample(*a))
    }
    fn split_cols(&mut self, a: &Var, parity: usize) -> Var {
        let v = k::split_cols(self.val(*a), parity);
        self.push(v, Op::SplitCols(*a, parity))
    }
    fn interleave_cols(&mut self, even: &Var, odd: &Var) -> Var {
        let v = k::interleave_cols(self.val(*even), self.val(*odd));
        self.push(v, Op::Interleave(*even, *odd))
    }
    fn transpose(&mut self, a: &Var) -> Var {
        let v = k::transpose(self.val(*a));
        self.push(v, Op::Transpose(*a))
    }
    fn shift_cols(&mut self, a: &Var, offset: isize) -> Var {
        let v = k::shift_cols(self.val(*a), offset);
        self.push(v, Op::ShiftCols(*a, offset))
    }
    fn round(&mut self, a: &Var) -> Var {
        let v = self.val(*a).map(k::round_half_away);
        self.push(v, Op::Round(*a))
    }
    fn laplace_bits(&mut self, x: &Var, mu: &Var, sigma: &Var) -> Var {
        let v = Eval::new(self.params).laplace_bits(self.val(*x), self.val(*mu), self.val(*sigma));
        self.push(v, Op::LaplaceBits(*x, *mu, *sigma))
    }
    fn sum(&mut self, a: &Var) -> Var {
        let v = Tensor::scalar(self.val(*a).sum());
        self.push(v, Op::Sum(*a))
    }
}
