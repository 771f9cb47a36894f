//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Leaves are either constants (`input`) or differentiable (`param`); a node
//! needs a gradient iff one of its ancestors is a `param`, and `backward`
//! skips every other node. Freezing a component therefore amounts to binding
//! its tensors with `input` instead of `param`.

pub(crate) mod conv;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
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
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
        groups: usize,
    },
    Upsample2x(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Silu(Var),
    Exp(Var),
    Square(Var),
    Reshape(Var),
    GlobalAvgPool(Var),
    ChannelScale(Var, Var),
    Gram(Var),
    LogSoftmax(Var),
    Softmax(Var),
    Sum(Var),
    SumRows(Var),
    Pick(Var, Vec<usize>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    tracked: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; `None` when `v` is not a tracked leaf
    /// or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("operands share a shape")
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, value: Tensor<T>, op: Op) -> Var {
        let tracked = self.nodes[x.0].tracked;
        self.push(value, op, tracked)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor<T>, op: Op) -> Var {
        let tracked = self.nodes[a.0].tracked || self.nodes[b.0].tracked;
        self.push(value, op, tracked)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.binary(a, b, v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.binary(a, b, v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let k: T = lit(c);
        let v = self.value(x).map(|e| e * k);
        self.unary(x, v, Op::Scale(x, c))
    }

    /// `x + c` elementwise.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let k: T = lit(c);
        let v = self.value(x).map(|e| e + k);
        self.unary(x, v, Op::Shift(x))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            out.data_mut(),
            n as isize,
            1,
        );
        Ok(self.binary(a, b, out, Op::MatMul(a, b)))
    }

    /// Adds `b[c]` along axis 1 of `x` (`[N, C]` or `[N, C, H, W]`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(b);
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::Shape(format!("add_bias: {sx:?} + {sb:?}")));
        }
        let c = sx[1];
        let inner: usize = sx[2..].iter().product();
        let mut v = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e = *e + bias[(i / inner) % c];
        }
        Ok(self.binary(x, b, v, Op::AddBias(x, b)))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize, groups: usize) -> Result<Var> {
        let v = conv::forward(self.value(x), self.value(w), stride, pad, groups)?;
        Ok(self.binary(
            x,
            w,
            v,
            Op::Conv2d {
                x,
                w,
                stride,
                pad,
                groups,
            },
        ))
    }

    /// Nearest-neighbour 2x spatial upsampling of `[N, C, H, W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::Shape(format!("upsample2x expects 4-d input, got {s:?}")));
        }
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); nc * 4 * h * w];
        for p in 0..nc {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(p * 2 * h + y) * 2 * w + xx] = src[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        let v = Tensor::from_vec(&[s[0], s[1], 2 * h, 2 * w], out)?;
        Ok(self.unary(x, v, Op::Upsample2x(x)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.max(T::zero()));
        self.unary(x, v, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s: T = lit(slope);
        let v = self.value(x).map(|e| if e > T::zero() { e } else { e * s });
        self.unary(x, v, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.unary(x, v, Op::Sigmoid(x))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e * sigmoid(e));
        self.unary(x, v, Op::Silu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.exp());
        self.unary(x, v, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e * e);
        self.unary(x, v, Op::Square(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.unary(x, v, Op::Reshape(x)))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::Shape(format!("global_avg_pool expects 4-d input, got {s:?}")));
        }
        let hw = s[2] * s[3];
        let inv: T = lit(1.0 / hw as f64);
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let v = Tensor::from_vec(&[s[0], s[1]], data)?;
        Ok(self.unary(x, v, Op::GlobalAvgPool(x)))
    }

    /// `x[n, c, :, :] * s[n, c]`.
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let ss = self.shape(s);
        if sx.len() != 4 || ss != [sx[0], sx[1]] {
            return Err(Error::Shape(format!("channel_scale: {sx:?} * {ss:?}")));
        }
        let hw = sx[2] * sx[3];
        let gate = self.value(s).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e = *e * gate[i / hw];
        }
        Ok(self.binary(x, s, v, Op::ChannelScale(x, s)))
    }

    /// Per-sample Gram matrix `[N, C, H, W] -> [N, C, C]`, normalised by `C*H*W`.
    pub fn gram(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s.contains(&0) {
            return Err(Error::Shape(format!("gram expects a non-empty 4-d input, got {s:?}")));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let norm: T = lit(1.0 / (c * hw) as f64);
        let mut out = Tensor::zeros(&[n, c, c]);
        for i in 0..n {
            let f = &self.value(x).data()[i * c * hw..][..c * hw];
            T::gemm(
                c,
                hw,
                c,
                norm,
                f,
                hw as isize,
                1,
                f,
                1,
                hw as isize,
                T::zero(),
                &mut out.data_mut()[i * c * c..][..c * c],
                c as isize,
                1,
            );
        }
        Ok(self.unary(x, out, Op::Gram(x)))
    }

    /// Row-wise log-softmax of `[N, K]`.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(Error::Shape(format!("log_softmax expects [N, K], got {s:?}")));
        }
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(s[1]) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&e| (e - m).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|e| *e = *e - lse);
        }
        Ok(self.unary(x, v, Op::LogSoftmax(x)))
    }

    /// Row-wise softmax of `[N, K]`.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(Error::Shape(format!("softmax expects [N, K], got {s:?}")));
        }
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(s[1]) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            row.iter_mut().for_each(|e| *e = (*e - m).exp());
            let z: T = row.iter().copied().sum();
            row.iter_mut().for_each(|e| *e = *e / z);
        }
        Ok(self.unary(x, v, Op::Softmax(x)))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.unary(x, Tensor::scalar(total), Op::Sum(x))
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Per-sample sum `[N, ...] -> [N]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.batch();
        let data = (0..n).map(|i| t.row(i).iter().copied().sum()).collect();
        let v = Tensor::from_vec(&[n], data).expect("one sum per row");
        self.unary(x, v, Op::SumRows(x))
    }

    /// `x[n, idx[n]]` for a `[N, K]` input.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != idx.len() {
            return Err(Error::Shape(format!("pick: {s:?} with {} indices", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= s[1]) {
            return Err(Error::Invalid(format!("index {bad} out of range for {} columns", s[1])));
        }
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &i)| self.value(x).data()[r * s[1] + i])
            .collect();
        let v = Tensor::from_vec(&[s[0]], data)?;
        Ok(self.unary(x, v, Op::Pick(x, idx.to_vec())))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].tracked {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g.clone());
                }
                if self.wants(*b) {
                    add_into(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g.clone());
                }
                if self.wants(*b) {
                    add_into(&mut grads[b.0], g.map(|e| -e));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], zip_map(g, val(*b), |p, q| p * q));
                }
                if self.wants(*b) {
                    add_into(&mut grads[b.0], zip_map(g, val(*a), |p, q| p * q));
                }
            }
            Op::Scale(x, c) => {
                let k: T = lit(*c);
                add_into(&mut grads[x.0], g.map(|e| e * k));
            }
            Op::Shift(x) | Op::Reshape(x) => {
                let gx = g.clone().reshape(val(*x).shape())?;
                add_into(&mut grads[x.0], gx);
            }
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                if self.wants(*a) {
                    // g [m,n] * b^T [n,k]
                    let mut ga = Tensor::zeros(&[m, k]);
                    T::gemm(m, n, k, T::one(), g.data(), n as isize, 1, val(*b).data(), 1, n as isize, T::zero(), ga.data_mut(), k as isize, 1);
                    add_into(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    // a^T [k,m] * g [m,n]
                    let mut gb = Tensor::zeros(&[k, n]);
                    T::gemm(k, m, n, T::one(), val(*a).data(), 1, k as isize, g.data(), n as isize, 1, T::zero(), gb.data_mut(), n as isize, 1);
                    add_into(&mut grads[b.0], gb);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    add_into(&mut grads[x.0], g.clone());
                }
                if self.wants(*b) {
                    let s = val(*x).shape();
                    let c = s[1];
                    let inner: usize = s[2..].iter().product();
                    let mut gb = Tensor::zeros(&[c]);
                    for (i, &e) in g.data().iter().enumerate() {
                        let j = (i / inner) % c;
                        gb.data_mut()[j] = gb.data()[j] + e;
                    }
                    add_into(&mut grads[b.0], gb);
                }
            }
            Op::Conv2d {
                x,
                w,
                stride,
                pad,
                groups,
            } => {
                let (dx, dw) = conv::backward(
                    val(*x),
                    val(*w),
                    g,
                    *stride,
                    *pad,
                    *groups,
                    self.wants(*x),
                    self.wants(*w),
                )?;
                if let Some(dx) = dx {
                    add_into(&mut grads[x.0], dx);
                }
                if let Some(dw) = dw {
                    add_into(&mut grads[w.0], dw);
                }
            }
            Op::Upsample2x(x) => {
                let s = val(*x).shape().to_vec();
                let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
                let mut gx = Tensor::zeros(&s);
                let gd = g.data();
                let out = gx.data_mut();
                for p in 0..nc {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            let j = (p * h + y / 2) * w + xx / 2;
                            out[j] = out[j] + gd[(p * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
                add_into(&mut grads[x.0], gx);
            }
            Op::Relu(x) => {
                let gx = zip_map(g, val(*x), |e, xi| if xi > T::zero() { e } else { T::zero() });
                add_into(&mut grads[x.0], gx);
            }
            Op::LeakyRelu(x, slope) => {
                let s: T = lit(*slope);
                let gx = zip_map(g, val(*x), |e, xi| if xi > T::zero() { e } else { e * s });
                add_into(&mut grads[x.0], gx);
            }
            Op::Sigmoid(x) => {
                let gx = zip_map(g, &node.value, |e, y| e * y * (T::one() - y));
                add_into(&mut grads[x.0], gx);
            }
            Op::Silu(x) => {
                let gx = zip_map(g, val(*x), |e, xi| {
                    let s = sigmoid(xi);
                    e * s * (T::one() + xi * (T::one() - s))
                });
                add_into(&mut grads[x.0], gx);
            }
            Op::Exp(x) => {
                let gx = zip_map(g, &node.value, |e, y| e * y);
                add_into(&mut grads[x.0], gx);
            }
            Op::Square(x) => {
                let two: T = lit(2.0);
                let gx = zip_map(g, val(*x), |e, xi| e * two * xi);
                add_into(&mut grads[x.0], gx);
            }
            Op::GlobalAvgPool(x) => {
                let s = val(*x).shape().to_vec();
                let hw = s[2] * s[3];
                let inv: T = lit(1.0 / hw as f64);
                let data = (0..s.iter().product::<usize>())
                    .map(|i| g.data()[i / hw] * inv)
                    .collect();
                add_into(&mut grads[x.0], Tensor::from_vec(&s, data)?);
            }
            Op::ChannelScale(x, sv) => {
                let shape = val(*x).shape().to_vec();
                let hw = shape[2] * shape[3];
                if self.wants(*x) {
                    let gate = val(*sv).data();
                    let data = g.data().iter().enumerate().map(|(i, &e)| e * gate[i / hw]).collect();
                    add_into(&mut grads[x.0], Tensor::from_vec(&shape, data)?);
                }
                if self.wants(*sv) {
                    let xd = val(*x).data();
                    let data = g
                        .data()
                        .chunks(hw)
                        .zip(xd.chunks(hw))
                        .map(|(gc, xc)| gc.iter().zip(xc).map(|(&p, &q)| p * q).sum())
                        .collect();
                    add_into(&mut grads[sv.0], Tensor::from_vec(&[shape[0], shape[1]], data)?);
                }
            }
            Op::Gram(x) => {
                let s = val(*x).shape().to_vec();
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let norm: T = lit(1.0 / (c * hw) as f64);
                let mut gx = Tensor::zeros(&s);
                let mut sym = vec![T::zero(); c * c];
                for i in 0..n {
                    let gi = &g.data()[i * c * c..][..c * c];
                    for r in 0..c {
                        for q in 0..c {
                            sym[r * c + q] = gi[r * c + q] + gi[q * c + r];
                        }
                    }
                    let f = &val(*x).data()[i * c * hw..][..c * hw];
                    T::gemm(
                        c,
                        c,
                        hw,
                        norm,
                        &sym,
                        c as isize,
                        1,
                        f,
                        hw as isize,
                        1,
                        T::zero(),
                        &mut gx.data_mut()[i * c * hw..][..c * hw],
                        hw as isize,
                        1,
                    );
                }
                add_into(&mut grads[x.0], gx);
            }
            Op::LogSoftmax(x) => {
                let k = val(*x).shape()[1];
                let mut gx = g.clone();
                for (row, y) in gx.data_mut().chunks_mut(k).zip(node.value.data().chunks(k)) {
                    let total: T = row.iter().copied().sum();
                    for (e, &yi) in row.iter_mut().zip(y) {
                        *e = *e - yi.exp() * total;
                    }
                }
                add_into(&mut grads[x.0], gx);
            }
            Op::Softmax(x) => {
                let k = val(*x).shape()[1];
                let mut gx = g.clone();
                for (row, y) in gx.data_mut().chunks_mut(k).zip(node.value.data().chunks(k)) {
                    let dot: T = row.iter().zip(y).map(|(&p, &q)| p * q).sum();
                    for (e, &yi) in row.iter_mut().zip(y) {
                        *e = yi * (*e - dot);
                    }
                }
                add_into(&mut grads[x.0], gx);
            }
            Op::Sum(x) => {
                add_into(&mut grads[x.0], Tensor::full(val(*x).shape(), g.data()[0]));
            }
            Op::SumRows(x) => {
                let t = val(*x);
                let inner = t.row_len();
                let data = (0..t.len()).map(|i| g.data()[i / inner]).collect();
                add_into(&mut grads[x.0], Tensor::from_vec(t.shape(), data)?);
            }
            Op::Pick(x, idx) => {
                let s = val(*x).shape();
                let mut gx = Tensor::zeros(s);
                for (r, &i) in idx.iter().enumerate() {
                    gx.data_mut()[r * s[1] + i] = g.data()[r];
                }
                add_into(&mut grads[x.0], gx);
            }
        }
        Ok(())
    }
}
