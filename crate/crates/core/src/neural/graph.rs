//! Define-by-run autodiff. Every node is evaluated eagerly when pushed, and
//! backward rules are themselves recorded as graph ops, so gradients can be
//! differentiated again (needed by the gradient penalty).

use std::rc::Rc;

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

use super::kernels::{self, ConvGeom};
use super::tensor::{numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sqrt(Var),
    Recip(Var),
    Sum(Var),
    Broadcast(Var),
    ReduceTo(Var),
    Reshape(Var),
    Conv(Var, Var, ConvGeom),
    ConvData(Var, Var, ConvGeom),
    ConvWeight(Var, Var, ConvGeom),
    Gather(Var, Rc<Vec<usize>>),
    Scatter(Var, Rc<Vec<usize>>),
    Slice(Var, usize),
    Embed(Var, usize),
    Concat(Var, Var),
    Laplacian(Var, bool),
    MatMul(Var, Var, bool, bool),
}

struct Node<T> {
    op: Op,
    value: Tensor<T>,
}

/// Tape of eagerly evaluated nodes.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    relu_masks: Vec<bool>,
    relu_margin: f64,
    pool_choices: Vec<usize>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), relu_masks: Vec::new(), relu_margin: f64::INFINITY, pool_choices: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value.data[0]
    }

    /// Every ReLU activation pattern seen so far, in evaluation order.
    pub fn relu_masks(&self) -> &[bool] {
        &self.relu_masks
    }

    /// Argmax choices of every max pool so far.
    pub fn pool_choices(&self) -> &[usize] {
        &self.pool_choices
    }

    /// Smallest absolute ReLU pre-activation seen so far.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that gradients will be taken with respect to.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t)
    }

    /// A leaf treated as data. Gradients only flow to the nodes passed to
    /// [`Graph::grad`], so this differs from [`Graph::leaf`] in intent only.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Copies the value of `v` into a new constant.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!("operand shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        Tensor { shape: x.shape.clone(), data: x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect(), grad: None }
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let x = self.value(a);
        Tensor { shape: x.shape.clone(), data: x.data.iter().map(|p| f(*p)).collect(), grad: None }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let t = self.zip(a, b, |p, q| p + q);
        Ok(self.push(Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let t = self.zip(a, b, |p, q| p - q);
        Ok(self.push(Op::Sub(a, b), t))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let t = self.zip(a, b, |p, q| p * q);
        Ok(self.push(Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = T::from_f64(c);
        let t = self.map(a, |p| p * k);
        self.push(Op::Scale(a, c), t)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let t = self.map(a, |p| p.sqrt());
        self.push(Op::Sqrt(a), t)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let t = self.map(a, |p| T::ONE / p);
        self.push(Op::Recip(a), t)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same operand")
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data.iter().copied().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = kernels::broadcast(self.value(a), shape)?;
        Ok(self.push(Op::Broadcast(a), t))
    }

    pub fn reduce_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = kernels::reduce_to(self.value(a), shape)?;
        Ok(self.push(Op::ReduceTo(a), t))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).len() {
            return dim_err(format!("cannot reshape {:?} to {:?}", self.shape(a), shape));
        }
        let t = Tensor { shape: shape.to_vec(), data: self.value(a).data.clone(), grad: None };
        Ok(self.push(Op::Reshape(a), t))
    }

    pub fn conv(&mut self, x: Var, w: Var, g: ConvGeom) -> Result<Var> {
        let t = kernels::conv_forward(self.value(x), self.value(w), g)?;
        Ok(self.push(Op::Conv(x, w, g), t))
    }

    /// Transposed convolution of `gy` to an input of spatial size `spatial`.
    pub fn conv_data(&mut self, gy: Var, w: Var, g: ConvGeom, spatial: [usize; 3]) -> Result<Var> {
        let t = kernels::conv_backward_data(self.value(gy), self.value(w), g, spatial)?;
        Ok(self.push(Op::ConvData(gy, w, g), t))
    }

    pub fn conv_weight(&mut self, x: Var, gy: Var, g: ConvGeom, kernel: [usize; 3]) -> Result<Var> {
        let t = kernels::conv_backward_weight(self.value(x), self.value(gy), g, kernel)?;
        Ok(self.push(Op::ConvWeight(x, gy, g), t))
    }

    /// `out[j] = a.flat[idx[j]]`, reshaped to `shape`.
    pub fn gather(&mut self, a: Var, idx: Rc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let src = self.value(a);
        if numel(shape) != idx.len() || idx.iter().any(|&i| i >= src.len()) {
            return dim_err("gather indices do not fit");
        }
        let t = Tensor { shape: shape.to_vec(), data: idx.iter().map(|&i| src.data[i]).collect(), grad: None };
        Ok(self.push(Op::Gather(a, idx), t))
    }

    /// Adjoint of [`Graph::gather`]: accumulates `a[j]` into `out.flat[idx[j]]`.
    pub fn scatter(&mut self, a: Var, idx: Rc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let n = numel(shape);
        if src.len() != idx.len() || idx.iter().any(|&i| i >= n) {
            return dim_err("scatter indices do not fit");
        }
        let mut out = vec![T::ZERO; n];
        for (v, &i) in src.data.iter().zip(idx.iter()) {
            out[i] += *v;
        }
        let t = Tensor { shape: shape.to_vec(), data: out, grad: None };
        Ok(self.push(Op::Scatter(a, idx), t))
    }

    pub fn channel_slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = kernels::channel_slice(self.value(a), start, len)?;
        Ok(self.push(Op::Slice(a, start), t))
    }

    pub fn channel_embed(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        let t = kernels::channel_embed(self.value(a), start, total)?;
        Ok(self.push(Op::Embed(a, start), t))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = kernels::channel_concat(self.value(a), self.value(b))?;
        Ok(self.push(Op::Concat(a, b), t))
    }

    pub fn laplacian(&mut self, a: Var, transpose: bool) -> Result<Var> {
        let t = kernels::laplacian(self.value(a), transpose)?;
        Ok(self.push(Op::Laplacian(a, transpose), t))
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let t = kernels::matmul(self.value(a), self.value(b), ta, tb)?;
        Ok(self.push(Op::MatMul(a, b, ta, tb), t))
    }

    /// ReLU as a product with its constant activation mask.
    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut margin = self.relu_margin;
        let mut mask = Vec::with_capacity(x.len());
        for v in &x.data {
            margin = margin.min(v.to_f64().abs());
            mask.push(*v > T::ZERO);
        }
        let m = Tensor {
            shape: x.shape.clone(),
            data: mask.iter().map(|&b| if b { T::ONE } else { T::ZERO }).collect(),
            grad: None,
        };
        self.relu_margin = margin;
        self.relu_masks.extend(mask);
        let m = self.constant(m);
        self.mul(a, m).expect("mask matches")
    }

    /// Max pooling with window = stride = `win`, as a gather of the maxima.
    pub fn max_pool(&mut self, a: Var, win: [usize; 3]) -> Result<Var> {
        let (t, idx) = kernels::max_pool(self.value(a), win)?;
        self.pool_choices.extend_from_slice(&idx);
        self.gather(a, Rc::new(idx), &t.shape)
    }

    /// Gradients of scalar `y` with respect to `wrt`. The returned nodes are
    /// part of the graph and can be differentiated again. Inputs that `y`
    /// does not depend on get a zero gradient.
    pub fn grad(&mut self, y: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.value(y).len() != 1 {
            return dim_err("gradient root must be a scalar");
        }
        let top = y.0;
        // Only nodes on a path from some `wrt` to `y` carry gradient.
        let mut reach = vec![false; top + 1];
        for w in wrt {
            if w.0 <= top {
                reach[w.0] = true;
            }
        }
        for i in 0..=top {
            if reach[i] {
                continue;
            }
            reach[i] = inputs(&self.nodes[i].op).iter().any(|v| reach[v.0]);
        }
        let mut grads: Vec<Option<Var>> = vec![None; top + 1];
        let seed = Tensor::full(&self.value(y).shape.clone(), T::ONE);
        grads[top] = Some(self.constant(seed));
        for i in (0..=top).rev() {
            let Some(g) = grads[i] else { continue };
            if !reach[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (input, gi) in self.backward(&op, Var(i), g, &reach)? {
                if input.0 > top || !reach[input.0] {
                    continue;
                }
                grads[input.0] = Some(match grads[input.0] {
                    Some(prev) => self.add(prev, gi)?,
                    None => gi,
                });
            }
        }
        let mut out = Vec::with_capacity(wrt.len());
        for w in wrt {
            out.push(match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let z = Tensor::zeros(&self.value(*w).shape.clone());
                    self.constant(z)
                }
            });
        }
        Ok(out)
    }

    fn backward(&mut self, op: &Op, out: Var, g: Var, reach: &[bool]) -> Result<Vec<(Var, Var)>> {
        let mut r = Vec::with_capacity(2);
        let want = |v: Var| reach.get(v.0).copied().unwrap_or(false);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                r.push((a, g));
                r.push((b, g));
            }
            Op::Sub(a, b) => {
                r.push((a, g));
                let n = self.scale(g, -1.0);
                r.push((b, n));
            }
            Op::Mul(a, b) => {
                if want(a) {
                    let ga = self.mul(g, b)?;
                    r.push((a, ga));
                }
                if want(b) {
                    let gb = self.mul(g, a)?;
                    r.push((b, gb));
                }
            }
            Op::Scale(a, c) => r.push((a, self.scale(g, c))),
            Op::Sqrt(a) => {
                // d sqrt(a) = 1 / (2 sqrt(a))
                let inv = self.recip(out);
                let half = self.scale(inv, 0.5);
                r.push((a, self.mul(g, half)?));
            }
            Op::Recip(a) => {
                // d (1/a) = -(1/a)^2
                let sq = self.square(out);
                let neg = self.scale(sq, -1.0);
                r.push((a, self.mul(g, neg)?));
            }
            Op::Sum(a) => {
                let shape = self.shape(a).to_vec();
                let ones = vec![1; shape.len()];
                let g1 = self.reshape(g, &ones)?;
                r.push((a, self.broadcast(g1, &shape)?));
            }
            Op::Broadcast(a) => {
                let shape = self.shape(a).to_vec();
                r.push((a, self.reduce_to(g, &shape)?));
            }
            Op::ReduceTo(a) => {
                let shape = self.shape(a).to_vec();
                r.push((a, self.broadcast(g, &shape)?));
            }
            Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                r.push((a, self.reshape(g, &shape)?));
            }
            Op::Conv(x, w, geom) => {
                if want(x) {
                    let s = spatial(self.shape(x));
                    r.push((x, self.conv_data(g, w, geom, s)?));
                }
                if want(w) {
                    let k = spatial(self.shape(w));
                    r.push((w, self.conv_weight(x, g, geom, k)?));
                }
            }
            Op::ConvData(gy, w, geom) => {
                if want(gy) {
                    r.push((gy, self.conv(g, w, geom)?));
                }
                if want(w) {
                    let k = spatial(self.shape(w));
                    r.push((w, self.conv_weight(g, gy, geom, k)?));
                }
            }
            Op::ConvWeight(x, gy, geom) => {
                if want(x) {
                    let s = spatial(self.shape(x));
                    r.push((x, self.conv_data(gy, g, geom, s)?));
                }
                if want(gy) {
                    r.push((gy, self.conv(x, g, geom)?));
                }
            }
            Op::Gather(a, ref idx) => {
                let shape = self.shape(a).to_vec();
                r.push((a, self.scatter(g, idx.clone(), &shape)?));
            }
            Op::Scatter(a, ref idx) => {
                let shape = self.shape(a).to_vec();
                r.push((a, self.gather(g, idx.clone(), &shape)?));
            }
            Op::Slice(a, start) => {
                let total = self.shape(a)[1];
                r.push((a, self.channel_embed(g, start, total)?));
            }
            Op::Embed(a, start) => {
                let len = self.shape(a)[1];
                r.push((a, self.channel_slice(g, start, len)?));
            }
            Op::Concat(a, b) => {
                let (ca, cb) = (self.shape(a)[1], self.shape(b)[1]);
                if want(a) {
                    r.push((a, self.channel_slice(g, 0, ca)?));
                }
                if want(b) {
                    r.push((b, self.channel_slice(g, ca, cb)?));
                }
            }
            Op::Laplacian(a, t) => r.push((a, self.laplacian(g, !t)?)),
            Op::MatMul(a, b, ta, tb) => {
                if want(a) {
                    let ga = if ta { self.matmul(b, g, tb, true)? } else { self.matmul(g, b, false, !tb)? };
                    r.push((a, ga));
                }
                if want(b) {
                    let gb = if tb { self.matmul(g, a, true, ta)? } else { self.matmul(a, g, !ta, false)? };
                    r.push((b, gb));
                }
            }
        }
        Ok(r)
    }
}

fn spatial(shape: &[usize]) -> [usize; 3] {
    [shape[2], shape[3], shape[4]]
}

fn inputs(op: &Op) -> Vec<Var> {
    match *op {
        Op::Leaf => vec![],
        Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Conv(a, b, _)
        | Op::ConvData(a, b, _)
        | Op::ConvWeight(a, b, _)
        | Op::Concat(a, b)
        | Op::MatMul(a, b, _, _) => vec![a, b],
        Op::Scale(a, _)
        | Op::Sqrt(a)
        | Op::Recip(a)
        | Op::Sum(a)
        | Op::Broadcast(a)
        | Op::ReduceTo(a)
        | Op::Reshape(a)
        | Op::Gather(a, _)
        | Op::Scatter(a, _)
        | Op::Slice(a, _)
        | Op::Embed(a, _)
        | Op::Laplacian(a, _) => vec![a],
    }
}
