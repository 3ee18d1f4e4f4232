//! Tape-based reverse-mode differentiation.
//!
//! The graph is append-only, so node order is a topological order. Backward
//! rules are expressed with the same graph ops as the forward pass; the
//! gradient of a gradient is therefore available by calling [`Graph::grad`]
//! again on a node produced by an earlier call.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::kernels::{self, PlaneMap};
use super::tensor::{numel, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MaskKind<T> {
    Leaky(T),
    Clamp(T, T),
}

impl<T: Real> MaskKind<T> {
    fn factor(self, x: T) -> T {
        match self {
            MaskKind::Leaky(slope) => {
                if x >= T::zero() {
                    T::one()
                } else {
                    slope
                }
            }
            MaskKind::Clamp(lo, hi) => {
                if x >= lo && x <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(T),
    AddScalar(T),
    Powf(T),
    Exp,
    Log,
    Sigmoid,
    Softplus,
    LeakyRelu(T),
    Clamp(T, T),
    /// `g ⊙ m(x)` with `x` (second input) treated as non-differentiable.
    Mask(MaskKind<T>),
    BroadcastTo,
    SumTo,
    Reshape,
    MatMul { ta: bool, tb: bool },
    Conv { stride: usize },
    ConvInputGrad { stride: usize },
    ConvWeightGrad { stride: usize },
    PlaneGather(Arc<PlaneMap>),
    PlaneScatter(Arc<PlaneMap>),
    ChannelCycle,
    ChannelFold,
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<Var>,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(v: T) -> T {
    // log(1 + e^v) = max(v, 0) + log1p(e^{-|v|})
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: Vec<Var>) -> Var {
        self.nodes.push(Node { value, op, inputs });
        Var(self.nodes.len() - 1)
    }

    /// Input tensor or parameter. Whether it is differentiated is decided by
    /// the `wrt` list passed to [`Graph::grad`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, Vec::new())
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    /// Copy of `v`'s value with no gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op, vec![x])
    }

    fn common_shape(&self, a: Var, b: Var, op: &'static str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(Error::shape(op, sa, sb));
        }
        sa.iter()
            .zip(sb)
            .map(|(&x, &y)| match (x, y) {
                _ if x == y => Ok(x),
                (1, y) => Ok(y),
                (x, 1) => Ok(x),
                _ => Err(Error::shape(op, sa, sb)),
            })
            .collect()
    }

    fn broadcast_pair(&mut self, a: Var, b: Var, op: &'static str) -> Result<(Var, Var)> {
        let shape = self.common_shape(a, b, op)?;
        let a = if self.shape(a) == shape.as_slice() {
            a
        } else {
            self.broadcast_to(a, &shape)?
        };
        let b = if self.shape(b) == shape.as_slice() {
            b
        } else {
            self.broadcast_to(b, &shape)?
        };
        Ok((a, b))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (a, b) = self.broadcast_pair(a, b, name)?;
        let value = self.value(a).zip_map(self.value(b), f)?;
        Ok(self.push(value, op, vec![a, b]))
    }

    /// Elementwise sum with same-rank broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Scale(c), |v| v * c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::AddScalar(c), |v| v + c)
    }

    pub fn powf(&mut self, x: Var, p: T) -> Var {
        self.unary(x, Op::Powf(p), |v| v.powf(p))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp, |v| v.exp())
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log, |v| v.ln())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid, sigmoid)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus, softplus)
    }

    /// `max(x, slope·x)`.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let kind = MaskKind::Leaky(slope);
        self.unary(x, Op::LeakyRelu(slope), |v| v * kind.factor(v))
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, Op::Clamp(lo, hi), |v| v.max(lo).min(hi))
    }

    fn mask(&mut self, g: Var, x: Var, kind: MaskKind<T>) -> Result<Var> {
        let value = self
            .value(g)
            .zip_map(self.value(x), |gv, xv| gv * kind.factor(xv))?;
        Ok(self.push(value, Op::Mask(kind), vec![g, x]))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = kernels::broadcast_to(self.value(x), shape)?;
        Ok(self.push(value, Op::BroadcastTo, vec![x]))
    }

    pub fn sum_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = kernels::sum_to(self.value(x), shape)?;
        Ok(self.push(value, Op::SumTo, vec![x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape, vec![x]))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[1, n])?;
        let s = self.sum_to(flat, &[1, 1])?;
        self.reshape(s, &[1])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        Ok(self.scale(s, T::one() / T::of(n as f64)))
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b), ta, tb)?;
        Ok(self.push(value, Op::MatMul { ta, tb }, vec![a, b]))
    }

    /// Valid cross-correlation of `x [n,c,h,w]` with `w [o,c,kh,kw]`.
    pub fn conv2d_valid(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let value = kernels::conv2d_valid(self.value(x), self.value(w), stride)?;
        Ok(self.push(value, Op::Conv { stride }, vec![x, w]))
    }

    fn conv_input_grad(&mut self, gy: Var, w: Var, stride: usize, in_hw: (usize, usize)) -> Result<Var> {
        let value = kernels::conv2d_input_grad(self.value(gy), self.value(w), stride, in_hw)?;
        Ok(self.push(value, Op::ConvInputGrad { stride }, vec![gy, w]))
    }

    fn conv_weight_grad(&mut self, x: Var, gy: Var, stride: usize, kernel: (usize, usize)) -> Result<Var> {
        let value = kernels::conv2d_weight_grad(self.value(x), self.value(gy), stride, kernel)?;
        Ok(self.push(value, Op::ConvWeightGrad { stride }, vec![x, gy]))
    }

    pub fn plane_gather(&mut self, x: Var, map: Arc<PlaneMap>) -> Result<Var> {
        let value = map.gather(self.value(x))?;
        Ok(self.push(value, Op::PlaneGather(map), vec![x]))
    }

    pub fn plane_scatter(&mut self, x: Var, map: Arc<PlaneMap>) -> Result<Var> {
        let value = map.scatter(self.value(x))?;
        Ok(self.push(value, Op::PlaneScatter(map), vec![x]))
    }

    /// Route input channel `i mod B` to each of `out_channels` outputs.
    pub fn channel_cycle(&mut self, x: Var, out_channels: usize) -> Result<Var> {
        let value = kernels::channel_cycle(self.value(x), out_channels)?;
        Ok(self.push(value, Op::ChannelCycle, vec![x]))
    }

    fn channel_fold(&mut self, x: Var, in_channels: usize) -> Result<Var> {
        let value = kernels::channel_fold(self.value(x), in_channels)?;
        Ok(self.push(value, Op::ChannelFold, vec![x]))
    }

    /// Gradients of the single-element node `y` with respect to `wrt`.
    ///
    /// Returned gradients are graph nodes; they can be differentiated again.
    /// A `wrt` entry with no path from `y` receives a zero constant.
    pub fn grad(&mut self, y: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.value(y).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "grad needs a single-element output, got shape {:?}",
                self.shape(y)
            )));
        }
        let Some(lo) = wrt.iter().map(|v| v.0).min() else {
            return Ok(Vec::new());
        };
        let top = y.0;
        let mut relevant = vec![false; top + 1];
        for w in wrt {
            if w.0 <= top {
                relevant[w.0] = true;
            }
        }
        for i in lo..=top {
            if !relevant[i] {
                relevant[i] = self.nodes[i].inputs.iter().any(|v| v.0 >= lo && relevant[v.0]);
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; top + 1];
        if relevant[top] {
            let seed = Tensor::full(self.shape(y), T::one());
            grads[top] = Some(self.leaf(seed));
        }
        for i in (lo..=top).rev() {
            let Some(g) = grads[i] else { continue };
            if !relevant[i] {
                continue;
            }
            let inputs = self.nodes[i].inputs.clone();
            if inputs.iter().all(|v| v.0 < lo || !relevant[v.0]) {
                continue;
            }
            for (input, gi) in self.backward_node(i, g, &relevant, lo)? {
                grads[input.0] = Some(match grads[input.0] {
                    Some(acc) => self.add(acc, gi)?,
                    None => gi,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let zeros = Tensor::zeros(self.shape(*w));
                    self.leaf(zeros)
                }
            })
            .collect())
    }

    fn backward_node(&mut self, i: usize, g: Var, relevant: &[bool], lo: usize) -> Result<Vec<(Var, Var)>> {
        let op = self.nodes[i].op.clone();
        let inputs = self.nodes[i].inputs.clone();
        let want = |k: usize| inputs.get(k).is_some_and(|v| v.0 >= lo && relevant[v.0]);
        let y = Var(i);
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::Add => {
                for k in 0..2 {
                    if want(k) {
                        out.push((inputs[k], g));
                    }
                }
            }
            Op::Sub => {
                if want(0) {
                    out.push((inputs[0], g));
                }
                if want(1) {
                    out.push((inputs[1], self.neg(g)));
                }
            }
            Op::Mul => {
                if want(0) {
                    out.push((inputs[0], self.mul(g, inputs[1])?));
                }
                if want(1) {
                    out.push((inputs[1], self.mul(g, inputs[0])?));
                }
            }
            Op::Scale(c) => out.push((inputs[0], self.scale(g, c))),
            Op::AddScalar(_) => out.push((inputs[0], g)),
            Op::Powf(p) => {
                let x = inputs[0];
                let gx = if p == T::one() {
                    g
                } else if p == T::of(2.0) {
                    let two_x = self.scale(x, p);
                    self.mul(g, two_x)?
                } else {
                    let d = self.powf(x, p - T::one());
                    let d = self.scale(d, p);
                    self.mul(g, d)?
                };
                out.push((x, gx));
            }
            Op::Exp => out.push((inputs[0], self.mul(g, y)?)),
            Op::Log => {
                let inv = self.powf(inputs[0], -T::one());
                out.push((inputs[0], self.mul(g, inv)?));
            }
            Op::Sigmoid => {
                let neg = self.neg(y);
                let one_minus = self.add_scalar(neg, T::one());
                let d = self.mul(y, one_minus)?;
                out.push((inputs[0], self.mul(g, d)?));
            }
            Op::Softplus => {
                let s = self.sigmoid(inputs[0]);
                out.push((inputs[0], self.mul(g, s)?));
            }
            Op::LeakyRelu(slope) => out.push((inputs[0], self.mask(g, inputs[0], MaskKind::Leaky(slope))?)),
            Op::Clamp(lo_v, hi_v) => {
                out.push((inputs[0], self.mask(g, inputs[0], MaskKind::Clamp(lo_v, hi_v))?))
            }
            Op::Mask(kind) => {
                if want(0) {
                    out.push((inputs[0], self.mask(g, inputs[1], kind)?));
                }
            }
            Op::BroadcastTo => {
                let shape = self.shape(inputs[0]).to_vec();
                out.push((inputs[0], self.sum_to(g, &shape)?));
            }
            Op::SumTo => {
                let shape = self.shape(inputs[0]).to_vec();
                out.push((inputs[0], self.broadcast_to(g, &shape)?));
            }
            Op::Reshape => {
                let shape = self.shape(inputs[0]).to_vec();
                out.push((inputs[0], self.reshape(g, &shape)?));
            }
            Op::MatMul { ta, tb } => {
                let (a, b) = (inputs[0], inputs[1]);
                if want(0) {
                    let ga = if ta {
                        self.matmul(b, g, tb, true)?
                    } else {
                        self.matmul(g, b, false, !tb)?
                    };
                    out.push((a, ga));
                }
                if want(1) {
                    let gb = if tb {
                        self.matmul(g, a, true, ta)?
                    } else {
                        self.matmul(a, g, !ta, false)?
                    };
                    out.push((b, gb));
                }
            }
            Op::Conv { stride } => {
                let (x, w) = (inputs[0], inputs[1]);
                if want(0) {
                    let s = self.shape(x);
                    let hw = (s[2], s[3]);
                    out.push((x, self.conv_input_grad(g, w, stride, hw)?));
                }
                if want(1) {
                    let s = self.shape(w);
                    let k = (s[2], s[3]);
                    out.push((w, self.conv_weight_grad(x, g, stride, k)?));
                }
            }
            Op::ConvInputGrad { stride } => {
                let (gy, w) = (inputs[0], inputs[1]);
                if want(0) {
                    out.push((gy, self.conv2d_valid(g, w, stride)?));
                }
                if want(1) {
                    let s = self.shape(w);
                    let k = (s[2], s[3]);
                    out.push((w, self.conv_weight_grad(g, gy, stride, k)?));
                }
            }
            Op::ConvWeightGrad { stride } => {
                let (x, gy) = (inputs[0], inputs[1]);
                if want(0) {
                    let s = self.shape(x);
                    let hw = (s[2], s[3]);
                    out.push((x, self.conv_input_grad(gy, g, stride, hw)?));
                }
                if want(1) {
                    out.push((gy, self.conv2d_valid(x, g, stride)?));
                }
            }
            Op::PlaneGather(map) => out.push((inputs[0], self.plane_scatter(g, map)?)),
            Op::PlaneScatter(map) => out.push((inputs[0], self.plane_gather(g, map)?)),
            Op::ChannelCycle => {
                let b = self.shape(inputs[0])[1];
                out.push((inputs[0], self.channel_fold(g, b)?));
            }
            Op::ChannelFold => {
                let c = self.shape(inputs[0])[1];
                out.push((inputs[0], self.channel_cycle(g, c)?));
            }
        }
        Ok(out)
    }

    /// Number of scalars held by the node values.
    pub fn footprint(&self) -> usize {
        self.nodes.iter().map(|n| numel(n.value.shape())).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn product_rule() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2], &[2.0, 3.0]));
        let b = g.leaf(t(&[2], &[5.0, 7.0]));
        let p = g.mul(a, b).unwrap();
        let s = g.sum(p).unwrap();
        let grads = g.grad(s, &[a, b]).unwrap();
        assert_eq!(g.value(grads[0]).data(), &[5.0, 7.0]);
        assert_eq!(g.value(grads[1]).data(), &[2.0, 3.0]);
    }

    #[test]
    fn unreachable_input_gets_zero() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2], &[1.0, 1.0]));
        let b = g.leaf(t(&[3], &[1.0, 1.0, 1.0]));
        let s = g.sum(a).unwrap();
        let grads = g.grad(s, &[b]).unwrap();
        assert_eq!(g.value(grads[0]).data(), &[0.0; 3]);
    }

    #[test]
    fn second_derivative_of_cube() {
        // d/dx (d/dx x^3) = 6x
        let mut g = Graph::new();
        let x = g.leaf(t(&[1], &[2.0]));
        let y = g.powf(x, 3.0);
        let dy = g.grad(y, &[x]).unwrap()[0];
        assert!((g.scalar_value(dy) - 12.0).abs() < 1e-12);
        let d2 = g.grad(dy, &[x]).unwrap()[0];
        assert!((g.scalar_value(d2) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn double_backprop_through_conv() {
        // f(w) = ||∂/∂x sum(conv(x, w))||² is quadratic in w; compare with FD.
        let x0 = Tensor::from_fn(&[1, 1, 4, 4], |i| (i as f64 * 0.37).sin());
        let w0 = Tensor::from_fn(&[2, 1, 3, 3], |i| (i as f64 * 0.91).cos());
        let penalty = |w: &Tensor<f64>| -> (f64, Tensor<f64>) {
            let mut g = Graph::new();
            let x = g.leaf(x0.clone());
            let wv = g.leaf(w.clone());
            let y = g.conv2d_valid(x, wv, 1).unwrap();
            let y = g.leaky_relu(y, 0.2);
            let s = g.sum(y).unwrap();
            let gx = g.grad(s, &[x]).unwrap()[0];
            let sq = g.square(gx).unwrap();
            let p = g.sum(sq).unwrap();
            let gw = g.grad(p, &[wv]).unwrap()[0];
            (g.scalar_value(p), g.value(gw).clone())
        };
        let (_, analytic) = penalty(&w0);
        let h = 1e-6;
        for k in 0..w0.len() {
            let mut wp = w0.clone();
            wp.data_mut()[k] += h;
            let mut wm = w0.clone();
            wm.data_mut()[k] -= h;
            let fd = (penalty(&wp).0 - penalty(&wm).0) / (2.0 * h);
            assert!((fd - analytic.data()[k]).abs() < 1e-5, "k={k}: {fd} vs {}", analytic.data()[k]);
        }
    }

    #[test]
    fn broadcasting_add_accumulates_bias_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[2, 3, 2, 2]));
        let b = g.leaf(Tensor::zeros(&[1, 3, 1, 1]));
        let y = g.add(x, b).unwrap();
        let s = g.sum(y).unwrap();
        let gb = g.grad(s, &[b]).unwrap()[0];
        assert_eq!(g.value(gb).data(), &[8.0, 8.0, 8.0]);
    }

    #[test]
    fn grad_rejects_non_scalar_output() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2]));
        assert!(g.grad(x, &[x]).is_err());
    }
}
