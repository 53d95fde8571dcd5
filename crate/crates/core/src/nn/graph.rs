//! Define-by-run tape with reverse-mode differentiation.
//!
//! Activations are single samples laid out `[C, H, W]`; batching happens one
//! level up by summing per-sample gradients.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        k: usize,
        cols: Vec<T>,
        in_dims: (usize, usize, usize),
        out_hw: (usize, usize),
    },
    Add(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, T),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        trans_a: bool,
        trans_b: bool,
    },
    Reshape(Var),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Bce {
        pred: Var,
        target: Vec<T>,
    },
    SigmoidBce {
        logits: Var,
        target: Vec<T>,
    },
    SoftmaxCe {
        logits: Var,
        label: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every node that requires them.
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of `len` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); len])
    }
}

/// View strides for `op(X)` of size `rows x cols` where `X` is stored row-major
/// either as-is or transposed.
fn view(trans: bool, rows: usize, cols: usize) -> (isize, isize) {
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn clamp_prob<T: Real>(p: T) -> T {
    let eps = T::from_f64_lossy(PROB_EPS);
    p.max(eps).min(T::one() - eps)
}

fn bce<T: Real>(target: T, p: T) -> T {
    let pc = clamp_prob(p);
    -(target * pc.ln() + (T::one() - target) * (T::one() - pc).ln())
}

fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input; no gradient is tracked.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copies `v` into a new constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    /// 2-D convolution with zero padding. `x: [C, H, W]`, `w: [O, C, k, k]`,
    /// `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] || stride == 0 {
            return Err(Error::Shape(format!("conv2d input {xs:?} with weight {ws:?}")));
        }
        let (c, h, wd) = (xs[0], xs[1], xs[2]);
        let (o, k) = (ws[0], ws[2]);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::Shape(format!("conv2d bias {:?} for {o} outputs", self.shape(b))));
            }
        }
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::Shape(format!("conv2d kernel {k} larger than padded input {h}x{wd}")));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let ohw = oh * ow;
        let ckk = c * k * k;
        let xd = self.value(x).data();
        let mut cols = vec![T::zero(); ckk * ohw];
        for ch in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ch * k + ki) * k + kj;
                    let dst = &mut cols[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &xd[(ch * h + iy as usize) * wd..(ch * h + iy as usize + 1) * wd];
                        for ox in 0..ow {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix >= 0 && ix < wd as isize {
                                dst[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![T::zero(); o * ohw];
        T::gemm(
            o,
            ckk,
            ohw,
            T::one(),
            self.value(w).data(),
            ckk as isize,
            1,
            &cols,
            ohw as isize,
            1,
            T::zero(),
            &mut out,
            ohw as isize,
            1,
        );
        if let Some(b) = b {
            let bd = self.value(b).data();
            for (row, &bias) in out.chunks_exact_mut(ohw).zip(bd) {
                row.iter_mut().for_each(|v| *v = *v + bias);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(vec![o, oh, ow], out)?,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                k,
                cols,
                in_dims: (c, h, wd),
                out_hw: (oh, ow),
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("add {:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = self.value(a);
        let t = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |v| v.max(T::zero()), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map(a, |v| v * c, Op::Scale(a, c))
    }

    /// `op(a) * op(b)` for 2-D operands, where `op` optionally transposes.
    pub fn matmul(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::Shape(format!("matmul needs 2-D operands, got {sa:?} and {sb:?}")));
        }
        let (m, k) = if trans_a { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(Error::Shape(format!("matmul inner dims {k} vs {k2}")));
        }
        let (ra, ca) = view(trans_a, m, k);
        let (rb, cb) = view(trans_b, k, n);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), self.value(a).data(), ra, ca, self.value(b).data(), rb, cb, T::zero(), &mut out, n as isize, 1);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_a,
                trans_b,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// `[C, H, W] -> [C]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(Error::Shape(format!("global pool expects [C, H, W], got {s:?}")));
        }
        let hw = s[1] * s[2];
        let inv = T::one() / T::from_usize(hw).expect("size");
        let data = self.value(a).data().chunks_exact(hw).map(|c| c.iter().copied().sum::<T>() * inv).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![s[0]], data)?, Op::GlobalAvgPool(a), rg))
    }

    /// `w x + b` with `x: [I]`, `w: [O, I]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] || bs != [ws[0]] {
            return Err(Error::Shape(format!("linear {xs:?} x {ws:?} + {bs:?}")));
        }
        let (o, i) = (ws[0], ws[1]);
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let data = (0..o)
            .map(|r| wd[r * i..(r + 1) * i].iter().zip(xd).map(|(&a, &v)| a * v).sum::<T>() + bd[r])
            .collect();
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(vec![o], data)?, Op::Linear { x, w, b }, rg))
    }

    /// Mean binary cross-entropy of probabilities `pred` against `target`,
    /// with predictions clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() {
            return Err(Error::Shape(format!("bce over {} predictions and {} targets", p.len(), target.len())));
        }
        let n = T::from_usize(p.len()).expect("size");
        let loss = p.iter().zip(target).map(|(&p, &v)| bce(v, p)).sum::<T>() / n;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    /// Same value as `bce(sigmoid(logits), target)`; the gradient is the
    /// analytic `sigmoid(z) - v`, which stays informative at saturation.
    pub fn sigmoid_bce(&mut self, logits: Var, target: &[T]) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != target.len() {
            return Err(Error::Shape(format!("bce over {} logits and {} targets", z.len(), target.len())));
        }
        let n = T::from_usize(z.len()).expect("size");
        let loss = z.iter().zip(target).map(|(&z, &v)| bce(v, sigmoid(z))).sum::<T>() / n;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SigmoidBce {
                logits,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    /// Cross-entropy of class `label` under `softmax(logits)`, probability clamped.
    pub fn softmax_ce(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if self.shape(logits).len() != 1 || label >= z.len() {
            return Err(Error::Shape(format!("softmax_ce label {label} for logits {:?}", self.shape(logits))));
        }
        let p = softmax(z);
        let loss = -clamp_prob(p[label]).ln();
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, label }, rg))
    }

    /// Reverse pass from scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar, got {:?}", lv.shape())));
        }
        if !lv.is_finite() {
            return Err(Error::Numeric(format!("loss is {:?}", lv.item())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite gradient at node {i}")));
                }
            }
        }
        Ok(Grads { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(s) = self.slot(grads, *v) {
                        s.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv);
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, &gv), &xv) in s.iter_mut().zip(g).zip(x) {
                        if xv > T::zero() {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, &gv), &yv) in s.iter_mut().zip(g).zip(y) {
                        *d = *d + gv * yv * (T::one() - yv);
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv * *c);
                }
            }
            Op::Reshape(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv);
                }
            }
            Op::GlobalAvgPool(a) => {
                let s_in = self.shape(*a);
                let hw = s_in[1] * s_in[2];
                let inv = T::one() / T::from_usize(hw).expect("size");
                if let Some(s) = self.slot(grads, *a) {
                    for (chunk, &gv) in s.chunks_exact_mut(hw).zip(g) {
                        chunk.iter_mut().for_each(|d| *d = *d + gv * inv);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                let i = xd.len();
                if let Some(s) = self.slot(grads, *w) {
                    for (r, &gv) in g.iter().enumerate() {
                        for (d, &xv) in s[r * i..(r + 1) * i].iter_mut().zip(xd) {
                            *d = *d + gv * xv;
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv);
                }
                if let Some(s) = self.slot(grads, *x) {
                    for (r, &gv) in g.iter().enumerate() {
                        for (d, &wv) in s.iter_mut().zip(&wd[r * i..(r + 1) * i]) {
                            *d = *d + gv * wv;
                        }
                    }
                }
            }
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_a,
                trans_b,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (ra, ca) = view(*trans_a, m, k);
                let (rb, cb) = view(*trans_b, k, n);
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if let Some(s) = self.slot(grads, *a) {
                    // d op(A) = dC * op(B)^T, written through op(A)'s strides
                    T::gemm(m, n, k, T::one(), g, n as isize, 1, bd, cb, rb, T::one(), s, ra, ca);
                }
                if let Some(s) = self.slot(grads, *b) {
                    // d op(B) = op(A)^T * dC
                    T::gemm(k, m, n, T::one(), ad, ca, ra, g, n as isize, 1, T::one(), s, rb, cb);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                k,
                cols,
                in_dims,
                out_hw,
            } => {
                let (c, h, wd) = *in_dims;
                let (oh, ow) = *out_hw;
                let (k, stride, pad) = (*k, *stride, *pad);
                let ohw = oh * ow;
                let ckk = c * k * k;
                let o = g.len() / ohw;
                if let Some(s) = self.slot(grads, *w) {
                    T::gemm(o, ohw, ckk, T::one(), g, ohw as isize, 1, cols, 1, ohw as isize, T::one(), s, ckk as isize, 1);
                }
                if let Some(b) = b {
                    if let Some(s) = self.slot(grads, *b) {
                        for (d, row) in s.iter_mut().zip(g.chunks_exact(ohw)) {
                            *d = *d + row.iter().copied().sum::<T>();
                        }
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let wv = self.value(*w).data();
                    let mut dcols = vec![T::zero(); ckk * ohw];
                    T::gemm(ckk, o, ohw, T::one(), wv, 1, ckk as isize, g, ohw as isize, 1, T::zero(), &mut dcols, ohw as isize, 1);
                    let s = self.slot(grads, *x).expect("requires grad");
                    for ch in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let row = (ch * k + ki) * k + kj;
                                let src = &dcols[row * ohw..(row + 1) * ohw];
                                for oy in 0..oh {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let base = (ch * h + iy as usize) * wd;
                                    for ox in 0..ow {
                                        let ix = (ox * stride + kj) as isize - pad as isize;
                                        if ix >= 0 && ix < wd as isize {
                                            let d = &mut s[base + ix as usize];
                                            *d = *d + src[oy * ow + ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Bce { pred, target } => {
                let p = self.value(*pred).data();
                let n = T::from_usize(p.len()).expect("size");
                let eps = T::from_f64_lossy(PROB_EPS);
                if let Some(s) = self.slot(grads, *pred) {
                    for ((d, &pv), &tv) in s.iter_mut().zip(p).zip(target) {
                        if pv > eps && pv < T::one() - eps {
                            *d = *d + g[0] * (pv - tv) / (pv * (T::one() - pv) * n);
                        }
                    }
                }
            }
            Op::SigmoidBce { logits, target } => {
                let z = self.value(*logits).data();
                let n = T::from_usize(z.len()).expect("size");
                if let Some(s) = self.slot(grads, *logits) {
                    for ((d, &zv), &tv) in s.iter_mut().zip(z).zip(target) {
                        *d = *d + g[0] * (sigmoid(zv) - tv) / n;
                    }
                }
            }
            Op::SoftmaxCe { logits, label } => {
                let p = softmax(self.value(*logits).data());
                if let Some(s) = self.slot(grads, *logits) {
                    for (j, (d, pv)) in s.iter_mut().zip(p).enumerate() {
                        let onehot = if j == *label { T::one() } else { T::zero() };
                        *d = *d + g[0] * (pv - onehot);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central finite differences of `f` with respect to every entry of
    /// every parameter, compared to the tape's gradients.
    fn check<F>(params: Vec<Tensor<f64>>, f: F)
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Var,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
        let loss = f(&mut g, &vars);
        let grads = g.backward(loss).unwrap();
        let h = 1e-4;
        for (pi, p) in params.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[pi], p.numel());
            for j in 0..p.numel() {
                let eval = |delta: f64| {
                    let mut ps = params.clone();
                    ps[pi].data_mut()[j] += delta;
                    let mut g = Graph::new();
                    let vs: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
                    let l = f(&mut g, &vs);
                    g.value(l).item()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let err = (numeric - analytic[j]).abs() / numeric.abs().max(analytic[j].abs()).max(1e-3);
                assert!(err < 1e-4, "param {pi}[{j}]: analytic {} numeric {numeric}", analytic[j]);
            }
        }
    }

    /// Reduces any tensor to a scalar through fixed random weights.
    fn probe(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
        let n = g.value(v).numel();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::new(vec![1, n], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let flat = g.reshape(v, vec![n]).unwrap();
        let w = g.input(w);
        let b = g.input(Tensor::new(vec![1], vec![0.0]).unwrap());
        let out = g.linear(flat, w, b).unwrap();
        g.reshape(out, vec![1]).unwrap()
    }

    #[test]
    fn conv2d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 3)] {
            let x = rand_tensor(&mut rng, vec![2, 5, 6]);
            let w = rand_tensor(&mut rng, vec![3, 2, k, k]);
            let b = rand_tensor(&mut rng, vec![3]);
            check(vec![x, w, b], |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
                probe(g, y, 5)
            });
        }
    }

    #[test]
    fn elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&mut rng, vec![2, 3, 3]);
        let b = rand_tensor(&mut rng, vec![2, 3, 3]);
        check(vec![a, b], |g, v| {
            let s = g.add(v[0], v[1]).unwrap();
            let r = g.relu(s);
            let q = g.sigmoid(v[1]);
            let t = g.add(r, q).unwrap();
            let t = g.scale(t, 0.7);
            let p = g.global_avg_pool(t).unwrap();
            probe(g, p, 9)
        });
    }

    #[test]
    fn matmul_gradients_all_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let a = rand_tensor(&mut rng, if ta { vec![4, 3] } else { vec![3, 4] });
            let b = rand_tensor(&mut rng, if tb { vec![5, 4] } else { vec![4, 5] });
            check(vec![a, b], |g, v| {
                let c = g.matmul(v[0], v[1], ta, tb).unwrap();
                probe(g, c, 11)
            });
        }
    }

    #[test]
    fn linear_and_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, vec![4]);
        let w = rand_tensor(&mut rng, vec![2, 4]);
        let b = rand_tensor(&mut rng, vec![2]);
        for label in [0, 1] {
            check(vec![x.clone(), w.clone(), b.clone()], |g, v| {
                let z = g.linear(v[0], v[1], v[2]).unwrap();
                g.softmax_ce(z, label).unwrap()
            });
        }
        let z = rand_tensor(&mut rng, vec![6]);
        let target: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        check(vec![z.clone()], |g, v| g.sigmoid_bce(v[0], &target).unwrap());
        check(vec![z], |g, v| {
            let p = g.sigmoid(v[0]);
            g.bce(p, &target).unwrap()
        });
    }

    #[test]
    fn detached_branch_has_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
        let d = g.detach(a);
        let s = g.scale(d, 3.0);
        let t = g.scale(a, 2.0);
        let sum = g.add(s, t).unwrap();
        let w = g.input(Tensor::new(vec![1, 3], vec![1.0; 3]).unwrap());
        let b = g.input(Tensor::new(vec![1], vec![0.0]).unwrap());
        let l = g.linear(sum, w, b).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[2.0, 2.0, 2.0]);
        assert!(grads.get(d).is_none());
    }

    #[test]
    fn scale_gradient_is_lambda() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(1.7));
        let y = g.scale(x, 10.0);
        assert_eq!(g.backward(y).unwrap().get(x).unwrap(), &[10.0]);
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(f64::NAN));
        let y = g.scale(x, 1.0);
        assert!(matches!(g.backward(y), Err(Error::Numeric(_))));
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(vec![3, 4, 4]));
        let w = g.input(Tensor::zeros(vec![2, 2, 3, 3]));
        assert!(matches!(g.conv2d(x, w, None, 1, 1), Err(Error::Shape(_))));
        let a = g.input(Tensor::zeros(vec![2, 3]));
        let b = g.input(Tensor::zeros(vec![2, 3]));
        assert!(g.matmul(a, b, false, false).is_err());
        assert!(g.matmul(a, b, true, false).is_ok());
    }
}
