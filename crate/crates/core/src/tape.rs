//! Reverse-mode gradient recording over [`Tensor`] values.
//!
//! Every recorded op appends a node; node order is a topological order, so
//! the backward pass is a single reverse sweep. Parameters enter the tape
//! through [`Tape::param`] and their gradients land in the owning
//! [`ParamStore`] when [`Tape::backward`] runs. Values bound with
//! [`Tape::frozen`] or [`Tape::constant`] never receive gradients.

use crate::params::{ParamId, ParamStore};
use crate::tensor::{sigmoid, Result, Tensor, TensorError};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Elu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            // relu'(0) = 0
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear(Var, Var, Var),
    Act(Var, Activation),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    SoftThreshold(Var, Var),
    Mask(Var, Tensor),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    GatherCols(Var, Vec<usize>),
    RowMatMul(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Some parameter is reachable from this node.
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    non_finite: Option<&'static str>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(name);
        }
        let needs_grad = self.reaches_param(&op);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn reaches_param(&self, op: &Op) -> bool {
        let n = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf => false,
            Op::Param(_) => true,
            Op::Linear(a, b, c) | Op::LayerNorm { x: a, gain: b, bias: c, .. } => n(a) || n(b) || n(c),
            Op::SoftThreshold(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::RowMatMul(a, b) => {
                n(a) || n(b)
            }
            Op::Act(a, _)
            | Op::Mask(a, _)
            | Op::Scale(a, _)
            | Op::Square(a)
            | Op::Abs(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::GatherCols(a, _) => n(a),
            Op::ConcatCols(parts) => parts.iter().any(n),
        }
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, "constant")
    }

    /// Binds a trainable parameter; its gradient flows to `store` on backward.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), "param")
    }

    /// Binds a parameter value as a constant (targets, frozen critics).
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Leaf, "frozen")
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = Tensor::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Linear(x, w, b), "linear"))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let y = self.value(x).map(|v| kind.apply(v));
        self.push(y, Op::Act(x, kind), "activation")
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, h) = xv.dims2();
        let g = self.value(gain);
        let b = self.value(bias);
        if g.len() != h || b.len() != h {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: xv.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let mut xhat = vec![0.0; rows * h];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * h];
        for r in 0..rows {
            let row = &xv.data()[r * h..(r + 1) * h];
            let mean = row.iter().sum::<f64>() / h as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for k in 0..h {
                let xh = (row[k] - mean) * rs;
                xhat[r * h + k] = xh;
                out[r * h + k] = xh * g.data()[k] + b.data()[k];
            }
        }
        let y = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            y,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            "layer_norm",
        ))
    }

    /// `sign(theta) * relu(|theta| - sigmoid(s))`, differentiable in both inputs.
    pub fn soft_threshold(&mut self, theta: Var, s: Var) -> Result<Var> {
        let y = crate::masking::str_transform(self.value(theta), self.value(s))?;
        Ok(self.push(y, Op::SoftThreshold(theta, s), "soft_threshold"))
    }

    /// Elementwise product with a constant binary mask.
    pub fn mask(&mut self, theta: Var, mask: &Tensor) -> Result<Var> {
        let y = self.value(theta).zip_map(mask, "mask", |a, m| a * m)?;
        Ok(self.push(y, Op::Mask(theta, mask.clone()), "mask"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(y, Op::Add(a, b), "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(y, Op::Sub(a, b), "sub"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(y, Op::Mul(a, b), "mul"))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a).map(|v| v * c);
        self.push(y, Op::Scale(a, c), "scale")
    }

    pub fn square(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|v| v * v);
        self.push(y, Op::Square(a), "square")
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let y = self.value(a).map(f64::abs);
        self.push(y, Op::Abs(a), "abs")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let y = Tensor::scalar(self.value(a).sum());
        self.push(y, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let y = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        self.push(y, Op::Mean(a), "mean")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Tensor::concat_cols(&refs)?;
        Ok(self.push(y, Op::ConcatCols(parts.to_vec()), "concat_cols"))
    }

    /// Picks column `idx[r]` from each row `r`, giving `[B, 1]`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        if idx.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "gather_cols",
                left: xv.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        let mut out = Vec::with_capacity(rows);
        for (r, &c) in idx.iter().enumerate() {
            if c >= cols {
                return Err(TensorError::OutOfRange {
                    what: "gather column",
                    index: c,
                    size: cols,
                });
            }
            out.push(xv.data()[r * cols + c]);
        }
        let y = Tensor::new(vec![rows, 1], out)?;
        Ok(self.push(y, Op::GatherCols(x, idx.to_vec()), "gather_cols"))
    }

    /// Per-row product: `x: [B, n]` times row-specific `w: [B, n*m]` viewed
    /// as an `[n, m]` matrix, giving `[B, m]`.
    pub fn row_matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let (rows, n) = xv.dims2();
        let (wrows, wcols) = wv.dims2();
        if wrows != rows || n == 0 || wcols % n != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "row_matmul",
                left: xv.shape().to_vec(),
                right: wv.shape().to_vec(),
            });
        }
        let m = wcols / n;
        let mut out = vec![0.0; rows * m];
        for r in 0..rows {
            let xr = &xv.data()[r * n..(r + 1) * n];
            let wr = &wv.data()[r * wcols..(r + 1) * wcols];
            let yr = &mut out[r * m..(r + 1) * m];
            for (i, &xi) in xr.iter().enumerate() {
                for (yo, &wi) in yr.iter_mut().zip(&wr[i * m..(i + 1) * m]) {
                    *yo += xi * wi;
                }
            }
        }
        let y = Tensor::new(vec![rows, m], out)?;
        Ok(self.push(y, Op::RowMatMul(x, w), "row_matmul"))
    }

    /// Propagates d(loss)/d(node) back through the tape, accumulating
    /// parameter gradients into `store`. The tape is cleared afterwards.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let result = self.backward_inner(loss, store);
        self.nodes.clear();
        self.non_finite = None;
        result
    }

    fn backward_inner(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if let Some(op) = self.non_finite {
            return Err(TensorError::NonFinite(op));
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);
        let needs: Vec<bool> = self.nodes.iter().map(|n| n.needs_grad).collect();
        let accumulate = |grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>| {
            if needs[v.0] {
                accumulate(grads, v, g);
            }
        };

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => store.accumulate_grad(*id, &g),
                Op::Linear(x, w, b) => {
                    let (x, w, b) = (*x, *w, *b);
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (rows, n_in) = xv.dims2();
                    let (_, n_out) = wv.dims2();
                    if needs[x.0] {
                        let mut dx = vec![0.0; rows * n_in];
                        for r in 0..rows {
                            let gr = &g[r * n_out..(r + 1) * n_out];
                            for i in 0..n_in {
                                dx[r * n_in + i] = dot(&wv.data()[i * n_out..(i + 1) * n_out], gr);
                            }
                        }
                        accumulate(&mut grads, x, dx);
                    }
                    if needs[w.0] {
                        let mut dw = vec![0.0; n_in * n_out];
                        for r in 0..rows {
                            let gr = &g[r * n_out..(r + 1) * n_out];
                            let xr = &xv.data()[r * n_in..(r + 1) * n_in];
                            for (i, &xi) in xr.iter().enumerate() {
                                if xi != 0.0 {
                                    for (d, &gv) in dw[i * n_out..(i + 1) * n_out].iter_mut().zip(gr) {
                                        *d += xi * gv;
                                    }
                                }
                            }
                        }
                        accumulate(&mut grads, w, dw);
                    }
                    if needs[b.0] {
                        let mut db = vec![0.0; n_out];
                        for r in 0..rows {
                            for (d, &gv) in db.iter_mut().zip(&g[r * n_out..(r + 1) * n_out]) {
                                *d += gv;
                            }
                        }
                        accumulate(&mut grads, b, db);
                    }
                }
                Op::Act(x, kind) => {
                    let xv = self.nodes[x.0].value.data();
                    let yv = node.value.data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(xv.iter().zip(yv))
                        .map(|(gv, (&xi, &yi))| gv * kind.derivative(xi, yi))
                        .collect();
                    let x = *x;
                    accumulate(&mut grads, x, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.nodes[gain.0].value.data();
                    let h = gv.len();
                    let rows = rstd.len();
                    let mut dx = vec![0.0; rows * h];
                    let mut dgain = vec![0.0; h];
                    let mut dbias = vec![0.0; h];
                    for r in 0..rows {
                        let gr = &g[r * h..(r + 1) * h];
                        let xr = &xhat[r * h..(r + 1) * h];
                        let mut dxhat = vec![0.0; h];
                        for k in 0..h {
                            dgain[k] += gr[k] * xr[k];
                            dbias[k] += gr[k];
                            dxhat[k] = gr[k] * gv[k];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / h as f64;
                        let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / h as f64;
                        for k in 0..h {
                            dx[r * h + k] = rstd[r] * (dxhat[k] - mean_d - xr[k] * mean_dx);
                        }
                    }
                    let (x, gain, bias) = (*x, *gain, *bias);
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, gain, dgain);
                    accumulate(&mut grads, bias, dbias);
                }
                Op::SoftThreshold(theta, s) => {
                    let tv = self.nodes[theta.0].value.data();
                    let sv = self.nodes[s.0].value.data();
                    let mut dtheta = vec![0.0; tv.len()];
                    let mut ds = vec![0.0; tv.len()];
                    for k in 0..tv.len() {
                        let sig = sigmoid(sv[k]);
                        if tv[k].abs() > sig {
                            dtheta[k] = g[k];
                            ds[k] = -g[k] * tv[k].signum() * sig * (1.0 - sig);
                        }
                    }
                    let (theta, s) = (*theta, *s);
                    accumulate(&mut grads, theta, dtheta);
                    accumulate(&mut grads, s, ds);
                }
                Op::Mask(theta, mask) => {
                    let dtheta = g.iter().zip(mask.data()).map(|(a, m)| a * m).collect();
                    let theta = *theta;
                    accumulate(&mut grads, theta, dtheta);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    let neg = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, a, g);
                    accumulate(&mut grads, b, neg);
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a.0].value.data();
                    let bv = self.nodes[b.0].value.data();
                    let da = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let db = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::Scale(a, c) => {
                    let da = g.iter().map(|v| v * c).collect();
                    let a = *a;
                    accumulate(&mut grads, a, da);
                }
                Op::Square(a) => {
                    let av = self.nodes[a.0].value.data();
                    let da = g.iter().zip(av).map(|(x, y)| 2.0 * x * y).collect();
                    let a = *a;
                    accumulate(&mut grads, a, da);
                }
                Op::Abs(a) => {
                    let av = self.nodes[a.0].value.data();
                    let da = g
                        .iter()
                        .zip(av)
                        .map(|(x, &y)| if y > 0.0 { *x } else if y < 0.0 { -x } else { 0.0 })
                        .collect();
                    let a = *a;
                    accumulate(&mut grads, a, da);
                }
                Op::Sum(a) => {
                    let n = self.nodes[a.0].value.len();
                    let a = *a;
                    accumulate(&mut grads, a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.nodes[a.0].value.len();
                    let a = *a;
                    accumulate(&mut grads, a, vec![g[0] / n.max(1) as f64; n]);
                }
                Op::ConcatCols(parts) => {
                    let rows = node.value.dims2().0;
                    let total = node.value.dims2().1;
                    let mut offset = 0;
                    let parts = parts.clone();
                    for p in parts {
                        let c = self.nodes[p.0].value.dims2().1;
                        let mut dp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        offset += c;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::GatherCols(x, idx) => {
                    let (rows, cols) = self.nodes[x.0].value.dims2();
                    let mut dx = vec![0.0; rows * cols];
                    for (r, &c) in idx.iter().enumerate() {
                        dx[r * cols + c] = g[r];
                    }
                    let x = *x;
                    accumulate(&mut grads, x, dx);
                }
                Op::RowMatMul(x, w) => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (rows, n) = xv.dims2();
                    let wcols = wv.dims2().1;
                    let m = wcols / n;
                    let mut dx = vec![0.0; rows * n];
                    let mut dw = vec![0.0; rows * wcols];
                    for r in 0..rows {
                        let gr = &g[r * m..(r + 1) * m];
                        for i in 0..n {
                            let wr = &wv.data()[r * wcols + i * m..r * wcols + (i + 1) * m];
                            dx[r * n + i] = wr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            let xi = xv.data()[r * n + i];
                            for (d, &gv) in dw[r * wcols + i * m..r * wcols + (i + 1) * m]
                                .iter_mut()
                                .zip(gr)
                            {
                                *d = xi * gv;
                            }
                        }
                    }
                    let (x, w) = (*x, *w);
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, w, dw);
                }
            }
        }
        Ok(())
    }
}

/// Dot product with four independent partial sums, so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(&g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_and_grad() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::vector(vec![-1.0, 2.0]));
        let mut tape = Tape::new();
        let x = tape.param(&store, w);
        let y = tape.activation(x, Activation::Relu);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
        let l = tape.sum(y);
        tape.backward(l, &mut store).unwrap();
        assert_eq!(store.grad(w).data(), &[0.0, 1.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn relu_at_zero_has_zero_slope() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let mut tape = Tape::new();
        let x = tape.param(&store, w);
        let y = tape.activation(x, Activation::Relu);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let l = tape.sum(y);
        tape.backward(l, &mut store).unwrap();
        assert_eq!(store.grad(w).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_and_tanh_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0]));
        let s = tape.activation(x, Activation::Sigmoid);
        assert_eq!(tape.value(s).data(), &[0.5]);

        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::scalar(0.0));
        let mut tape = Tape::new();
        let x = tape.param(&store, w);
        let t = tape.activation(x, Activation::Tanh);
        tape.backward(t, &mut store).unwrap();
        assert_eq!(store.grad(w).data(), &[1.0]);
    }

    #[test]
    fn square_grad() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let x = tape.param(&store, w);
        let y = tape.square(x);
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.grad(w).data(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let x = tape.param(&store, w);
        assert!(matches!(
            tape.backward(x, &mut store),
            Err(TensorError::NotScalar(_))
        ));
    }

    #[test]
    fn backward_rejects_non_finite() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(f64::NAN));
        let y = tape.square(x);
        assert!(matches!(
            tape.backward(y, &mut store),
            Err(TensorError::NonFinite(_))
        ));
    }

    #[test]
    fn layer_norm_constant_row_maps_to_bias() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(&[vec![1.0, 1.0, 1.0]]).unwrap());
        let g = tape.constant(Tensor::vector(vec![2.0, 2.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3]));
        let y = tape.layer_norm(x, g, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn layer_norm_symmetric_pair() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(&[vec![-1.0, 1.0]]).unwrap());
        let g = tape.constant(Tensor::vector(vec![1.0, 1.0]));
        let b = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = tape.layer_norm(x, g, b).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-5 && (v[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn mask_blocks_gradient() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let x = tape.param(&store, w);
        let y = tape.mask(x, &Tensor::vector(vec![1.0, 0.0])).unwrap();
        let l = tape.sum(y);
        tape.backward(l, &mut store).unwrap();
        assert_eq!(store.grad(w).data(), &[1.0, 0.0]);
    }

    #[test]
    fn frozen_values_get_no_grad() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::scalar(2.0));
        let mut tape = Tape::new();
        let x = tape.frozen(&store, w);
        let y = tape.square(x);
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.grad(w).data(), &[0.0]);
    }

    #[test]
    fn gather_out_of_range() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(tape.gather_cols(x, &[0, 3]).is_err());
    }
}
