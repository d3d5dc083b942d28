//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op appends a node holding its forward value. [`Tape::backward`] walks
//! the nodes once in reverse insertion order (a valid reverse topological
//! order, since inputs always precede their consumers) and only propagates
//! adjoints along paths that reach one of the requested targets. Targets may
//! be leaves (parameters, inputs) or intermediate activations.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{shape_err, Error, Result};
use crate::kernels::{col2im, gemm, im2col, ConvGeom};
use crate::tensor::Tensor;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulScalar(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Dense {
        x: usize,
        w: usize,
        b: Option<usize>,
        batch: usize,
    },
    Conv2d {
        x: usize,
        k: usize,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    ConvTranspose {
        x: usize,
        k: usize,
        // geometry of the equivalent forward correlation, output -> input
        geom: ConvGeom,
    },
    ChannelBias(usize, usize),
    GlobalAvgPool(usize),
    AvgPool {
        x: usize,
        out_h: usize,
        out_w: usize,
    },
    Mse(usize, usize),
    Sum(usize),
    Norm(usize),
    Reshape(usize),
    SliceLast {
        x: usize,
        start: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::NotOnTape { index: v.index });
        }
        Ok(v.index)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Records an input, parameter or constant.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        // A foreign Var is a programming error on read access.
        assert_eq!(v.tape, self.id, "Var from a different tape");
        &self.nodes[v.index].value
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.val(a).shape(), self.val(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: usize, b: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.val(a), self.val(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `x * s` where `s` holds a single value.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let (x, s) = (self.idx(x)?, self.idx(s)?);
        if self.val(s).len() != 1 {
            return Err(shape_err(
                "mul_scalar",
                format!("scalar operand has shape {:?}", self.val(s).shape()),
            ));
        }
        let k = self.val(s).item();
        let v = self.val(x).map(|t| t * k);
        Ok(self.push(v, Op::MulScalar(x, s)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let x = self.idx(x)?;
        let v = self.val(x).map(|t| t * k);
        Ok(self.push(v, Op::Scale(x, k)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let x = self.idx(x)?;
        let v = self.val(x).map(|t| t.max(0.0));
        Ok(self.push(v, Op::Relu(x)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let x = self.idx(x)?;
        let v = self.val(x).map(sigmoid);
        Ok(self.push(v, Op::Sigmoid(x)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let x = self.idx(x)?;
        let v = self.val(x).map(f64::tanh);
        Ok(self.push(v, Op::Tanh(x)))
    }

    /// Fully connected layer. `x` is `[in]` or `[batch, in]`, `w` is `[out, in]`, `b` is `[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let ws = self.val(wi).shape().to_vec();
        if ws.len() != 2 {
            return Err(shape_err("dense", format!("weight must be 2-D, got {ws:?}")));
        }
        let (out, inp) = (ws[0], ws[1]);
        let xs = self.val(xi).shape().to_vec();
        let (batch, out_shape) = match xs.as_slice() {
            [n] if *n == inp => (1, vec![out]),
            [bs, n] if *n == inp => (*bs, vec![*bs, out]),
            _ => {
                return Err(shape_err(
                    "dense",
                    format!("input {xs:?} incompatible with weight {ws:?}"),
                ))
            }
        };
        if let Some(bi) = bi {
            if self.val(bi).shape() != [out] {
                return Err(shape_err(
                    "dense",
                    format!("bias {:?} vs {out} outputs", self.val(bi).shape()),
                ));
            }
        }
        let mut y = vec![0.0; batch * out];
        if let Some(bi) = bi {
            let bias = self.val(bi).data();
            for row in y.chunks_mut(out) {
                row.copy_from_slice(bias);
            }
        }
        let beta = if bi.is_some() { 1.0 } else { 0.0 };
        gemm(
            batch,
            inp,
            out,
            self.val(xi).data(),
            false,
            self.val(wi).data(),
            true,
            beta,
            &mut y,
        );
        let v = Tensor::new(&out_shape, y)?;
        Ok(self.push(
            v,
            Op::Dense {
                x: xi,
                w: wi,
                b: bi,
                batch,
            },
        ))
    }

    /// Cross-correlation of `x: [C_in, H, W]`, or a batch `[C_in, N, H, W]`, with
    /// `k: [C_out, C_in, K, K]`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xi, ki) = (self.idx(x)?, self.idx(k)?);
        let (xs, ks) = (self.val(xi).shape().to_vec(), self.val(ki).shape().to_vec());
        let geom = conv_geom("conv2d", &xs, &ks, stride, pad)?;
        let c_out = ks[0];
        let mut cols = vec![0.0; geom.rows() * geom.cols()];
        im2col(self.val(xi).data(), &geom, &mut cols);
        let mut y = vec![0.0; c_out * geom.cols()];
        gemm(
            c_out,
            geom.rows(),
            geom.cols(),
            self.val(ki).data(),
            false,
            &cols,
            false,
            0.0,
            &mut y,
        );
        let v = Tensor::new(&batched_shape(c_out, &xs, geom.out_h, geom.out_w), y)?;
        Ok(self.push(
            v,
            Op::Conv2d {
                x: xi,
                k: ki,
                geom,
                cols,
            },
        ))
    }

    /// Transposed convolution of `x: [C_in, H, W]`, or a batch `[C_in, N, H, W]`, with
    /// `k: [C_in, C_out, K, K]`.
    /// Output spatial size is `stride * (H - 1) + K - 2 * pad`.
    pub fn conv2d_transpose(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xi, ki) = (self.idx(x)?, self.idx(k)?);
        let (xs, ks) = (self.val(xi).shape().to_vec(), self.val(ki).shape().to_vec());
        let Some((batch, h, w)) =
            split_batch(&xs).filter(|_| ks.len() == 4 && ks[2] == ks[3] && ks[0] == xs[0] && stride > 0)
        else {
            return Err(shape_err(
                "conv2d_transpose",
                format!("input {xs:?}, kernels {ks:?}, stride {stride}"),
            ));
        };
        let c_in = xs[0];
        let (c_out, kk) = (ks[1], ks[2]);
        let out_h = (stride * (h - 1) + kk).checked_sub(2 * pad);
        let out_w = (stride * (w - 1) + kk).checked_sub(2 * pad);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(shape_err("conv2d_transpose", format!("padding {pad} too large")));
        };
        if out_h == 0 || out_w == 0 {
            return Err(shape_err("conv2d_transpose", "empty output"));
        }
        let geom = ConvGeom {
            channels: c_out,
            batch,
            in_h: out_h,
            in_w: out_w,
            kernel: kk,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        let mut cols = vec![0.0; geom.rows() * geom.cols()];
        gemm(
            geom.rows(),
            c_in,
            batch * h * w,
            self.val(ki).data(),
            true,
            self.val(xi).data(),
            false,
            0.0,
            &mut cols,
        );
        let mut y = vec![0.0; c_out * batch * out_h * out_w];
        col2im(&cols, &geom, &mut y);
        let v = Tensor::new(&batched_shape(c_out, &xs, out_h, out_w), y)?;
        Ok(self.push(v, Op::ConvTranspose { x: xi, k: ki, geom }))
    }

    /// Adds `b[c]` to every element of channel `c` of `x: [C, H, W]` or `[C, N, H, W]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xi, bi) = (self.idx(x)?, self.idx(b)?);
        let xs = self.val(xi).shape().to_vec();
        if split_batch(&xs).is_none() || self.val(bi).shape() != [xs[0]] {
            return Err(shape_err(
                "channel_bias",
                format!("{xs:?} vs bias {:?}", self.val(bi).shape()),
            ));
        }
        let plane = xs[1..].iter().product();
        let mut v = self.val(xi).clone();
        for (chunk, &bv) in v.data_mut().chunks_mut(plane).zip(self.val(bi).data()) {
            chunk.iter_mut().for_each(|t| *t += bv);
        }
        Ok(self.push(v, Op::ChannelBias(xi, bi)))
    }

    /// `[C, H, W] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let xs = self.val(xi).shape().to_vec();
        if xs.len() != 3 {
            return Err(shape_err("global_avg_pool", format!("expected [C,H,W], got {xs:?}")));
        }
        let plane = xs[1] * xs[2];
        let data = self
            .val(xi)
            .data()
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect();
        let v = Tensor::new(&[xs[0]], data)?;
        Ok(self.push(v, Op::GlobalAvgPool(xi)))
    }

    /// Non-overlapping `win x win` average pooling of `[C, H, W]`.
    pub fn avg_pool(&mut self, x: Var, win: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let xs = self.val(xi).shape().to_vec();
        if xs.len() != 3 || win == 0 || !xs[1].is_multiple_of(win) || !xs[2].is_multiple_of(win) {
            return Err(shape_err("avg_pool", format!("{xs:?} with window {win}")));
        }
        self.adaptive_avg_pool(x, xs[1] / win, xs[2] / win)
    }

    /// Average pooling of `[C, H, W]` onto an `out_h x out_w` grid. Bin `i` covers
    /// rows `floor(i*H/out_h) .. ceil((i+1)*H/out_h)`, so bins may overlap when the
    /// grid does not divide the input.
    pub fn adaptive_avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let xs = self.val(xi).shape().to_vec();
        if xs.len() != 3 || out_h == 0 || out_w == 0 || out_h > xs[1] || out_w > xs[2] {
            return Err(shape_err("avg_pool", format!("{xs:?} onto {out_h}x{out_w}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let src = self.val(xi).data();
        let mut out = vec![0.0; c * out_h * out_w];
        for ch in 0..c {
            for by in 0..out_h {
                let (y0, y1) = bin(by, h, out_h);
                for bx in 0..out_w {
                    let (x0, x1) = bin(bx, w, out_w);
                    let mut s = 0.0;
                    for y in y0..y1 {
                        s += src[ch * h * w + y * w + x0..ch * h * w + y * w + x1]
                            .iter()
                            .sum::<f64>();
                    }
                    out[(ch * out_h + by) * out_w + bx] = s / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
        let v = Tensor::new(&[c, out_h, out_w], out)?;
        Ok(self.push(v, Op::AvgPool { x: xi, out_h, out_w }))
    }

    /// Mean squared error, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        if self.val(a).len() != self.val(b).len() {
            return Err(shape_err(
                "mse",
                format!("{:?} vs {:?}", self.val(a).shape(), self.val(b).shape()),
            ));
        }
        let n = self.val(a).len() as f64;
        let s: f64 = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.val(xi).sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(xi)))
    }

    /// Euclidean norm over all elements, a scalar.
    pub fn norm(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.val(xi).norm();
        Ok(self.push(Tensor::scalar(s), Op::Norm(xi)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = self.val(xi).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(xi)))
    }

    /// Slice `[start, start + len)` along the last axis of a 1-D or 2-D tensor.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let xs = self.val(xi).shape().to_vec();
        let (rows, n) = match xs.as_slice() {
            [n] => (1, *n),
            [r, n] => (*r, *n),
            _ => return Err(shape_err("slice_last", format!("expected 1-D or 2-D, got {xs:?}"))),
        };
        if len == 0 || start + len > n {
            return Err(shape_err("slice_last", format!("[{start}, {}) of {n}", start + len)));
        }
        let src = self.val(xi).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let shape = if xs.len() == 1 { vec![len] } else { vec![rows, len] };
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::SliceLast { x: xi, start }))
    }

    /// Gradients of the scalar `loss` with respect to each of `targets`, in order.
    pub fn backward(&self, loss: Var, targets: &[Var]) -> Result<Vec<Tensor>> {
        let li = self.idx(loss)?;
        if self.val(li).len() != 1 {
            return Err(Error::NonScalarLoss(self.val(li).shape().to_vec()));
        }
        let mut relevant = vec![false; li + 1];
        let tidx: Vec<usize> = targets.iter().map(|&t| self.idx(t)).collect::<Result<_>>()?;
        for &t in &tidx {
            if t <= li {
                relevant[t] = true;
            }
        }
        for i in 0..=li {
            if !relevant[i] {
                relevant[i] = self.inputs(i).iter().any(|&j| relevant[j]);
            }
        }

        let mut grads: Vec<Option<Tensor>> = (0..=li).map(|_| None).collect();
        grads[li] = Some(Tensor::full(self.val(li).shape(), 1.0));
        let mut result: Vec<Option<Tensor>> = vec![None; tidx.len()];
        for i in (0..=li).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (slot, &t) in tidx.iter().enumerate() {
                if t == i {
                    result[slot] = Some(g.clone());
                }
            }
            self.propagate(i, &g, &relevant, &mut grads);
        }
        Ok(tidx
            .iter()
            .zip(result)
            .map(|(&t, r)| r.unwrap_or_else(|| Tensor::zeros(self.val(t).shape())))
            .collect())
    }

    fn inputs(&self, i: usize) -> Vec<usize> {
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => vec![*a, *b],
            Op::MulScalar(x, s) => vec![*x, *s],
            Op::ChannelBias(x, b) => vec![*x, *b],
            Op::Dense { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Conv2d { x, k, .. } | Op::ConvTranspose { x, k, .. } => vec![*x, *k],
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::GlobalAvgPool(x)
            | Op::AvgPool { x, .. }
            | Op::Sum(x)
            | Op::Norm(x)
            | Op::Reshape(x)
            | Op::SliceLast { x, .. } => vec![*x],
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, relevant: &[bool], grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        let mut acc = |j: usize, delta: Tensor| {
            if !relevant[j] {
                return;
            }
            match &mut grads[j] {
                Some(existing) => existing.axpy(1.0, &delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let elementwise = |x: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let data = x.data().iter().zip(g.data()).map(|(&a, &b)| f(a, b)).collect();
            Tensor::new(x.shape(), data).expect("shape")
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if relevant[*a] {
                    acc(*a, elementwise(self.val(*b), &|y, gv| y * gv));
                }
                if relevant[*b] {
                    acc(*b, elementwise(self.val(*a), &|x, gv| x * gv));
                }
            }
            Op::MulScalar(x, s) => {
                let k = self.val(*s).item();
                if relevant[*x] {
                    acc(*x, g.map(|v| v * k));
                }
                if relevant[*s] {
                    let d: f64 = self.val(*x).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                    acc(*s, Tensor::new(self.val(*s).shape(), vec![d]).expect("scalar"));
                }
            }
            Op::Scale(x, k) => acc(*x, g.map(|v| v * k)),
            Op::Relu(x) => acc(*x, elementwise(self.val(*x), &|a, gv| if a > 0.0 { gv } else { 0.0 })),
            Op::Sigmoid(x) => acc(*x, elementwise(out, &|y, gv| gv * y * (1.0 - y))),
            Op::Tanh(x) => acc(*x, elementwise(out, &|y, gv| gv * (1.0 - y * y))),
            Op::Dense { x, w, b, batch } => {
                let ws = self.val(*w).shape();
                let (o, n) = (ws[0], ws[1]);
                if relevant[*x] {
                    let mut dx = vec![0.0; batch * n];
                    gemm(*batch, o, n, g.data(), false, self.val(*w).data(), false, 0.0, &mut dx);
                    acc(*x, Tensor::new(self.val(*x).shape(), dx).expect("shape"));
                }
                if relevant[*w] {
                    let mut dw = vec![0.0; o * n];
                    gemm(o, *batch, n, g.data(), true, self.val(*x).data(), false, 0.0, &mut dw);
                    acc(*w, Tensor::new(ws, dw).expect("shape"));
                }
                if let Some(b) = b {
                    if relevant[*b] {
                        let mut db = vec![0.0; o];
                        for row in g.data().chunks(o) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        acc(*b, Tensor::from_vec(db));
                    }
                }
            }
            Op::Conv2d { x, k, geom, cols } => {
                let c_out = self.val(*k).shape()[0];
                if relevant[*k] {
                    let mut dk = vec![0.0; c_out * geom.rows()];
                    gemm(
                        c_out,
                        geom.cols(),
                        geom.rows(),
                        g.data(),
                        false,
                        cols,
                        true,
                        0.0,
                        &mut dk,
                    );
                    acc(*k, Tensor::new(self.val(*k).shape(), dk).expect("shape"));
                }
                if relevant[*x] {
                    let mut dcols = vec![0.0; geom.rows() * geom.cols()];
                    gemm(
                        geom.rows(),
                        c_out,
                        geom.cols(),
                        self.val(*k).data(),
                        true,
                        g.data(),
                        false,
                        0.0,
                        &mut dcols,
                    );
                    let mut dx = vec![0.0; self.val(*x).len()];
                    col2im(&dcols, geom, &mut dx);
                    acc(*x, Tensor::new(self.val(*x).shape(), dx).expect("shape"));
                }
            }
            Op::ConvTranspose { x, k, geom } => {
                let c_in = self.val(*x).shape()[0];
                let mut dcols = vec![0.0; geom.rows() * geom.cols()];
                im2col(g.data(), geom, &mut dcols);
                if relevant[*x] {
                    let mut dx = vec![0.0; c_in * geom.cols()];
                    gemm(
                        c_in,
                        geom.rows(),
                        geom.cols(),
                        self.val(*k).data(),
                        false,
                        &dcols,
                        false,
                        0.0,
                        &mut dx,
                    );
                    acc(*x, Tensor::new(self.val(*x).shape(), dx).expect("shape"));
                }
                if relevant[*k] {
                    let mut dk = vec![0.0; c_in * geom.rows()];
                    gemm(
                        c_in,
                        geom.cols(),
                        geom.rows(),
                        self.val(*x).data(),
                        false,
                        &dcols,
                        true,
                        0.0,
                        &mut dk,
                    );
                    acc(*k, Tensor::new(self.val(*k).shape(), dk).expect("shape"));
                }
            }
            Op::ChannelBias(x, b) => {
                acc(*x, g.clone());
                if relevant[*b] {
                    let c = self.val(*b).len();
                    let plane = g.len() / c;
                    let db = g.data().chunks(plane).map(|ch| ch.iter().sum()).collect();
                    acc(*b, Tensor::from_vec(db));
                }
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.val(*x).shape();
                let plane = xs[1] * xs[2];
                let mut dx = Vec::with_capacity(self.val(*x).len());
                for &gv in g.data() {
                    dx.extend(std::iter::repeat_n(gv / plane as f64, plane));
                }
                acc(*x, Tensor::new(xs, dx).expect("shape"));
            }
            Op::AvgPool { x, out_h, out_w } => {
                let xs = self.val(*x).shape();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let mut dx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for by in 0..*out_h {
                        let (y0, y1) = bin(by, h, *out_h);
                        for bx in 0..*out_w {
                            let (x0, x1) = bin(bx, w, *out_w);
                            let gv = g.data()[(ch * out_h + by) * out_w + bx] / ((y1 - y0) * (x1 - x0)) as f64;
                            for y in y0..y1 {
                                dx[ch * h * w + y * w + x0..ch * h * w + y * w + x1]
                                    .iter_mut()
                                    .for_each(|d| *d += gv);
                            }
                        }
                    }
                }
                acc(*x, Tensor::new(xs, dx).expect("shape"));
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let k = 2.0 * g.item() / ta.len() as f64;
                let diff: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| k * (x - y)).collect();
                if relevant[*b] {
                    let neg = diff.iter().map(|v| -v).collect();
                    acc(*b, Tensor::new(tb.shape(), neg).expect("shape"));
                }
                acc(*a, Tensor::new(ta.shape(), diff).expect("shape"));
            }
            Op::Sum(x) => acc(*x, Tensor::full(self.val(*x).shape(), g.item())),
            Op::Norm(x) => {
                let n = out.item();
                let k = if n > 0.0 { g.item() / n } else { 0.0 };
                acc(*x, self.val(*x).map(|v| v * k));
            }
            Op::Reshape(x) => {
                let t = g.clone().reshape(self.val(*x).shape()).expect("shape");
                acc(*x, t);
            }
            Op::SliceLast { x, start } => {
                let xs = self.val(*x).shape();
                let n = *xs.last().expect("non-empty shape");
                let len = *out.shape().last().expect("non-empty shape");
                let mut dx = vec![0.0; self.val(*x).len()];
                for (r, row) in g.data().chunks(len).enumerate() {
                    dx[r * n + start..r * n + start + len].copy_from_slice(row);
                }
                acc(*x, Tensor::new(xs, dx).expect("shape"));
            }
        }
    }
}

fn bin(i: usize, n: usize, bins: usize) -> (usize, usize) {
    (i * n / bins, ((i + 1) * n).div_ceil(bins))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(N, H, W)` of a `[C, H, W]` (N = 1) or `[C, N, H, W]` shape.
fn split_batch(xs: &[usize]) -> Option<(usize, usize, usize)> {
    match *xs {
        [_, h, w] => Some((1, h, w)),
        [_, n, h, w] => Some((n, h, w)),
        _ => None,
    }
}

/// Output shape with `c` channels and the batch axis of `xs`, if it has one.
fn batched_shape(c: usize, xs: &[usize], h: usize, w: usize) -> Vec<usize> {
    if xs.len() == 4 {
        vec![c, xs[1], h, w]
    } else {
        vec![c, h, w]
    }
}

fn conv_geom(op: &'static str, xs: &[usize], ks: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    let Some((batch, in_h, in_w)) =
        split_batch(xs).filter(|_| ks.len() == 4 && ks[2] == ks[3] && ks[1] == xs[0] && stride > 0)
    else {
        return Err(shape_err(op, format!("input {xs:?}, kernels {ks:?}, stride {stride}")));
    };
    let kk = ks[2];
    if in_h + 2 * pad < kk || in_w + 2 * pad < kk {
        return Err(shape_err(
            op,
            format!("kernel {kk} larger than padded input {xs:?} (pad {pad})"),
        ));
    }
    Ok(ConvGeom {
        channels: xs[0],
        batch,
        in_h,
        in_w,
        kernel: kk,
        stride,
        pad,
        out_h: (in_h + 2 * pad - kk) / stride + 1,
        out_w: (in_w + 2 * pad - kk) / stride + 1,
    })
}
