//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in creation order; because an operation
//! can only consume values that already exist, creation order is a valid
//! topological order and [`Tape::backward`] simply replays it in reverse.
//!
//! ```
//! use dagger_core::autodiff::Tape;
//! use dagger_core::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]), true);
//! let loss = tape.sum(w);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap(), &[1.0, 1.0, 1.0]);
//! ```

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Batch-norm configuration for one call.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormArgs<'a> {
    pub running_mean: &'a [f64],
    pub running_var: &'a [f64],
    pub mode: NormMode,
    pub eps: f64,
    pub momentum: f64,
}

/// Running statistics produced by a train-mode batch-norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        geom: ConvGeom,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Act {
        input: Var,
        kind: Activation,
    },
    AvgPool {
        input: Var,
        window: usize,
        stride: usize,
    },
    GlobalAvgPool(Var),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mode: NormMode,
    },
    ChannelScale {
        input: Var,
        scale: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    OneMinus(Var),
    Sum(Var),
    Reshape(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input value; gradients are only tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// 2-D cross-correlation over an NCHW input with `[out, in/groups, kh, kw]` weights.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize, groups: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape("conv2d rank", "4-D input and weight", (&xs, &ws)));
        }
        if groups == 0 || !xs[1].is_multiple_of(groups) || !ws[0].is_multiple_of(groups) {
            return Err(Error::shape(
                "conv2d groups",
                format!("channels divisible by {groups}"),
                (xs[1], ws[0]),
            ));
        }
        if ws[1] * groups != xs[1] {
            return Err(Error::shape("conv2d input channels", ws[1] * groups, xs[1]));
        }
        if stride == 0 || xs[2] + 2 * padding < ws[2] || xs[3] + 2 * padding < ws[3] {
            return Err(Error::shape(
                "conv2d spatial extent",
                format!("kernel {}x{} fitting padded input", ws[2], ws[3]),
                (xs[2] + 2 * padding, xs[3] + 2 * padding),
            ));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_channels: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            out_channels: ws[0],
            kernel_h: ws[2],
            kernel_w: ws[3],
            stride,
            padding,
            groups,
        };
        let out = kernels::conv2d_forward(self.value(input).data(), self.value(weight).data(), &geom);
        let value = Tensor::new(vec![geom.batch, geom.out_channels, geom.out_h(), geom.out_w()], out)?;
        let rg = self.rg(&[input, weight]);
        Ok(self.push(value, rg, Op::Conv2d { input, weight, geom }))
    }

    /// Affine map `x W^T + b` for `x: [N, d]`, `W: [out, d]`, `b: [out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape("linear", format!("[N, {}]", ws.get(1).copied().unwrap_or(0)), &xs));
        }
        if let Some(b) = bias {
            if self.shape(b) != [ws[0]] {
                return Err(Error::shape("linear bias", [ws[0]], self.shape(b)));
            }
        }
        let y = kernels::linear_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            xs[0],
            xs[1],
            ws[0],
        );
        let value = Tensor::new(vec![xs[0], ws[0]], y)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(value, rg, Op::Linear { input, weight, bias }))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let x = self.value(input);
        let data = match kind {
            Activation::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
            Activation::Sigmoid => x.data().iter().map(|&v| kernels::sigmoid(v)).collect(),
        };
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[input]);
        self.push(value, rg, Op::Act { input, kind })
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }

    /// Average pooling without padding; the window must tile the input exactly.
    pub fn avgpool(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("avgpool rank", 4, xs.len()));
        }
        let (h, w) = (xs[2], xs[3]);
        if window == 0 || stride == 0 || window > h || window > w || !(h - window).is_multiple_of(stride) || !(w - window).is_multiple_of(stride) {
            return Err(Error::shape(
                "avgpool tiling",
                format!("window {window} stride {stride} tiling the input exactly"),
                (h, w),
            ));
        }
        let y = kernels::avgpool_forward(self.value(input).data(), xs[0] * xs[1], h, w, window, stride);
        let value = Tensor::new(
            vec![xs[0], xs[1], (h - window) / stride + 1, (w - window) / stride + 1],
            y,
        )?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, rg, Op::AvgPool { input, window, stride }))
    }

    /// Mean over the spatial axes of an NCHW tensor, keeping `[N, C, 1, 1]`.
    pub fn global_avgpool(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("global avgpool rank", 4, xs.len()));
        }
        let area = xs[2] * xs[3];
        let y: Vec<f64> = self
            .value(input)
            .data()
            .chunks(area)
            .map(|c| c.iter().sum::<f64>() / area as f64)
            .collect();
        let value = Tensor::new(vec![xs[0], xs[1], 1, 1], y)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, rg, Op::GlobalAvgPool(input)))
    }

    /// Per-channel normalization of `[N, C, ...]` input. In train mode the
    /// batch statistics are used and updated running statistics are returned.
    pub fn batchnorm(&mut self, input: Var, gamma: Var, beta: Var, args: BatchNormArgs<'_>) -> Result<(Var, Option<RunningStats>)> {
        let xs = self.shape(input).to_vec();
        if xs.len() < 2 {
            return Err(Error::shape("batchnorm rank", ">= 2", xs.len()));
        }
        let (n, c) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        for (what, len) in [
            ("gamma", self.shape(gamma).iter().product::<usize>()),
            ("beta", self.shape(beta).iter().product()),
            ("running mean", args.running_mean.len()),
            ("running var", args.running_var.len()),
        ] {
            if len != c {
                return Err(Error::shape(format!("batchnorm {what}"), c, len));
            }
        }
        let x = self.value(input).data();
        let count = (n * spatial) as f64;
        let idx = |i: usize, ch: usize, s: usize| (i * c + ch) * spatial + s;
        let (mean, var, stats) = match args.mode {
            NormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for i in 0..n {
                        for k in 0..spatial {
                            s += x[idx(i, ch, k)];
                        }
                    }
                    mean[ch] = s / count;
                    let mut v = 0.0;
                    for i in 0..n {
                        for k in 0..spatial {
                            let d = x[idx(i, ch, k)] - mean[ch];
                            v += d * d;
                        }
                    }
                    var[ch] = v / count;
                }
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let m = args.momentum;
                let stats = RunningStats {
                    mean: args.running_mean.iter().zip(&mean).map(|(r, b)| (1.0 - m) * r + m * b).collect(),
                    var: args.running_var.iter().zip(&var).map(|(r, b)| (1.0 - m) * r + m * b * unbias).collect(),
                };
                (mean, var, Some(stats))
            }
            NormMode::Eval => (args.running_mean.to_vec(), args.running_var.to_vec(), None),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + args.eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for i in 0..n {
            for ch in 0..c {
                for k in 0..spatial {
                    let j = idx(i, ch, k);
                    xhat[j] = (x[j] - mean[ch]) * inv_std[ch];
                    y[j] = g[ch] * xhat[j] + b[ch];
                }
            }
        }
        let value = Tensor::new(xs, y)?;
        let rg = self.rg(&[input, gamma, beta]);
        let var_out = self.push(
            value,
            rg,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                mode: args.mode,
            },
        );
        Ok((var_out, stats))
    }

    /// Multiplies channel `i` of a `[N, C, ...]` tensor by `scale[i]`.
    pub fn channel_scale(&mut self, input: Var, scale: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let c = xs.get(1).copied().unwrap_or(0);
        if self.value(scale).numel() != c {
            return Err(Error::shape("channel scale", c, self.value(scale).numel()));
        }
        let inner: usize = xs[2..].iter().product();
        let s = self.value(scale).data();
        let y: Vec<f64> = self
            .value(input)
            .data()
            .iter()
            .enumerate()
            .map(|(j, &v)| v * s[(j / inner) % c])
            .collect();
        let value = Tensor::new(xs, y)?;
        let rg = self.rg(&[input, scale]);
        Ok(self.push(value, rg, Op::ChannelScale { input, scale }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let y = self.zip(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let y = self.zip(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.map(a, |x| x * c);
        let rg = self.rg(&[a]);
        self.push(y, rg, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let y = self.map(a, |x| x + c);
        let rg = self.rg(&[a]);
        self.push(y, rg, Op::AddScalar(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let y = self.map(a, |x| 1.0 - x);
        let rg = self.rg(&[a]);
        self.push(y, rg, Op::OneMinus(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), rg, Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(y, rg, Op::Reshape(a)))
    }

    /// Mean negative log-softmax of the labelled class over a `[N, K]` batch.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let zs = self.shape(logits).to_vec();
        if zs.len() != 2 || zs[0] != labels.len() {
            return Err(Error::shape("cross entropy logits", format!("[{}, K]", labels.len()), &zs));
        }
        let (n, k) = (zs[0], zs[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Invalid(format!("label {bad} out of range for {k} classes")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &z[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + denom.ln();
            for j in 0..k {
                probs[i * k + j] = (row[j] - max).exp() / denom;
            }
            loss += lse - row[labels[i]];
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(what, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value(a);
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward", "scalar loss", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, g: Vec<f64>| accumulate(&mut grads[v.0], g);
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, geom } => {
                if needs(*input) {
                    send(*input, kernels::conv2d_backward_input(gy, self.value(*weight).data(), geom));
                }
                if needs(*weight) {
                    send(*weight, kernels::conv2d_backward_weight(gy, self.value(*input).data(), geom));
                }
            }
            Op::Linear { input, weight, bias } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (n, d, o) = (x.shape()[0], x.shape()[1], w.shape()[0]);
                if needs(*input) {
                    let mut gx = vec![0.0; n * d];
                    for i in 0..n {
                        for j in 0..o {
                            let g = gy[i * o + j];
                            let wr = &w.data()[j * d..(j + 1) * d];
                            gx[i * d..(i + 1) * d].iter_mut().zip(wr).for_each(|(a, b)| *a += g * b);
                        }
                    }
                    send(*input, gx);
                }
                if needs(*weight) {
                    let mut gw = vec![0.0; o * d];
                    for i in 0..n {
                        let xr = &x.data()[i * d..(i + 1) * d];
                        for j in 0..o {
                            let g = gy[i * o + j];
                            gw[j * d..(j + 1) * d].iter_mut().zip(xr).for_each(|(a, b)| *a += g * b);
                        }
                    }
                    send(*weight, gw);
                }
                if let Some(b) = bias {
                    if needs(*b) {
                        let mut gb = vec![0.0; o];
                        for i in 0..n {
                            gb.iter_mut().zip(&gy[i * o..(i + 1) * o]).for_each(|(a, g)| *a += g);
                        }
                        send(*b, gb);
                    }
                }
            }
            Op::Act { input, kind } => {
                if needs(*input) {
                    let g = match kind {
                        Activation::Relu => self
                            .value(*input)
                            .data()
                            .iter()
                            .zip(gy)
                            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                            .collect(),
                        Activation::Sigmoid => node
                            .value
                            .data()
                            .iter()
                            .zip(gy)
                            .map(|(&s, &g)| g * s * (1.0 - s))
                            .collect(),
                    };
                    send(*input, g);
                }
            }
            Op::AvgPool { input, window, stride } => {
                if needs(*input) {
                    let xs = self.shape(*input);
                    send(
                        *input,
                        kernels::avgpool_backward(gy, xs[0] * xs[1], xs[2], xs[3], *window, *stride),
                    );
                }
            }
            Op::GlobalAvgPool(input) => {
                if needs(*input) {
                    let xs = self.shape(*input);
                    let area = xs[2] * xs[3];
                    let g = gy
                        .iter()
                        .flat_map(|&g| std::iter::repeat_n(g / area as f64, area))
                        .collect();
                    send(*input, g);
                }
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, mode } => {
                let xs = self.shape(*input);
                let (n, c) = (xs[0], xs[1]);
                let spatial: usize = xs[2..].iter().product();
                let count = (n * spatial) as f64;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dxhat_sum = vec![0.0; c];
                let mut dxhat_xhat = vec![0.0; c];
                for i in 0..n {
                    for ch in 0..c {
                        for k in 0..spatial {
                            let j = (i * c + ch) * spatial + k;
                            dbeta[ch] += gy[j];
                            dgamma[ch] += gy[j] * xhat[j];
                            dxhat_sum[ch] += gy[j] * gam[ch];
                            dxhat_xhat[ch] += gy[j] * gam[ch] * xhat[j];
                        }
                    }
                }
                if needs(*input) {
                    let mut gx = vec![0.0; gy.len()];
                    for i in 0..n {
                        for ch in 0..c {
                            for k in 0..spatial {
                                let j = (i * c + ch) * spatial + k;
                                let dxh = gy[j] * gam[ch];
                                gx[j] = match mode {
                                    NormMode::Eval => dxh * inv_std[ch],
                                    NormMode::Train => {
                                        inv_std[ch] / count
                                            * (count * dxh - dxhat_sum[ch] - xhat[j] * dxhat_xhat[ch])
                                    }
                                };
                            }
                        }
                    }
                    send(*input, gx);
                }
                if needs(*gamma) {
                    send(*gamma, dgamma);
                }
                if needs(*beta) {
                    send(*beta, dbeta);
                }
            }
            Op::ChannelScale { input, scale } => {
                let xs = self.shape(*input);
                let c = xs[1];
                let inner: usize = xs[2..].iter().product();
                let s = self.value(*scale).data();
                if needs(*input) {
                    let g = gy.iter().enumerate().map(|(j, &g)| g * s[(j / inner) % c]).collect();
                    send(*input, g);
                }
                if needs(*scale) {
                    let x = self.value(*input).data();
                    let mut gs = vec![0.0; c];
                    for (j, (&g, &v)) in gy.iter().zip(x).enumerate() {
                        gs[(j / inner) % c] += g * v;
                    }
                    send(*scale, gs);
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    send(*a, gy.to_vec());
                }
                if needs(*b) {
                    send(*b, gy.to_vec());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if needs(*a) {
                    send(*a, gy.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if needs(*b) {
                    send(*b, gy.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    send(*a, gy.iter().map(|g| g * c).collect());
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if needs(*a) {
                    send(*a, gy.to_vec());
                }
            }
            Op::OneMinus(a) => {
                if needs(*a) {
                    send(*a, gy.iter().map(|g| -g).collect());
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    send(*a, vec![gy[0]; self.value(*a).numel()]);
                }
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                if needs(*logits) {
                    let n = labels.len();
                    let k = probs.len() / n.max(1);
                    let scale = gy[0] / n as f64;
                    let mut g: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (i, &l) in labels.iter().enumerate() {
                        g[i * k + l] -= scale;
                    }
                    send(*logits, g);
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap(), true);
        let s = tape.sum(w);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn reused_value_accumulates() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_vec(vec![2.0, -1.0]), true);
        let a = tape.scale(w, 3.0);
        let b = tape.mul(w, w).unwrap();
        let both = tape.add(a, b).unwrap();
        let s = tape.sum(both);
        let g = tape.backward(s).unwrap();
        // d/dw (3w + w^2) = 3 + 2w
        assert_eq!(g.get(w).unwrap(), &[7.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        assert!(tape.backward(w).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let w = tape.leaf(Tensor::from_vec(vec![3.0, 4.0]), true);
        let p = tape.mul(c, w).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(w).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_sign_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_points() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![0.0, 20.0, -20.0, -800.0]));
        let y = tape.sigmoid(x);
        let v = tape.value(y).data();
        assert_eq!(v[0], 0.5);
        assert!((v[1] - 1.0).abs() < 1e-8);
        assert!(v[2].abs() < 1e-8);
        assert!(v[3] >= 0.0 && v[3].is_finite());
    }

    #[test]
    fn avgpool_mean_and_tiling() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let y = tape.avgpool(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);

        let c = tape.constant(Tensor::full(&[2, 3, 4, 4], 2.5));
        let y = tape.avgpool(c, 2, 2).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 2.5));

        let odd = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(tape.avgpool(odd, 2, 2).is_err());
    }

    #[test]
    fn conv_constant_sum_and_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let w = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let y = tape.conv2d(x, w, 1, 0, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[4.0; 4]);

        let data: Vec<f64> = (0..18).map(|v| v as f64 * 0.5 - 3.0).collect();
        let x = tape.constant(Tensor::new(vec![1, 2, 3, 3], data.clone()).unwrap());
        let mut eye = vec![0.0; 4];
        eye[0] = 1.0;
        eye[3] = 1.0;
        let w = tape.constant(Tensor::new(vec![2, 2, 1, 1], eye).unwrap());
        let y = tape.conv2d(x, w, 1, 0, 1).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn conv_shape_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 3, 4, 4]));
        let w = tape.constant(Tensor::ones(&[2, 2, 3, 3]));
        let err = tape.conv2d(x, w, 1, 1, 1).unwrap_err();
        assert!(err.to_string().contains("conv2d input channels"), "{err}");
        let big = tape.constant(Tensor::ones(&[2, 3, 7, 7]));
        assert!(tape.conv2d(x, big, 1, 0, 1).is_err());
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let eye = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let zero_b = tape.constant(Tensor::zeros(&[2]));
        let y = tape.linear(x, eye, Some(zero_b)).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let zw = tape.constant(Tensor::zeros(&[3, 2]));
        let b = tape.constant(Tensor::from_vec(vec![0.5, -1.0, 2.0]));
        let y = tape.linear(x, zw, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);

        let bad = tape.constant(Tensor::zeros(&[3, 5]));
        assert!(tape.linear(x, bad, None).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[3, 10]));
        let l = tape.softmax_cross_entropy(z, &[0, 4, 9]).unwrap();
        assert_eq!(tape.value(l).item(), 10f64.ln());

        let mut logits = vec![0.0; 10];
        logits[3] = 30.0;
        let z = tape.constant(Tensor::new(vec![1, 10], logits).unwrap());
        let l = tape.softmax_cross_entropy(z, &[3]).unwrap();
        assert!(tape.value(l).item() < 1e-9);

        assert!(tape.softmax_cross_entropy(z, &[10]).is_err());
    }

    #[test]
    fn batchnorm_constant_channel_collapses_to_beta() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[4, 2, 2, 2], 3.0));
        let g = tape.constant(Tensor::from_vec(vec![1.5, 0.5]));
        let b = tape.constant(Tensor::from_vec(vec![0.25, -2.0]));
        let (rm, rv) = (vec![0.0; 2], vec![1.0; 2]);
        let args = BatchNormArgs {
            running_mean: &rm,
            running_var: &rv,
            mode: NormMode::Train,
            eps: 1e-5,
            momentum: 0.1,
        };
        let (y, stats) = tape.batchnorm(x, g, b, args).unwrap();
        for (j, v) in tape.value(y).data().iter().enumerate() {
            let want = if (j / 4) % 2 == 0 { 0.25 } else { -2.0 };
            assert!((v - want).abs() < 1e-12);
        }
        let stats = stats.unwrap();
        assert!((stats.mean[0] - 0.3).abs() < 1e-12);
        assert!((stats.var[0] - 0.9).abs() < 1e-12);

        let bad = tape.constant(Tensor::from_vec(vec![1.0; 3]));
        assert!(tape.batchnorm(x, bad, b, args).is_err());
    }

    #[test]
    fn batchnorm_unit_batch_is_nearly_identity() {
        // zero-mean, unit-variance batch per channel
        let data = [1.0, -1.0, 1.0, -1.0, 2.0f64.sqrt(), 0.0, -(2.0f64.sqrt()), 0.0];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![4, 2], vec![data[0], data[4], data[1], data[5], data[2], data[6], data[3], data[7]]).unwrap());
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let (rm, rv) = (vec![0.0; 2], vec![1.0; 2]);
        let eps = 1e-5;
        let args = BatchNormArgs {
            running_mean: &rm,
            running_var: &rv,
            mode: NormMode::Train,
            eps,
            momentum: 0.1,
        };
        let (y, _) = tape.batchnorm(x, g, b, args).unwrap();
        // the residual is exactly |x| * (1 - 1/sqrt(1 + eps)), about 5e-6 per unit of |x|
        let shrink = 1.0 - 1.0 / (1.0 + eps).sqrt();
        for (o, i) in tape.value(y).data().iter().zip(tape.value(x).data()) {
            assert!((o - i).abs() <= i.abs() * shrink + 1e-12);
            assert!((o - i).abs() < 1e-5);
        }
    }
}
