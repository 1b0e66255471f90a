//! Define-by-run tape. Every op appends a node holding its output value and
//! enough saved state to run its backward rule; `backward` replays the nodes
//! in reverse order, which is a valid topological order by construction.

use std::collections::HashMap;

use super::kernels::{self, Window};
use super::params::{ParamId, ParamStore};
use crate::tensor::{NdArray, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Variable,
    Param(ParamId),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Sigmoid(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        win: Window,
        filters: usize,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        input: Var,
        gamma: Var,
        beta: Var,
        centered: Vec<f64>,
        inv_std: Vec<f64>,
    },
    WeightedBce {
        logits: Var,
        labels: Vec<f64>,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: NdArray,
    op: Op,
    requires_grad: bool,
}

/// Per-channel statistics of one training-mode batch norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Result of a backward sweep: one optional gradient per tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<NdArray>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&NdArray> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn dims4(op: &'static str, a: &NdArray) -> Result<(usize, usize, usize, usize)> {
    match *a.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(TensorError::shape(op, "rank-4 [N,C,H,W]", s)),
    }
}

fn same_shape(op: &'static str, a: &NdArray, b: &NdArray) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(op, format!("{:?}", a.shape()), b.shape()));
    }
    Ok(())
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

    pub fn value(&self, var: Var) -> &NdArray {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op_name: &'static str, value: NdArray, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a value that is not differentiated (images, labels).
    pub fn constant(&mut self, value: NdArray) -> Result<Var> {
        self.push("constant", value, Op::Constant, false)
    }

    /// Records a free value whose gradient is wanted.
    pub fn variable(&mut self, value: NdArray) -> Result<Var> {
        self.push("variable", value, Op::Variable, true)
    }

    /// Records a parameter; repeated calls with the same id reuse one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param(id),
            requires_grad: p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub(crate) fn param_vars(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((Var(i), id)),
            _ => None,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = NdArray::from_parts(x.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        self.push("add", out, Op::Add(a, b), rg)
    }

    /// Elementwise product of equally shaped values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = NdArray::from_parts(x.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        self.push("mul", out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let x = self.value(a);
        let out = NdArray::from_parts(x.shape().to_vec(), x.data().iter().map(|v| v * k).collect());
        let rg = self.rg(&[a]);
        self.push("scale", out, Op::Scale(a, k), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push("sum", NdArray::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        let rg = self.rg(&[a]);
        self.push("mean", NdArray::scalar(s), Op::Mean(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let out = NdArray::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect());
        let rg = self.rg(&[a]);
        self.push("relu", out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let out = NdArray::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| sigmoid(v)).collect());
        let rg = self.rg(&[a]);
        self.push("sigmoid", out, Op::Sigmoid(a), rg)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(
                *inputs
                    .first()
                    .ok_or_else(|| TensorError::Contract("concat of zero inputs".into()))?,
            )
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::shape(
                "concat",
                format!("axis < rank {}", first.len()),
                axis,
            ));
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            if s.len() != first.len() || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(TensorError::shape("concat", format!("{first:?} off axis {axis}"), s));
            }
            total += s[axis];
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let x = self.value(v);
                let chunk = x.shape()[axis] * inner;
                data.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.rg(inputs);
        self.push(
            "concat",
            NdArray::from_parts(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// 2-D cross-correlation: `[N,C,H,W] * [F,C,kh,kw] + bias[F]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (n, c, h, w) = dims4("conv2d", self.value(input))?;
        let (f, wc, kh, kw) = dims4("conv2d weight", self.value(weight))?;
        if wc != c {
            return Err(TensorError::shape(
                "conv2d",
                format!("weight with {c} input channels"),
                self.value(weight).shape(),
            ));
        }
        if stride == 0 {
            return Err(TensorError::Contract("conv2d stride must be >= 1".into()));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel <= padded input {}x{}", h + 2 * padding, w + 2 * padding),
                [kh, kw],
            ));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [f] {
                return Err(TensorError::shape(
                    "conv2d bias",
                    format!("[{f}]"),
                    self.value(b).shape(),
                ));
            }
        }
        let win = Window {
            batch: n,
            channels: c,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
        };
        let data = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            f,
            &win,
        );
        let out = NdArray::from_parts(vec![n, f, win.out_h(), win.out_w()], data);
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        self.push(
            "conv2d",
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                win,
                filters: f,
            },
            rg,
        )
    }

    pub fn max_pool2d(&mut self, input: Var, size: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = dims4("max_pool2d", self.value(input))?;
        if stride == 0 || size == 0 || size > h || size > w {
            return Err(TensorError::Contract(format!(
                "max_pool2d window {size} stride {stride} on {h}x{w}"
            )));
        }
        let win = Window {
            batch: n,
            channels: c,
            height: h,
            width: w,
            kernel_h: size,
            kernel_w: size,
            stride,
            padding: 0,
        };
        let (data, argmax) = kernels::max_pool2d_forward(self.value(input).data(), &win);
        let out = NdArray::from_parts(vec![n, c, win.out_h(), win.out_w()], data);
        let rg = self.rg(&[input]);
        self.push("max_pool2d", out, Op::MaxPool2d { input, argmax }, rg)
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = dims4("global_avg_pool", self.value(input))?;
        let hw = h * w;
        let data = self
            .value(input)
            .data()
            .chunks_exact(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let rg = self.rg(&[input]);
        self.push(
            "global_avg_pool",
            NdArray::from_parts(vec![n, c], data),
            Op::GlobalAvgPool(input),
            rg,
        )
    }

    /// Fully connected layer: `x[N,I] * W[O,I]^T + b[O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let wt = self.value(weight);
        let (n, i) = match *x.shape() {
            [n, i] => (n, i),
            ref s => return Err(TensorError::shape("linear", "rank-2 [N,I]", s)),
        };
        let o = match *wt.shape() {
            [o, wi] if wi == i => o,
            ref s => return Err(TensorError::shape("linear weight", format!("[O,{i}]"), s)),
        };
        let mut data = vec![0.0; n * o];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [o] {
                return Err(TensorError::shape("linear bias", format!("[{o}]"), bv.shape()));
            }
            for row in data.chunks_exact_mut(o) {
                row.copy_from_slice(bv.data());
            }
        }
        kernels::gemm(
            n,
            i,
            o,
            1.0,
            x.data(),
            (i as isize, 1),
            wt.data(),
            (1, i as isize),
            1.0,
            &mut data,
            (o as isize, 1),
        );
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        self.push(
            "linear",
            NdArray::from_parts(vec![n, o], data),
            Op::Linear { input, weight, bias },
            rg,
        )
    }

    fn bn_check(&self, input: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = dims4("batch_norm2d", self.value(input))?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(TensorError::shape(
                    "batch_norm2d affine",
                    format!("[{c}]"),
                    self.value(p).shape(),
                ));
            }
        }
        Ok((n, c, h * w))
    }

    /// Training-mode batch norm over `(N, H, W)` per channel.
    pub fn batch_norm2d_train(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, c, hw) = self.bn_check(input, gamma, beta)?;
        let m = (n * hw) as f64;
        let x = self.value(input).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for s in 0..n {
            for ch in 0..c {
                mean[ch] += x[(s * c + ch) * hw..][..hw].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for s in 0..n {
            for ch in 0..c {
                var[ch] += x[(s * c + ch) * hw..][..hw]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / m + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                for k in off..off + hw {
                    xhat[k] = (x[k] - mean[ch]) * inv_std[ch];
                    out[k] = g[ch] * xhat[k] + b[ch];
                }
            }
        }
        let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        let stats = BatchStats {
            mean,
            var: var.iter().map(|v| v / m * unbiased).collect(),
        };
        let shape = self.value(input).shape().to_vec();
        let rg = self.rg(&[input, gamma, beta]);
        let v = self.push(
            "batch_norm2d",
            NdArray::from_parts(shape, out),
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )?;
        Ok((v, stats))
    }

    /// Eval-mode batch norm: a fixed per-channel affine map built from running statistics.
    pub fn batch_norm2d_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (n, c, hw) = self.bn_check(input, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::shape(
                "batch_norm2d running stats",
                format!("[{c}]"),
                running_mean.len(),
            ));
        }
        let x = self.value(input).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut centered = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                for k in off..off + hw {
                    centered[k] = x[k] - running_mean[ch];
                    out[k] = g[ch] * centered[k] * inv_std[ch] + b[ch];
                }
            }
        }
        let shape = self.value(input).shape().to_vec();
        let rg = self.rg(&[input, gamma, beta]);
        self.push(
            "batch_norm2d",
            NdArray::from_parts(shape, out),
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                centered,
                inv_std,
            },
            rg,
        )
    }

    /// Mean of `w * [softplus(z) - y z]` over every element, i.e. weighted
    /// binary cross-entropy evaluated directly from logits.
    /// `weights` holds one weight per element (already chosen by label).
    pub fn weighted_bce_with_logits(&mut self, logits: Var, labels: &[f64], weights: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if labels.len() != z.len() || weights.len() != z.len() {
            return Err(TensorError::shape(
                "weighted_bce",
                format!("{} labels and weights", z.len()),
                (labels.len(), weights.len()),
            ));
        }
        let total: f64 = z
            .data()
            .iter()
            .zip(labels)
            .zip(weights)
            .map(|((&z, &y), &w)| w * bce_term(z, y))
            .sum();
        let loss = total / z.len() as f64;
        let rg = self.rg(&[logits]);
        self.push(
            "weighted_bce",
            NdArray::scalar(loss),
            Op::WeightedBce {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| TensorError::Contract("loss is not recorded on this tape".into()))?;
        if !node.value.is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.backprop(&node.op, &node.value, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| NdArray::from_parts(n.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, op: &Op, out: &NdArray, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match op {
            Op::Constant | Op::Variable | Op::Param(_) => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        accumulate(grads, v, g.to_vec());
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.iter().zip(val(*b)).map(|(g, y)| g * y).collect());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.iter().zip(val(*a)).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(a, k) => accumulate(grads, *a, g.iter().map(|g| g * k).collect()),
            Op::Sum(a) => accumulate(grads, *a, vec![g[0]; val(*a).len()]),
            Op::Mean(a) => {
                let n = val(*a).len();
                accumulate(grads, *a, vec![g[0] / n as f64; n]);
            }
            Op::Relu(a) => accumulate(
                grads,
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect(),
            ),
            Op::Sigmoid(a) => accumulate(
                grads,
                *a,
                g.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect(),
            ),
            Op::Concat { inputs, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.nodes[v.0].value.shape()[*axis] * inner;
                    if self.wants(v) {
                        let mut part = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            part.extend_from_slice(&g[o * row + offset..][..chunk]);
                        }
                        accumulate(grads, v, part);
                    }
                    offset += chunk;
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                win,
                filters,
            } => {
                let cg = kernels::conv2d_backward(val(*input), val(*weight), g, *filters, win, self.wants(*input));
                if let Some(dx) = cg.input {
                    accumulate(grads, *input, dx);
                }
                if self.wants(*weight) {
                    accumulate(grads, *weight, cg.weight);
                }
                if let Some(b) = bias {
                    if self.wants(*b) {
                        accumulate(grads, *b, cg.bias);
                    }
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let mut dx = vec![0.0; val(*input).len()];
                for (g, &i) in g.iter().zip(argmax) {
                    dx[i] += g;
                }
                accumulate(grads, *input, dx);
            }
            Op::GlobalAvgPool(a) => {
                let x = &self.nodes[a.0].value;
                let hw = x.shape()[2] * x.shape()[3];
                let mut dx = Vec::with_capacity(x.len());
                for gv in g {
                    dx.extend(std::iter::repeat_n(gv / hw as f64, hw));
                }
                accumulate(grads, *a, dx);
            }
            Op::Linear { input, weight, bias } => {
                let x = &self.nodes[input.0].value;
                let (n, i) = (x.shape()[0], x.shape()[1]);
                let o = out.shape()[1];
                if self.wants(*input) {
                    let mut dx = vec![0.0; n * i];
                    kernels::gemm(
                        n,
                        o,
                        i,
                        1.0,
                        g,
                        (o as isize, 1),
                        val(*weight),
                        (i as isize, 1),
                        0.0,
                        &mut dx,
                        (i as isize, 1),
                    );
                    accumulate(grads, *input, dx);
                }
                if self.wants(*weight) {
                    let mut dw = vec![0.0; o * i];
                    kernels::gemm(
                        o,
                        n,
                        i,
                        1.0,
                        g,
                        (1, o as isize),
                        x.data(),
                        (i as isize, 1),
                        0.0,
                        &mut dw,
                        (i as isize, 1),
                    );
                    accumulate(grads, *weight, dw);
                }
                if let Some(b) = bias {
                    if self.wants(*b) {
                        let mut db = vec![0.0; o];
                        for row in g.chunks_exact(o) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(grads, *b, db);
                    }
                }
            }
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let s = out.shape();
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let m = (n * hw) as f64;
                let gm = val(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for smp in 0..n {
                    for ch in 0..c {
                        let off = (smp * c + ch) * hw;
                        for k in off..off + hw {
                            dgamma[ch] += g[k] * xhat[k];
                            dbeta[ch] += g[k];
                        }
                    }
                }
                if self.wants(*input) {
                    // dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)), dxhat = g*gamma
                    let mut dx = vec![0.0; g.len()];
                    for smp in 0..n {
                        for ch in 0..c {
                            let off = (smp * c + ch) * hw;
                            let (sum_dxhat, sum_dxhat_xhat) = (gm[ch] * dbeta[ch], gm[ch] * dgamma[ch]);
                            for k in off..off + hw {
                                let dxhat = g[k] * gm[ch];
                                dx[k] = inv_std[ch] / m * (m * dxhat - sum_dxhat - xhat[k] * sum_dxhat_xhat);
                            }
                        }
                    }
                    accumulate(grads, *input, dx);
                }
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                centered,
                inv_std,
            } => {
                let s = out.shape();
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let gm = val(*gamma);
                let mut dx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for smp in 0..n {
                    for ch in 0..c {
                        let off = (smp * c + ch) * hw;
                        for k in off..off + hw {
                            dx[k] = g[k] * gm[ch] * inv_std[ch];
                            dgamma[ch] += g[k] * centered[k] * inv_std[ch];
                            dbeta[ch] += g[k];
                        }
                    }
                }
                if self.wants(*input) {
                    accumulate(grads, *input, dx);
                }
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::WeightedBce {
                logits,
                labels,
                weights,
            } => {
                let z = val(*logits);
                let scale = g[0] / z.len() as f64;
                let dz = z
                    .iter()
                    .zip(labels)
                    .zip(weights)
                    .map(|((&z, &y), &w)| scale * w * (sigmoid(z) - y))
                    .collect();
                accumulate(grads, *logits, dz);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, delta: Vec<f64>) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(&delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Unweighted binary cross-entropy of one logit/label pair:
/// `-y log s(z) - (1-y) log(1 - s(z)) = softplus(z) - y z`.
pub fn bce_term(z: f64, y: f64) -> f64 {
    softplus(z) - y * z
}
