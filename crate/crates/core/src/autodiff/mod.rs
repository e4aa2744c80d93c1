//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! A [`Graph`] owns every node created during one forward pass. Nodes are
//! appended in creation order, which is already a topological order, so
//! [`Graph::backward`] simply walks the tape in reverse. That fixed order
//! makes every gradient reduction deterministic.
//!
//! ```
//! use sosd_core::autodiff::Graph;
//! use sosd_core::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

pub mod gradcheck;
mod kernels;

pub use kernels::Padding;

use kernels::{bilinear_backward, bilinear_forward, gemm, ConvGeom};

use crate::error::{validate, Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

pub enum BnMode<'a> {
    /// Normalize with batch statistics. When `running` is given it is
    /// updated as `running = momentum·running + (1 − momentum)·batch`,
    /// with the unbiased batch variance.
    Train {
        momentum: f64,
        running: Option<&'a mut RunningStats>,
    },
    Eval(&'a RunningStats),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: usize, weight: usize, bias: Option<usize>, geom: ConvGeom, cols: Vec<f64> },
    BatchNorm { input: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Relu(usize),
    Mul(usize, usize),
    Add(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Concat(Vec<usize>),
    GlobalAvgPool(usize),
    Broadcast(usize),
    SafeSqrt { input: usize, floor: f64 },
    Upsample { input: usize, factor: usize },
    Sum(usize),
    GradScale(usize, f64),
    CrossEntropy { logits: usize, probs: Vec<f64>, labels: Vec<usize>, ignore: Option<usize>, count: usize },
    MaskedL1 { pred: usize, target: Vec<f64>, mask: Vec<bool>, count: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu(_) => "relu",
            Op::Mul(..) => "mul",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Concat(_) => "concat",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Broadcast(_) => "broadcast",
            Op::SafeSqrt { .. } => "safe_sqrt",
            Op::Upsample { .. } => "bilinear_upsample",
            Op::Sum(_) => "sum",
            Op::GradScale(..) => "grad_scale",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::MaskedL1 { .. } => "masked_l1",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::BatchNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
            Op::Relu(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::GlobalAvgPool(a)
            | Op::Broadcast(a)
            | Op::Sum(a)
            | Op::GradScale(a, _) => vec![*a],
            Op::Mul(a, b) | Op::Add(a, b) => vec![*a, *b],
            Op::Concat(v) => v.clone(),
            Op::SafeSqrt { input, .. } | Op::Upsample { input, .. } => vec![*input],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::MaskedL1 { pred, .. } => vec![*pred],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of one forward pass plus the gradients of its last backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.push_with(value, op, requires_grad)
    }

    fn push_with(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_with(value, Op::Leaf, requires_grad)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward's loss with respect to `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Every node `v` depends on, including `v`, in ascending order.
    pub fn ancestors(&self, v: Var) -> Vec<Var> {
        let mut seen = vec![false; v.0 + 1];
        let mut stack = vec![v.0];
        seen[v.0] = true;
        while let Some(i) = stack.pop() {
            for j in self.nodes[i].op.inputs() {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| Var(i)).collect()
    }

    /// Whether any node on the paths between `from` and `to` has op `name`.
    /// Both endpoints are included.
    pub fn path_contains(&self, from: Var, to: Var, name: &str) -> bool {
        let downstream = self.descendants(from);
        self.ancestors(to).into_iter().any(|v| downstream[v.0] && self.op_name(v) == name)
    }

    fn descendants(&self, from: Var) -> Vec<bool> {
        let mut reach = vec![false; self.nodes.len()];
        reach[from.0] = true;
        for i in from.0 + 1..self.nodes.len() {
            reach[i] = self.nodes[i].op.inputs().iter().any(|&j| reach[j]);
        }
        reach
    }

    // ---- operators -------------------------------------------------------

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: Padding,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(weight), stride, dilation, padding)?;
        if let Some(b) = bias {
            if self.value(b).len() != geom.out_c {
                return Err(Error::shape("conv2d bias", self.shape(b), &[geom.out_c]));
            }
        }
        let (k, p) = (geom.k(), geom.p());
        let in_len = geom.in_c * geom.h * geom.w;
        let mut cols = vec![0.0; geom.n * k * p];
        let mut out = vec![0.0; geom.n * geom.out_c * p];
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        for n in 0..geom.n {
            let c = &mut cols[n * k * p..(n + 1) * k * p];
            geom.im2col(&x[n * in_len..(n + 1) * in_len], c);
            let o = &mut out[n * geom.out_c * p..(n + 1) * geom.out_c * p];
            if let Some(b) = bias {
                let bv = self.value(b).data();
                for (oc, row) in o.chunks_exact_mut(p).enumerate() {
                    row.fill(bv[oc]);
                }
            }
            gemm(geom.out_c, k, p, wt, k as isize, 1, c, p as isize, 1, 1.0, o);
        }
        let value = Tensor::new(vec![geom.n, geom.out_c, geom.oh, geom.ow], out)?;
        Ok(self.push(value, Op::Conv2d { input: input.0, weight: weight.0, bias: bias.map(|b| b.0), geom, cols }))
    }

    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, mode: BnMode<'_>, eps: f64) -> Result<Var> {
        let (n, c, h, w) = self.value(input).nchw()?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape("batch_norm", self.shape(input), self.shape(gamma)));
        }
        let m = n * h * w;
        validate(m > 0, || "batch_norm: zero-size batch".into())?;
        let hw = h * w;
        let x = self.value(input).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let train = matches!(mode, BnMode::Train { .. });
        match &mode {
            BnMode::Train { .. } => {
                for ch in 0..c {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += x[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut q = 0.0;
                    for i in 0..n {
                        q += x[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                            .iter()
                            .map(|v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = q / m as f64;
                }
            }
            BnMode::Eval(rs) => {
                if rs.mean.len() != c || rs.var.len() != c {
                    return Err(Error::shape("batch_norm running stats", &[rs.mean.len()], &[c]));
                }
                mean.copy_from_slice(&rs.mean);
                var.copy_from_slice(&rs.var);
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                for j in base..base + hw {
                    xhat[j] = (x[j] - mean[ch]) * inv_std[ch];
                    out[j] = gv[ch] * xhat[j] + bv[ch];
                }
            }
        }
        if let BnMode::Train { momentum, running: Some(rs) } = mode {
            if rs.mean.len() != c {
                return Err(Error::shape("batch_norm running stats", &[rs.mean.len()], &[c]));
            }
            let unbias = if m > 1 { m as f64 / (m - 1) as f64 } else { 1.0 };
            for ch in 0..c {
                rs.mean[ch] = momentum * rs.mean[ch] + (1.0 - momentum) * mean[ch];
                rs.var[ch] = momentum * rs.var[ch] + (1.0 - momentum) * var[ch] * unbias;
            }
        }
        let value = Tensor::new(self.shape(input).to_vec(), out)?;
        Ok(self.push(value, Op::BatchNorm { input: input.0, gamma: gamma.0, beta: beta.0, xhat, inv_std, train }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(0.0));
        self.push(value, Op::Relu(input.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("pointwise_mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).map(|v| v * factor);
        self.push(value, Op::Scale(input.0, factor))
    }

    pub fn add_scalar(&mut self, input: Var, offset: f64) -> Var {
        let value = self.value(input).map(|v| v + offset);
        self.push(value, Op::AddScalar(input.0))
    }

    /// Identity in the forward pass; multiplies the incoming gradient by `factor`.
    pub fn grad_scale(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).clone();
        self.push(value, Op::GradScale(input.0, factor))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Validation("concat_channels: no inputs".into()))?;
        let (n, _, h, w) = self.value(first).nchw()?;
        let mut total_c = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).nchw()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape("concat_channels", self.shape(first), self.shape(p)));
            }
            total_c += pc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total_c * hw);
        for i in 0..n {
            for &p in parts {
                let t = self.value(p);
                let pc = t.shape()[1];
                out.extend_from_slice(&t.data()[i * pc * hw..(i + 1) * pc * hw]);
            }
        }
        let value = Tensor::new(vec![n, total_c, h, w], out)?;
        Ok(self.push(value, Op::Concat(parts.iter().map(|v| v.0).collect())))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).nchw()?;
        validate(h * w > 0, || "global_avg_pool: empty spatial extent".into())?;
        let hw = h * w;
        let data =
            self.value(input).data().chunks_exact(hw).map(|plane| plane.iter().sum::<f64>() / hw as f64).collect();
        let value = Tensor::new(vec![n, c, 1, 1], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(input.0)))
    }

    /// Tiles an `N×C×1×1` tensor over `h×w`.
    pub fn broadcast_spatial(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let (n, c, ih, iw) = self.value(input).nchw()?;
        if (ih, iw) != (1, 1) {
            return Err(Error::shape("broadcast_spatial", self.shape(input), &[n, c, 1, 1]));
        }
        let mut data = Vec::with_capacity(n * c * h * w);
        for &v in self.value(input).data() {
            data.extend(std::iter::repeat_n(v, h * w));
        }
        let value = Tensor::new(vec![n, c, h, w], data)?;
        Ok(self.push(value, Op::Broadcast(input.0)))
    }

    /// `sqrt(max(x, floor))`, with zero gradient wherever `x ≤ floor`.
    pub fn safe_sqrt(&mut self, input: Var, floor: f64) -> Var {
        let value = self.value(input).map(|v| v.max(floor).sqrt());
        self.push(value, Op::SafeSqrt { input: input.0, floor })
    }

    /// Bilinear upsampling by an integer factor, corner-aligned.
    pub fn bilinear_upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        validate(factor >= 1, || format!("bilinear_upsample: factor must be ≥ 1, got {factor}"))?;
        let (n, c, h, w) = self.value(input).nchw()?;
        let (oh, ow) = (h * factor, w * factor);
        let data = if factor == 1 {
            self.value(input).data().to_vec()
        } else {
            bilinear_forward(self.value(input).data(), n * c, h, w, oh, ow)
        };
        let value = Tensor::new(vec![n, c, oh, ow], data)?;
        Ok(self.push(value, Op::Upsample { input: input.0, factor }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(input.0))
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).len().max(1) as f64;
        let s = self.sum(input);
        self.scale(s, 1.0 / n)
    }

    /// Mean softmax cross-entropy over pixels whose label is not `ignore`.
    ///
    /// Returns the scalar loss and the number of pixels it averages over.
    /// With no counted pixels the loss is 0 and its gradient is zero.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], ignore: Option<usize>) -> Result<(Var, usize)> {
        let (n, c, h, w) = self.value(logits).nchw()?;
        let hw = h * w;
        if labels.len() != n * hw {
            return Err(Error::shape("cross_entropy labels", &[labels.len()], &[n, h, w]));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; z.len()];
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..n {
            for j in 0..hw {
                let at = |k: usize| (i * c + k) * hw + j;
                let zmax = (0..c).map(|k| z[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for k in 0..c {
                    let e = (z[at(k)] - zmax).exp();
                    probs[at(k)] = e;
                    denom += e;
                }
                for k in 0..c {
                    probs[at(k)] /= denom;
                }
                let label = labels[i * hw + j];
                if Some(label) == ignore {
                    continue;
                }
                if label >= c {
                    return Err(Error::Validation(format!(
                        "cross_entropy: label {label} out of range for {c} classes"
                    )));
                }
                total += zmax + denom.ln() - z[at(label)];
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        let var = self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits: logits.0, probs, labels: labels.to_vec(), ignore, count },
        );
        Ok((var, count))
    }

    /// Mean absolute error over pixels where `mask` is true.
    ///
    /// Masked-out pixels contribute to neither the value nor the gradient.
    pub fn masked_l1(&mut self, pred: Var, target: &[f64], mask: &[bool]) -> Result<(Var, usize)> {
        let p = self.value(pred).data();
        if target.len() != p.len() || mask.len() != p.len() {
            return Err(Error::shape("masked_l1", self.shape(pred), &[target.len()]));
        }
        let mut total = 0.0;
        let mut count = 0;
        for ((&y, &t), &m) in p.iter().zip(target).zip(mask) {
            if m {
                total += (y - t).abs();
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        let var = self.push(
            Tensor::scalar(loss),
            Op::MaskedL1 { pred: pred.0, target: target.to_vec(), mask: mask.to_vec(), count },
        );
        Ok((var, count))
    }

    // ---- backward --------------------------------------------------------

    /// Populates gradients of the scalar `loss` for every node that
    /// requires them. Previous gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Validation(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &dy);
            }
            self.grads[i] = Some(dy);
        }
        Ok(())
    }

    fn accumulate(&mut self, j: usize, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[j].requires_grad {
            return;
        }
        let len = self.nodes[j].value.len();
        let g = self.grads[j].get_or_insert_with(|| vec![0.0; len]);
        f(g);
    }

    fn add_into(&mut self, j: usize, contrib: &[f64]) {
        self.accumulate(j, |g| {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        });
    }

    fn propagate(&mut self, i: usize, dy: &[f64]) {
        // Temporarily move the op out so its saved buffers can be read
        // while other nodes' gradients are written.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom, cols } => {
                self.conv2d_backward(*input, *weight, *bias, geom, cols, dy)
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, train } => {
                self.batch_norm_backward(*input, *gamma, *beta, xhat, inv_std, *train, dy)
            }
            Op::Relu(a) => {
                let x = self.nodes[*a].value.data();
                let d: Vec<f64> = x.iter().zip(dy).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect();
                self.add_into(*a, &d);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = self.nodes[*b].value.data().iter().zip(dy).map(|(y, g)| y * g).collect();
                let db: Vec<f64> = self.nodes[*a].value.data().iter().zip(dy).map(|(x, g)| x * g).collect();
                self.add_into(*a, &da);
                self.add_into(*b, &db);
            }
            Op::Add(a, b) => {
                self.add_into(*a, dy);
                self.add_into(*b, dy);
            }
            Op::Scale(a, f) | Op::GradScale(a, f) => {
                let d: Vec<f64> = dy.iter().map(|g| g * f).collect();
                self.add_into(*a, &d);
            }
            Op::AddScalar(a) => self.add_into(*a, dy),
            Op::Concat(parts) => {
                let (n, total_c, h, w) = self.nodes[i].value.nchw().expect("concat output is NCHW");
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.nodes[p].value.shape()[1];
                    let mut d = Vec::with_capacity(n * pc * hw);
                    for s in 0..n {
                        let start = (s * total_c + offset) * hw;
                        d.extend_from_slice(&dy[start..start + pc * hw]);
                    }
                    self.add_into(p, &d);
                    offset += pc;
                }
            }
            Op::GlobalAvgPool(a) => {
                let (_, _, h, w) = self.nodes[*a].value.nchw().expect("pool input is NCHW");
                let hw = h * w;
                let inv = 1.0 / hw as f64;
                self.accumulate(*a, |g| {
                    for (plane, &d) in g.chunks_exact_mut(hw).zip(dy) {
                        plane.iter_mut().for_each(|v| *v += d * inv);
                    }
                });
            }
            Op::Broadcast(a) => {
                let (_, _, h, w) = self.nodes[i].value.nchw().expect("broadcast output is NCHW");
                let hw = h * w;
                let d: Vec<f64> = dy.chunks_exact(hw).map(|plane| plane.iter().sum()).collect();
                self.add_into(*a, &d);
            }
            Op::SafeSqrt { input, floor } => {
                let x = self.nodes[*input].value.data();
                let y = self.nodes[i].value.data();
                let d: Vec<f64> =
                    x.iter().zip(y).zip(dy).map(|((&x, &y), &g)| if x > *floor { 0.5 * g / y } else { 0.0 }).collect();
                self.add_into(*input, &d);
            }
            Op::Upsample { input, factor } => {
                let (n, c, h, w) = self.nodes[*input].value.nchw().expect("upsample input is NCHW");
                if *factor == 1 {
                    self.add_into(*input, dy);
                } else {
                    let d = bilinear_backward(dy, n * c, h, w, h * factor, w * factor);
                    self.add_into(*input, &d);
                }
            }
            Op::Sum(a) => {
                let g0 = dy[0];
                self.accumulate(*a, |g| g.iter_mut().for_each(|v| *v += g0));
            }
            Op::CrossEntropy { logits, probs, labels, ignore, count } => {
                if *count > 0 {
                    let (n, c, h, w) = self.nodes[*logits].value.nchw().expect("logits are NCHW");
                    let hw = h * w;
                    let scale = dy[0] / *count as f64;
                    self.accumulate(*logits, |g| {
                        for s in 0..n {
                            for j in 0..hw {
                                let label = labels[s * hw + j];
                                if Some(label) == *ignore {
                                    continue;
                                }
                                for k in 0..c {
                                    let at = (s * c + k) * hw + j;
                                    let onehot = if k == label { 1.0 } else { 0.0 };
                                    g[at] += scale * (probs[at] - onehot);
                                }
                            }
                        }
                    });
                }
            }
            Op::MaskedL1 { pred, target, mask, count } => {
                if *count > 0 {
                    let scale = dy[0] / *count as f64;
                    let p = self.nodes[*pred].value.data();
                    let d: Vec<f64> = p
                        .iter()
                        .zip(target)
                        .zip(mask)
                        .map(|((&y, &t), &m)| if !m || y == t { 0.0 } else { scale * (y - t).signum() })
                        .collect();
                    self.add_into(*pred, &d);
                }
            }
        }
        self.nodes[i].op = op;
    }

    fn conv2d_backward(
        &mut self,
        input: usize,
        weight: usize,
        bias: Option<usize>,
        geom: &ConvGeom,
        cols: &[f64],
        dy: &[f64],
    ) {
        let (k, p, oc) = (geom.k(), geom.p(), geom.out_c);
        if let Some(b) = bias {
            if self.nodes[b].requires_grad {
                let mut db = vec![0.0; oc];
                for n in 0..geom.n {
                    for (o, row) in dy[n * oc * p..(n + 1) * oc * p].chunks_exact(p).enumerate() {
                        db[o] += row.iter().sum::<f64>();
                    }
                }
                self.add_into(b, &db);
            }
        }
        if self.nodes[weight].requires_grad {
            let mut dw = vec![0.0; oc * k];
            for n in 0..geom.n {
                let g = &dy[n * oc * p..(n + 1) * oc * p];
                let c = &cols[n * k * p..(n + 1) * k * p];
                // dW[oc,k] += dY[oc,p] · colsᵀ[p,k]
                gemm(oc, p, k, g, p as isize, 1, c, 1, p as isize, 1.0, &mut dw);
            }
            self.add_into(weight, &dw);
        }
        if self.nodes[input].requires_grad {
            let in_len = geom.in_c * geom.h * geom.w;
            let mut dx = vec![0.0; geom.n * in_len];
            let mut dcols = vec![0.0; k * p];
            let wt = self.nodes[weight].value.data();
            for n in 0..geom.n {
                let g = &dy[n * oc * p..(n + 1) * oc * p];
                // dcols[k,p] = Wᵀ[k,oc] · dY[oc,p]
                gemm(k, oc, p, wt, 1, k as isize, g, p as isize, 1, 0.0, &mut dcols);
                geom.col2im(&dcols, &mut dx[n * in_len..(n + 1) * in_len]);
            }
            self.add_into(input, &dx);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn batch_norm_backward(
        &mut self,
        input: usize,
        gamma: usize,
        beta: usize,
        xhat: &[f64],
        inv_std: &[f64],
        train: bool,
        dy: &[f64],
    ) {
        let (n, c, h, w) = self.nodes[input].value.nchw().expect("batch_norm input is NCHW");
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for j in base..base + hw {
                    dgamma[ch] += dy[j] * xhat[j];
                    dbeta[ch] += dy[j];
                }
            }
        }
        if self.nodes[input].requires_grad {
            let gv = self.nodes[gamma].value.data();
            let mut dx = vec![0.0; dy.len()];
            for ch in 0..c {
                let k = gv[ch] * inv_std[ch];
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    for j in base..base + hw {
                        dx[j] = if train {
                            // dbeta = Σ dy, dgamma = Σ dy·x̂
                            k * (dy[j] - dbeta[ch] / m - xhat[j] * dgamma[ch] / m)
                        } else {
                            k * dy[j]
                        };
                    }
                }
            }
            self.add_into(input, &dx);
        }
        self.add_into(gamma, &dgamma);
        self.add_into(beta, &dbeta);
    }
}
