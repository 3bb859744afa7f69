use crate::error::{Error, Result};

use super::kernels::{self, ConvGeom, UpGeom};
use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    MaxPool2x2 { x: Var, argmax: Vec<u32> },
    ConvTranspose2x2 { x: Var, w: Var, b: Var, geom: UpGeom },
    Dense { x: Var, w: Var, b: Var, rows: usize, fan_in: usize, fan_out: usize },
    Relu { x: Var },
    Sigmoid { x: Var },
    Concat { a: Var, b: Var, n: usize, ca: usize, cb: usize, plane: usize },
    Reshape { x: Var },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f32>, classes: usize },
    Mse { pred: Var, target: Var },
    Sum { x: Var },
    WeightedSum { x: Var, coeffs: Vec<f32> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2x2 { .. } => "maxpool2x2",
            Op::ConvTranspose2x2 { .. } => "conv_transpose2x2",
            Op::Dense { .. } => "dense",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Concat { .. } => "concat_channels",
            Op::Reshape { .. } => "reshape",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Mse { .. } => "mse_loss",
            Op::Sum { .. } => "sum",
            Op::WeightedSum { .. } => "weighted_sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    op: Op,
    /// Whether an adjoint must be computed for this node.
    needs_grad: bool,
}

/// Ordered record of executed operations.
///
/// Nodes are appended in execution order, so a node's inputs always have
/// smaller indices than the node itself and a reverse scan is a valid
/// topological order for adjoint propagation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    backward_order: Vec<usize>,
    backward_done: bool,
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Records a copy of `t`. It participates in backward iff it is
    /// trainable (requires grad and not frozen).
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.is_trainable())
    }

    /// Records an owned constant (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Records an owned value that should receive a gradient.
    pub fn variable(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.clone()).expect("tape node shape is consistent")
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f32 {
        self.node(v).value[0]
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.node(v).op.name()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    /// Adjoint of `v` after [`Tape::backward`], if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads[v.0].as_deref()
    }

    /// Accumulates the adjoint of `v` into a parameter's gradient buffer.
    /// Frozen parameters are left untouched.
    pub fn write_grad(&self, v: Var, param: &mut Tensor) -> Result<()> {
        match self.grad(v) {
            Some(g) => param.accumulate_grad(g),
            None => Ok(()),
        }
    }

    /// Node indices in the order the last backward pass visited them.
    pub fn backward_order(&self) -> &[usize] {
        &self.backward_order
    }

    /// Clears adjoints so that backward may run again.
    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_order.clear();
        self.backward_done = false;
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).needs_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(format!("conv2d expects NCHW input and OIHW weight, got {xs:?} and {ws:?}")));
        }
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[0],
            kh: ws[2],
            kw: ws[3],
            pad: padding,
        };
        if ws[1] != geom.c {
            return Err(Error::shape(format!(
                "conv2d input has {} channels but weight expects {}",
                geom.c, ws[1]
            )));
        }
        if self.shape(b) != [geom.o] {
            return Err(Error::shape(format!("conv2d bias shape {:?}, expected [{}]", self.shape(b), geom.o)));
        }
        if geom.h + 2 * padding < geom.kh || geom.w + 2 * padding < geom.kw {
            return Err(Error::shape(format!(
                "conv2d kernel {}x{} larger than padded input {}x{}",
                geom.kh,
                geom.kw,
                geom.h + 2 * padding,
                geom.w + 2 * padding
            )));
        }
        if !self.value(x).iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("conv2d input contains non-finite values".into()));
        }
        let out = kernels::conv2d_forward(&geom, self.value(x), self.value(w), self.value(b));
        let shape = vec![geom.n, geom.o, geom.out_h(), geom.out_w()];
        let needs = self.any_grad(&[x, w, b]);
        Ok(self.push(shape, out, Op::Conv2d { x, w, b, geom }, needs))
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape(format!("maxpool2x2 expects NCHW, got {s:?}")));
        }
        if s[2] < 2 || s[3] < 2 {
            return Err(Error::shape(format!("maxpool2x2 needs spatial size >= 2, got {}x{}", s[2], s[3])));
        }
        let (out, argmax) = kernels::maxpool2x2_forward(s[0], s[1], s[2], s[3], self.value(x));
        let needs = self.any_grad(&[x]);
        Ok(self.push(vec![s[0], s[1], s[2] / 2, s[3] / 2], out, Op::MaxPool2x2 { x, argmax }, needs))
    }

    /// 2×2 stride-2 transposed convolution; weight `[C_in, C_out, 2, 2]`.
    pub fn conv_transpose2x2(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 4 || ws.len() != 4 || ws[2] != 2 || ws[3] != 2 {
            return Err(Error::shape(format!(
                "conv_transpose2x2 expects NCHW input and [C,O,2,2] weight, got {xs:?} and {ws:?}"
            )));
        }
        if ws[0] != xs[1] {
            return Err(Error::shape(format!(
                "conv_transpose2x2 input has {} channels but weight expects {}",
                xs[1], ws[0]
            )));
        }
        let geom = UpGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[1],
        };
        if self.shape(b) != [geom.o] {
            return Err(Error::shape(format!(
                "conv_transpose2x2 bias shape {:?}, expected [{}]",
                self.shape(b),
                geom.o
            )));
        }
        let out = kernels::conv_transpose2x2_forward(&geom, self.value(x), self.value(w), self.value(b));
        let shape = vec![geom.n, geom.o, 2 * geom.h, 2 * geom.w];
        let needs = self.any_grad(&[x, w, b]);
        Ok(self.push(shape, out, Op::ConvTranspose2x2 { x, w, b, geom }, needs))
    }

    /// `x·W + b` with `x: N×F`, `W: F×G`, `b: G`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 2 || ws.len() != 2 {
            return Err(Error::shape(format!("dense expects N×F input and F×G weight, got {xs:?} and {ws:?}")));
        }
        let (rows, fan_in, fan_out) = (xs[0], xs[1], ws[1]);
        if ws[0] != fan_in {
            return Err(Error::shape(format!("dense input width {fan_in} does not match weight rows {}", ws[0])));
        }
        if self.shape(b) != [fan_out] {
            return Err(Error::shape(format!("dense bias shape {:?}, expected [{fan_out}]", self.shape(b))));
        }
        let bias = self.value(b);
        let mut out = Vec::with_capacity(rows * fan_out);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        kernels::gemm(
            rows,
            fan_in,
            fan_out,
            self.value(x),
            (fan_in, 1),
            self.value(w),
            (fan_out, 1),
            1.0,
            &mut out,
            (fan_out, 1),
        );
        let needs = self.any_grad(&[x, w, b]);
        Ok(self.push(
            vec![rows, fan_out],
            out,
            Op::Dense {
                x,
                w,
                b,
                rows,
                fan_in,
                fan_out,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.any_grad(&[x]);
        self.push(shape, out, Op::Relu { x }, needs)
    }

    /// Logistic sigmoid, kept strictly inside (0, 1) even where `f32`
    /// rounding would saturate.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.any_grad(&[x]);
        self.push(shape, out, Op::Sigmoid { x }, needs)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(Error::shape(format!("concat_channels needs equal N, H, W; got {sa:?} and {sb:?}")));
        }
        let (n, ca, cb, plane) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for s in 0..n {
            out.extend_from_slice(&va[s * ca * plane..(s + 1) * ca * plane]);
            out.extend_from_slice(&vb[s * cb * plane..(s + 1) * cb * plane]);
        }
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(
            vec![n, ca + cb, sa[2], sa[3]],
            out,
            Op::Concat { a, b, n, ca, cb, plane },
            needs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let len = self.value(x).len();
        if shape.iter().product::<usize>() != len {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        let needs = self.any_grad(&[x]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape { x }, needs))
    }

    /// Collapses all non-batch axes: `[N, ...] -> [N, F]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = *s.first().ok_or_else(|| Error::shape("flatten of a rank-0 value"))?;
        let f = s[1..].iter().product();
        self.reshape(x, &[n, f])
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 {
            return Err(Error::shape(format!("softmax_cross_entropy expects N×K logits, got {s:?}")));
        }
        let (n, k) = (s[0], s[1]);
        if labels.len() != n {
            return Err(Error::input(format!("{} labels for {n} logit rows", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::input(format!("label {bad} outside [0, {}]", k - 1)));
        }
        let z = self.value(logits);
        let mut probs = vec![0.0f32; n * k];
        let mut total = 0.0f64;
        for (r, &label) in labels.iter().enumerate() {
            let row = &z[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let sum: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum();
            let lse = max as f64 + sum.ln();
            total += lse - row[label] as f64;
            for (p, &v) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                *p = (((v - max) as f64).exp() / sum) as f32;
            }
        }
        let loss = (total / n as f64) as f32;
        if !loss.is_finite() {
            return Err(Error::Numeric("cross-entropy loss is not finite".into()));
        }
        let needs = self.any_grad(&[logits]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                classes: k,
            },
            needs,
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape(format!(
                "mse_loss shapes differ: {:?} vs {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let p = self.value(pred);
        let t = self.value(target);
        let sum: f64 = p.iter().zip(t).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum();
        let loss = (sum / p.len() as f64) as f32;
        if !loss.is_finite() {
            return Err(Error::Numeric("mse loss is not finite".into()));
        }
        let needs = self.any_grad(&[pred, target]);
        Ok(self.push(vec![1], vec![loss], Op::Mse { pred, target }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().map(|&v| v as f64).sum::<f64>() as f32;
        let needs = self.any_grad(&[x]);
        self.push(vec![1], vec![total], Op::Sum { x }, needs)
    }

    /// `Σ coeffs[i] · x[i]`, a scalar probe for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, coeffs: &[f32]) -> Result<Var> {
        if coeffs.len() != self.value(x).len() {
            return Err(Error::shape(format!(
                "weighted_sum with {} coefficients over {} elements",
                coeffs.len(),
                self.value(x).len()
            )));
        }
        let total = self
            .value(x)
            .iter()
            .zip(coeffs)
            .map(|(&v, &c)| v as f64 * c as f64)
            .sum::<f64>() as f32;
        let needs = self.any_grad(&[x]);
        Ok(self.push(
            vec![1],
            vec![total],
            Op::WeightedSum {
                x,
                coeffs: coeffs.to_vec(),
            },
            needs,
        ))
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f32>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match self.grads[v.0].as_mut() {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
            None => self.grads[v.0] = Some(delta),
        }
    }

    /// Propagates adjoints from the scalar `loss` to every node that needs
    /// them. Running it twice without [`Tape::reset_grads`] is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::State("backward already ran on this tape; reset gradients first".into()));
        }
        if self.node(loss).value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.backward_order.clear();
        if !self.node(loss).needs_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(upstream) = self.grads[idx].take() else {
                continue;
            };
            self.backward_order.push(idx);
            self.propagate(idx, &upstream)?;
            self.grads[idx] = Some(upstream);
        }
        for g in self.grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite gradient produced in backward pass".into()));
            }
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, up: &[f32]) -> Result<()> {
        // Borrow the op out temporarily so inputs can be accumulated.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        let result = self.propagate_op(idx, &op, up);
        self.nodes[idx].op = op;
        result
    }

    fn propagate_op(&mut self, idx: usize, op: &Op, up: &[f32]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let need_dx = self.needs_grad(*x);
                let need_dw = self.needs_grad(*w) || self.needs_grad(*b);
                let grads = kernels::conv2d_backward(geom, self.value(*x), self.value(*w), up, need_dx, need_dw);
                if let Some(dx) = grads.dx {
                    self.accumulate(*x, dx);
                }
                if let Some(dw) = grads.dw {
                    self.accumulate(*w, dw);
                }
                if let Some(db) = grads.db {
                    self.accumulate(*b, db);
                }
            }
            Op::MaxPool2x2 { x, argmax } => {
                let mut dx = vec![0.0f32; self.value(*x).len()];
                for (&src, &g) in argmax.iter().zip(up) {
                    dx[src as usize] += g;
                }
                self.accumulate(*x, dx);
            }
            Op::ConvTranspose2x2 { x, w, b, geom } => {
                let need_dx = self.needs_grad(*x);
                let need_dw = self.needs_grad(*w) || self.needs_grad(*b);
                let grads =
                    kernels::conv_transpose2x2_backward(geom, self.value(*x), self.value(*w), up, need_dx, need_dw);
                if let Some(dx) = grads.dx {
                    self.accumulate(*x, dx);
                }
                if let Some(dw) = grads.dw {
                    self.accumulate(*w, dw);
                }
                if let Some(db) = grads.db {
                    self.accumulate(*b, db);
                }
            }
            &Op::Dense {
                x,
                w,
                b,
                rows,
                fan_in,
                fan_out,
            } => {
                if self.needs_grad(x) {
                    let mut dx = vec![0.0f32; rows * fan_in];
                    // dX = dY · Wᵀ
                    kernels::gemm(
                        rows,
                        fan_out,
                        fan_in,
                        up,
                        (fan_out, 1),
                        self.value(w),
                        (1, fan_out),
                        0.0,
                        &mut dx,
                        (fan_in, 1),
                    );
                    self.accumulate(x, dx);
                }
                if self.needs_grad(w) {
                    let mut dw = vec![0.0f32; fan_in * fan_out];
                    // dW = Xᵀ · dY
                    kernels::gemm(
                        fan_in,
                        rows,
                        fan_out,
                        self.value(x),
                        (1, fan_in),
                        up,
                        (fan_out, 1),
                        0.0,
                        &mut dw,
                        (fan_out, 1),
                    );
                    self.accumulate(w, dw);
                }
                if self.needs_grad(b) {
                    let mut db = vec![0.0f32; fan_out];
                    for row in up.chunks(fan_out) {
                        db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                    }
                    self.accumulate(b, db);
                }
            }
            Op::Relu { x } => {
                let dx = self.value(*x).iter().zip(up).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
                self.accumulate(*x, dx);
            }
            Op::Sigmoid { x } => {
                let dx = self.nodes[idx]
                    .value
                    .iter()
                    .zip(up)
                    .map(|(&y, &g)| g * y * (1.0 - y))
                    .collect();
                self.accumulate(*x, dx);
            }
            &Op::Concat { a, b, n, ca, cb, plane } => {
                let mut da = Vec::with_capacity(n * ca * plane);
                let mut db = Vec::with_capacity(n * cb * plane);
                let stride = (ca + cb) * plane;
                for s in 0..n {
                    da.extend_from_slice(&up[s * stride..s * stride + ca * plane]);
                    db.extend_from_slice(&up[s * stride + ca * plane..(s + 1) * stride]);
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Reshape { x } => self.accumulate(*x, up.to_vec()),
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
                classes,
            } => {
                let n = labels.len();
                let scale = up[0] / n as f32;
                let mut dz: Vec<f32> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    dz[r * classes + l] -= scale;
                }
                self.accumulate(*logits, dz);
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let t = self.value(*target);
                let scale = 2.0 * up[0] / p.len() as f32;
                let dp: Vec<f32> = p.iter().zip(t).map(|(&a, &b)| scale * (a - b)).collect();
                if self.needs_grad(*target) {
                    let dt = dp.iter().map(|v| -v).collect();
                    self.accumulate(*target, dt);
                }
                self.accumulate(*pred, dp);
            }
            Op::Sum { x } => {
                let n = self.value(*x).len();
                self.accumulate(*x, vec![up[0]; n]);
            }
            Op::WeightedSum { x, coeffs } => {
                let dx = coeffs.iter().map(|&c| c * up[0]).collect();
                self.accumulate(*x, dx);
            }
        }
        Ok(())
    }
}

const SIGMOID_HI: f32 = 1.0 - f32::EPSILON / 2.0;
const SIGMOID_LO: f32 = 1e-30;

pub(crate) fn sigmoid(v: f32) -> f32 {
    let y = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    y.clamp(SIGMOID_LO, SIGMOID_HI)
}
