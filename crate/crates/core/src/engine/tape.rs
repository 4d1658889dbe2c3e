use std::collections::HashMap;

use super::kernels::{self, ConvGeom, MatRef};
use super::{EngineError, ParamKind, ParameterSet, Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Fraction of the old running statistic kept on each update.
pub const BN_MOMENTUM: f64 = 0.9;
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean and variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// Exponential update with [`BN_MOMENTUM`] from batch mean and unbiased
    /// batch variance.
    pub fn updated(&self, batch_mean: &[f64], batch_var: &[f64]) -> Self {
        let blend = |old: &[f64], new: &[f64]| -> Vec<f64> {
            old.iter()
                .zip(new)
                .map(|(o, n)| BN_MOMENTUM * o + (1.0 - BN_MOMENTUM) * n)
                .collect()
        };
        Self {
            mean: blend(&self.mean, batch_mean),
            var: blend(&self.var, batch_var),
        }
    }
}

enum Op {
    Input,
    Param(String),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample2d {
        x: Var,
    },
    BatchNorm2d {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    ChannelAffine {
        x: Var,
        scale: Vec<f64>,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    WeightedSum {
        x: Var,
        weights: Option<Vec<f64>>,
    },
    BalancedBce {
        prob: Var,
        /// dL/dp per element; zero outside the FOV and where clamped.
        coeff: Vec<f64>,
        clamped: Vec<bool>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of the input leaves after [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    inputs: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.inputs.get(&var)
    }
}

/// Records forward operations in topological order and replays them in
/// reverse to accumulate gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    consumed: bool,
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

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, EngineError> {
        if !value.is_finite() {
            return Err(EngineError::NonFinite { op: op_name(&op) });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn live(&self) -> Result<(), EngineError> {
        if self.consumed {
            Err(EngineError::TapeConsumed)
        } else {
            Ok(())
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Leaf whose gradient is reported through [`Gradients`].
    pub fn input(&mut self, value: Tensor) -> Result<Var, EngineError> {
        self.live()?;
        self.push(value, Op::Input)
    }

    /// Leaf bound to a named parameter; repeated lookups share one node.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var, EngineError> {
        self.live()?;
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = params.value(name)?.clone();
        let v = self.push(value, Op::Param(name.to_string()))?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Cross-correlation with zero padding. `weight` is `(out, in, kh, kw)`,
    /// `bias` a vector of length `out`.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, EngineError> {
        self.live()?;
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if ws.c != xs.c {
            return Err(EngineError::ChannelMismatch {
                expected: ws.c,
                found: xs.c,
            });
        }
        if !(stride == 1 || stride == 2) {
            return Err(EngineError::InvalidStride(stride));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.numel() != ws.n {
                return Err(EngineError::ShapeMismatch {
                    op: "conv2d bias",
                    left: ws,
                    right: bs,
                });
            }
        }
        let (hp, wp) = (xs.h + 2 * padding, xs.w + 2 * padding);
        if hp < ws.h || wp < ws.w {
            return Err(EngineError::EmptyOutput {
                input: xs,
                kernel: ws,
            });
        }
        let geom = ConvGeom {
            c_in: xs.c,
            h: xs.h,
            w: xs.w,
            c_out: ws.n,
            kh: ws.h,
            kw: ws.w,
            stride,
            pad: padding,
            oh: (hp - ws.h) / stride + 1,
            ow: (wp - ws.w) / stride + 1,
        };
        if geom.oh == 0 || geom.ow == 0 || geom.c_out == 0 {
            return Err(EngineError::EmptyOutput {
                input: xs,
                kernel: ws,
            });
        }
        let out_shape = Shape::new(xs.n, geom.c_out, geom.oh, geom.ow);
        let mut out = vec![0.0; out_shape.numel()];
        let (ck, p) = (geom.patch(), geom.out_plane());
        let in_item = xs.c * xs.plane();
        let out_item = geom.c_out * p;
        let needs_cols = !geom.is_pointwise() && !geom.is_shiftable();
        let mut cols = if needs_cols {
            vec![0.0; ck * p]
        } else {
            Vec::new()
        };
        {
            let xv = self.value(x).data();
            let wv = self.value(weight).data();
            for n in 0..xs.n {
                let xi = &xv[n * in_item..(n + 1) * in_item];
                let oi = &mut out[n * out_item..(n + 1) * out_item];
                if geom.is_shiftable() {
                    kernels::shifted_conv_forward(&kernels::pad_input(xi, &geom), wv, &geom, oi);
                } else {
                    let b_mat = if geom.is_pointwise() {
                        MatRef::rows(xi, p)
                    } else {
                        kernels::im2col(xi, &geom, &mut cols);
                        MatRef::rows(&cols, p)
                    };
                    kernels::gemm(geom.c_out, ck, p, MatRef::rows(wv, ck), b_mat, 0.0, oi);
                }
                if let Some(b) = bias {
                    let bv = self.value(b).data();
                    for (o, row) in oi.chunks_mut(p).enumerate() {
                        for v in row {
                            *v += bv[o];
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::from_vec(out_shape, out),
            Op::Conv2d {
                x,
                w: weight,
                b: bias,
                geom,
            },
        )
    }

    /// 2x2 max pooling with stride 2.
    pub fn max_pool2d(&mut self, x: Var) -> Result<Var, EngineError> {
        self.live()?;
        let s = self.shape(x);
        if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) || s.h == 0 || s.w == 0 {
            return Err(EngineError::OddSpatial {
                op: "max_pool2d",
                shape: s,
            });
        }
        let (out, argmax) = kernels::max_pool_forward(self.value(x).data(), s.n * s.c, s.h, s.w);
        let shape = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
        self.push(Tensor::from_vec(shape, out), Op::MaxPool2d { x, argmax })
    }

    /// Separable first-order hold doubling H and W, edge replicated.
    pub fn bilinear_upsample2d(&mut self, x: Var) -> Result<Var, EngineError> {
        self.live()?;
        let s = self.shape(x);
        if s.h == 0 || s.w == 0 {
            return Err(EngineError::EmptyInput {
                op: "bilinear_upsample2d",
            });
        }
        let out = kernels::upsample_forward(self.value(x).data(), s.n * s.c, s.h, s.w);
        let shape = Shape::new(s.n, s.c, 2 * s.h, 2 * s.w);
        self.push(Tensor::from_vec(shape, out), Op::Upsample2d { x })
    }

    /// Per-channel normalization. In train mode returns batch statistics
    /// blended into `running`; eval mode normalizes with `running`.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        running: &RunningStats,
    ) -> Result<(Var, Option<RunningStats>), EngineError> {
        self.live()?;
        let s = self.shape(x);
        for (v, op) in [(gamma, "batch_norm2d gamma"), (beta, "batch_norm2d beta")] {
            if self.shape(v).numel() != s.c {
                return Err(EngineError::ShapeMismatch {
                    op,
                    left: s,
                    right: self.shape(v),
                });
            }
        }
        if running.mean.len() != s.c || running.var.len() != s.c {
            return Err(EngineError::ChannelMismatch {
                expected: s.c,
                found: running.mean.len(),
            });
        }
        let m = s.n * s.plane();
        if mode == Mode::Train && m <= 1 {
            return Err(EngineError::BatchNormSingleton);
        }
        let xv = self.value(x).data();
        let plane = s.plane();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; s.c];
                let mut var = vec![0.0; s.c];
                for c in 0..s.c {
                    let mut acc = 0.0;
                    for n in 0..s.n {
                        let base = (n * s.c + c) * plane;
                        acc += xv[base..base + plane].iter().sum::<f64>();
                    }
                    mean[c] = acc / m as f64;
                    let mut sq = 0.0;
                    for n in 0..s.n {
                        let base = (n * s.c + c) * plane;
                        sq += xv[base..base + plane]
                            .iter()
                            .map(|v| (v - mean[c]) * (v - mean[c]))
                            .sum::<f64>();
                    }
                    var[c] = sq / m as f64;
                }
                (mean, var)
            }
            Mode::Eval => (running.mean.clone(), running.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0; s.numel()];
        let mut out = vec![0.0; s.numel()];
        for n in 0..s.n {
            for c in 0..s.c {
                let base = (n * s.c + c) * plane;
                for i in base..base + plane {
                    let h = (xv[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = gv[c] * h + bv[c];
                }
            }
        }
        let stats = match mode {
            Mode::Train => {
                let unbiased: Vec<f64> =
                    var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect();
                Some(running.updated(&mean, &unbiased))
            }
            Mode::Eval => None,
        };
        let v = self.push(
            Tensor::from_vec(s, out),
            Op::BatchNorm2d {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
        )?;
        Ok((v, stats))
    }

    /// `y = scale[c] * x + shift[c]` with constant per-channel coefficients.
    pub fn channel_affine(
        &mut self,
        x: Var,
        scale: &[f64],
        shift: &[f64],
    ) -> Result<Var, EngineError> {
        self.live()?;
        let s = self.shape(x);
        if scale.len() != s.c || shift.len() != s.c {
            return Err(EngineError::ChannelMismatch {
                expected: s.c,
                found: scale.len(),
            });
        }
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = (i / s.plane()) % s.c;
            *v = scale[c] * *v + shift[c];
        }
        self.push(
            out,
            Op::ChannelAffine {
                x,
                scale: scale.to_vec(),
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, EngineError> {
        self.live()?;
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, EngineError> {
        self.live()?;
        let out = self.value(x).map(logistic);
        self.push(out, Op::Sigmoid { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.live()?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(EngineError::ShapeMismatch {
                op: "add",
                left: sa,
                right: sb,
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        self.push(Tensor::from_vec(sa, data), Op::Add { a, b })
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var, EngineError> {
        self.live()?;
        let first = match parts.first() {
            Some(&p) => self.shape(p),
            None => {
                return Err(EngineError::EmptyInput {
                    op: "concat_channels",
                })
            }
        };
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(EngineError::ShapeMismatch {
                    op: "concat_channels",
                    left: first,
                    right: s,
                });
            }
            channels += s.c;
        }
        let shape = Shape::new(first.n, channels, first.h, first.w);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..first.n {
            for &p in parts {
                let t = self.value(p);
                let per = t.shape().c * first.plane();
                data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
            }
        }
        self.push(
            Tensor::from_vec(shape, data),
            Op::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: Var) -> Result<Var, EngineError> {
        self.live()?;
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::WeightedSum { x, weights: None })
    }

    /// Scalar `Σ weights[i] * x[i]`.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var, EngineError> {
        self.live()?;
        let s = self.shape(x);
        if weights.shape() != s {
            return Err(EngineError::ShapeMismatch {
                op: "weighted_sum",
                left: s,
                right: weights.shape(),
            });
        }
        let total = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                x,
                weights: Some(weights.data().to_vec()),
            },
        )
    }

    /// Class-balanced binary cross-entropy over FOV pixels.
    ///
    /// With `beta` the positive fraction inside the FOV,
    /// `L = -(1-beta) Σ_{y=1} log p - beta Σ_{y=0} log(1-p)`, divided by the
    /// FOV pixel count. When the FOV holds a single class the weights fall
    /// back to 1 so the loss is the plain mean cross-entropy.
    pub fn balanced_bce_loss(
        &mut self,
        prob: Var,
        target: &Tensor,
        fov: &Tensor,
    ) -> Result<Var, EngineError> {
        self.live()?;
        let s = self.shape(prob);
        for (t, op) in [
            (target, "balanced_bce_loss target"),
            (fov, "balanced_bce_loss fov"),
        ] {
            if t.shape() != s {
                return Err(EngineError::ShapeMismatch {
                    op,
                    left: s,
                    right: t.shape(),
                });
            }
        }
        for t in [target, fov] {
            if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(EngineError::NonBinaryMask);
            }
        }
        let inside = fov.data().iter().filter(|&&v| v == 1.0).count();
        if inside == 0 {
            return Err(EngineError::EmptyFov);
        }
        let positives = target
            .data()
            .iter()
            .zip(fov.data())
            .filter(|(&t, &f)| t == 1.0 && f == 1.0)
            .count();
        let beta = positives as f64 / inside as f64;
        let (w_pos, w_neg) = if positives == 0 || positives == inside {
            (1.0, 1.0)
        } else {
            (1.0 - beta, beta)
        };
        let norm = inside as f64;
        let pv = self.value(prob).data();
        let mut coeff = vec![0.0; s.numel()];
        let mut clamped = vec![false; s.numel()];
        let mut loss = 0.0;
        for i in 0..pv.len() {
            if fov.data()[i] != 1.0 {
                continue;
            }
            let raw = pv[i];
            let p = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            clamped[i] = p != raw;
            if target.data()[i] == 1.0 {
                loss -= w_pos * p.ln();
                if !clamped[i] {
                    coeff[i] = -w_pos / (p * norm);
                }
            } else {
                loss -= w_neg * (1.0 - p).ln();
                if !clamped[i] {
                    coeff[i] = w_neg / ((1.0 - p) * norm);
                }
            }
        }
        self.push(
            Tensor::scalar(loss / norm),
            Op::BalancedBce {
                prob,
                coeff,
                clamped,
            },
        )
    }

    /// Hash of every non-smooth decision taken during the forward pass
    /// (relu signs, pooling winners, loss clamping). Two passes with equal
    /// signatures lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        const PRIME: u64 = 0x0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(PRIME);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for &v in self.value(*x).data() {
                        feed(u64::from(v > 0.0));
                    }
                }
                Op::MaxPool2d { argmax, .. } => argmax.iter().for_each(|&a| feed(u64::from(a))),
                Op::BalancedBce { clamped, .. } => clamped.iter().for_each(|&c| feed(u64::from(c))),
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are
    /// accumulated into `params`; input-leaf gradients are returned.
    /// Intermediate values are released as the sweep passes them, so a tape
    /// supports exactly one backward pass.
    pub fn backward(
        &mut self,
        loss: Var,
        params: &mut ParameterSet,
    ) -> Result<Gradients, EngineError> {
        self.live()?;
        if self.shape(loss).numel() != 1 {
            return Err(EngineError::NonScalarLoss(self.shape(loss)));
        }
        // Fail before consuming anything if a bound parameter disappeared.
        for node in &self.nodes {
            if let Op::Param(name) = &node.op {
                params.get(name)?;
            }
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = std::mem::replace(
                &mut self.nodes[i],
                Node {
                    value: Tensor::zeros(Shape::new(0, 0, 0, 0)),
                    op: Op::Input,
                },
            );
            match node.op {
                Op::Input => {
                    out.inputs
                        .insert(Var(i), Tensor::from_vec(node.value.shape(), g));
                }
                Op::Param(name) => {
                    if params.get(&name)?.kind == ParamKind::Trainable {
                        params.accumulate_grad(&name, &g)?;
                    }
                }
                op => self.backprop(op, &node.value, &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn backprop(&self, op: Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Input | Op::Param(_) => unreachable!("leaves handled by caller"),
            Op::Conv2d { x, w, b, geom } => {
                let xs = self.shape(x);
                let xv = self.value(x).data();
                let wv = self.value(w).data();
                let (ck, p) = (geom.patch(), geom.out_plane());
                let in_item = xs.c * xs.plane();
                let out_item = geom.c_out * p;
                let needs_cols = !geom.is_pointwise() && !geom.is_shiftable();
                let mut cols = if needs_cols {
                    vec![0.0; ck * p]
                } else {
                    Vec::new()
                };
                let mut dcols = if needs_cols {
                    vec![0.0; ck * p]
                } else {
                    Vec::new()
                };
                let mut dw = vec![0.0; wv.len()];
                let mut dx = vec![0.0; xv.len()];
                for n in 0..xs.n {
                    let xi = &xv[n * in_item..(n + 1) * in_item];
                    let gi = &g[n * out_item..(n + 1) * out_item];
                    if geom.is_shiftable() {
                        let dxi = &mut dx[n * in_item..(n + 1) * in_item];
                        kernels::shifted_conv_backward(
                            &kernels::pad_input(xi, &geom),
                            wv,
                            gi,
                            &geom,
                            &mut dw,
                            dxi,
                        );
                        continue;
                    }
                    let cols_t = if geom.is_pointwise() {
                        MatRef::transposed(xi, p)
                    } else {
                        kernels::im2col(xi, &geom, &mut cols);
                        MatRef::transposed(&cols, p)
                    };
                    kernels::gemm(geom.c_out, p, ck, MatRef::rows(gi, p), cols_t, 1.0, &mut dw);
                    let dxi = &mut dx[n * in_item..(n + 1) * in_item];
                    if geom.is_pointwise() {
                        kernels::gemm(
                            ck,
                            geom.c_out,
                            p,
                            MatRef::transposed(wv, ck),
                            MatRef::rows(gi, p),
                            1.0,
                            dxi,
                        );
                    } else {
                        kernels::gemm(
                            ck,
                            geom.c_out,
                            p,
                            MatRef::transposed(wv, ck),
                            MatRef::rows(gi, p),
                            0.0,
                            &mut dcols,
                        );
                        kernels::col2im(&dcols, &geom, dxi);
                    }
                }
                add_into(slot(grads, w, wv.len()), &dw);
                add_into(slot(grads, x, xv.len()), &dx);
                if let Some(b) = b {
                    let mut db = vec![0.0; geom.c_out];
                    for n in 0..xs.n {
                        for (o, row) in g[n * out_item..(n + 1) * out_item].chunks(p).enumerate() {
                            db[o] += row.iter().sum::<f64>();
                        }
                    }
                    add_into(slot(grads, b, geom.c_out), &db);
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let gx = slot(grads, x, self.value(x).numel());
                for (gi, &a) in g.iter().zip(&argmax) {
                    gx[a as usize] += gi;
                }
            }
            Op::Upsample2d { x } => {
                let s = self.shape(x);
                let gx = slot(grads, x, s.numel());
                kernels::upsample_backward(g, s.n * s.c, s.h, s.w, gx);
            }
            Op::BatchNorm2d {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let s = self.shape(x);
                let plane = s.plane();
                let m = (s.n * plane) as f64;
                let gv = self.value(gamma).data();
                let mut dgamma = vec![0.0; s.c];
                let mut dbeta = vec![0.0; s.c];
                let mut dx = vec![0.0; s.numel()];
                for c in 0..s.c {
                    let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
                    for n in 0..s.n {
                        let base = (n * s.c + c) * plane;
                        for i in base..base + plane {
                            sum_dy += g[i];
                            sum_dy_xhat += g[i] * xhat[i];
                        }
                    }
                    dgamma[c] = sum_dy_xhat;
                    dbeta[c] = sum_dy;
                    let k = gv[c] * inv_std[c];
                    for n in 0..s.n {
                        let base = (n * s.c + c) * plane;
                        for i in base..base + plane {
                            dx[i] = if train {
                                k * (g[i] - (sum_dy + xhat[i] * sum_dy_xhat) / m)
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
                add_into(slot(grads, x, s.numel()), &dx);
                add_into(slot(grads, gamma, s.c), &dgamma);
                add_into(slot(grads, beta, s.c), &dbeta);
            }
            Op::ChannelAffine { x, scale } => {
                let s = self.shape(x);
                let gx = slot(grads, x, s.numel());
                for (i, (acc_i, gi)) in gx.iter_mut().zip(g).enumerate() {
                    *acc_i += scale[(i / s.plane()) % s.c] * gi;
                }
            }
            Op::Relu { x } => {
                let xv = self.value(x).data();
                let gx = slot(grads, x, xv.len());
                for ((a, gi), v) in gx.iter_mut().zip(g).zip(xv) {
                    if *v > 0.0 {
                        *a += gi;
                    }
                }
            }
            Op::Sigmoid { x } => {
                let gx = slot(grads, x, out.numel());
                for ((a, gi), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *a += gi * y * (1.0 - y);
                }
            }
            Op::Add { a, b } => {
                add_into(slot(grads, a, g.len()), g);
                add_into(slot(grads, b, g.len()), g);
            }
            Op::Concat { parts } => {
                let s = out.shape();
                let plane = s.plane();
                let mut offset = 0;
                for part in parts {
                    let ps = self.shape(part);
                    let per = ps.c * plane;
                    let gx = slot(grads, part, ps.numel());
                    for n in 0..s.n {
                        let src = n * s.c * plane + offset;
                        add_into(&mut gx[n * per..(n + 1) * per], &g[src..src + per]);
                    }
                    offset += per;
                }
            }
            Op::WeightedSum { x, weights } => {
                let len = self.value(x).numel();
                let gx = slot(grads, x, len);
                match weights {
                    Some(w) => gx.iter_mut().zip(&w).for_each(|(a, wi)| *a += g[0] * wi),
                    None => gx.iter_mut().for_each(|a| *a += g[0]),
                }
            }
            Op::BalancedBce { prob, coeff, .. } => {
                let gx = slot(grads, prob, coeff.len());
                gx.iter_mut().zip(&coeff).for_each(|(a, c)| *a += g[0] * c);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Logistic function kept strictly inside (0, 1).
fn logistic(v: f64) -> f64 {
    let y = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param(_) => "param",
        Op::Conv2d { .. } => "conv2d",
        Op::MaxPool2d { .. } => "max_pool2d",
        Op::Upsample2d { .. } => "bilinear_upsample2d",
        Op::BatchNorm2d { .. } => "batch_norm2d",
        Op::ChannelAffine { .. } => "channel_affine",
        Op::Relu { .. } => "relu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Add { .. } => "add",
        Op::Concat { .. } => "concat_channels",
        Op::WeightedSum { .. } => "sum",
        Op::BalancedBce { .. } => "balanced_bce_loss",
    }
}
