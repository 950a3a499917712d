use alloc::vec;
use alloc::vec::Vec;

use super::params::{ParamId, ParamStore};
use super::{conv, loss, norm, NnError, Tensor};
use crate::scalar::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Normalize {
        x: Var,
        rstd: Vec<T>,
    },
    ChannelAffine {
        x: Var,
        scale: Option<Var>,
        shift: Option<Var>,
    },
    Gelu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    SimpleGate(Var),
    AvgPool(Var),
    CenterSpatial(Var),
    Upsample2x(Var),
    Concat(Var, Var),
    LevelSoftmax {
        x: Var,
        slices: Vec<(usize, usize)>,
    },
    LevelCrossEntropy {
        logits: Var,
        slices: Vec<(usize, usize)>,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    SmoothL1 {
        pred: Var,
        target: Tensor<T>,
    },
    SsimLoss {
        pred: Var,
        target: Tensor<T>,
    },
    Sum(Var),
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// A single forward/backward computation. Build it, call [`Graph::backward`]
/// on a scalar, then read gradients of inputs and bound parameters.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    bound: Vec<(ParamId, Var)>,
    trainable: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            bound: Vec::new(),
            trainable: true,
        }
    }

    /// A graph whose bound parameters never require gradients.
    pub fn inference() -> Self {
        Self {
            trainable: false,
            ..Self::new()
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn input(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.input(t, false)
    }

    /// Binds a stored parameter; repeated binds return the same node so a
    /// parameter's gradient is collected exactly once.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.bound.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, self.trainable);
        self.bound.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every bound parameter, in binding order.
    pub fn param_grads(&self) -> Vec<(ParamId, &[T])> {
        self.bound
            .iter()
            .filter_map(|&(id, v)| self.grad(v).map(|g| (id, g)))
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    // ---- operators -------------------------------------------------------

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NnError> {
        let out = conv::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            ng,
        ))
    }

    /// `y = x · Wᵀ + b` for `x: [N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let out = norm::linear_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    /// Normalizes over the channel axis at every `(n, h, w)` position,
    /// without affine parameters.
    pub fn normalize_channels(&mut self, x: Var, eps: T) -> Result<Var, NnError> {
        let (out, rstd) = norm::normalize_forward(self.value(x), eps)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Normalize { x, rstd }, ng))
    }

    /// `y[n,c,·] = x[n,c,·] · scale[c] + shift[c]`; `scale`/`shift` may also
    /// be per-sample `[N, C]`.
    pub fn channel_affine(
        &mut self,
        x: Var,
        scale: Option<Var>,
        shift: Option<Var>,
    ) -> Result<Var, NnError> {
        let out = norm::channel_affine_forward(
            self.value(x),
            scale.map(|s| self.value(s)),
            shift.map(|s| self.value(s)),
        )?;
        let ng = self.ng(x) || scale.is_some_and(|s| self.ng(s)) || shift.is_some_and(|s| self.ng(s));
        Ok(self.push(out, Op::ChannelAffine { x, scale, shift }, ng))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::Shape {
                op,
                expected: self.shape(a).to_vec(),
                got: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("mul", a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a).map(|v| v * k);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, k), ng)
    }

    /// Splits channels in half and multiplies the halves.
    pub fn simple_gate(&mut self, x: Var) -> Result<Var, NnError> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if c % 2 != 0 {
            return Err(NnError::invalid("simple_gate", "odd channel count"));
        }
        let half = c / 2;
        let hw = h * w;
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; n * half * hw];
        for s in 0..n {
            for ch in 0..half {
                let a = &src[(s * c + ch) * hw..][..hw];
                let b = &src[(s * c + ch + half) * hw..][..hw];
                let o = &mut out[(s * half + ch) * hw..][..hw];
                for i in 0..hw {
                    o[i] = a[i] * b[i];
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::from_vec(&[n, half, h, w], out)?,
            Op::SimpleGate(x),
            ng,
        ))
    }

    /// Spatial mean per channel: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, NnError> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let inv = T::ONE / T::from_usize(hw);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks_exact(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_vec(&[n, c], out)?, Op::AvgPool(x), ng))
    }

    /// Subtracts each `[h, w]` plane's mean. The map is an orthogonal
    /// projection, so the backward pass applies it to the gradient.
    pub fn center_spatial(&mut self, x: Var) -> Result<Var, NnError> {
        let (_, _, h, w) = self.value(x).dims4()?;
        let mut out = self.value(x).clone();
        center_planes(out.data_mut(), h * w);
        let ng = self.ng(x);
        Ok(self.push(out, Op::CenterSpatial(x), ng))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var, NnError> {
        let out = conv::upsample2x_forward(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Upsample2x(x), ng))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (n, ca, h, w) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(NnError::Shape {
                op: "concat_channels",
                expected: vec![n, cb, h, w],
                got: vec![nb, cb, hb, wb],
            });
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for s in 0..n {
            out.extend_from_slice(&self.value(a).data()[s * ca * hw..(s + 1) * ca * hw]);
            out.extend_from_slice(&self.value(b).data()[s * cb * hw..(s + 1) * cb * hw]);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor::from_vec(&[n, ca + cb, h, w], out)?,
            Op::Concat(a, b),
            ng,
        ))
    }

    /// Softmax inside each `(offset, len)` slice of a `[N, D]` tensor; entries
    /// outside every slice are zero.
    pub fn level_softmax(&mut self, x: Var, slices: &[(usize, usize)]) -> Result<Var, NnError> {
        let out = loss::level_softmax_forward(self.value(x), slices)?;
        let ng = self.ng(x);
        Ok(self.push(
            out,
            Op::LevelSoftmax {
                x,
                slices: slices.to_vec(),
            },
            ng,
        ))
    }

    /// Batch mean of the summed per-slice softmax cross entropies.
    /// `targets[n * slices.len() + l]` is the absolute index of sample `n`'s
    /// true node inside slice `l`.
    pub fn level_cross_entropy(
        &mut self,
        logits: Var,
        slices: &[(usize, usize)],
        targets: &[usize],
    ) -> Result<Var, NnError> {
        let (value, probs) = loss::level_ce_forward(self.value(logits), slices, targets)?;
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(value),
            Op::LevelCrossEntropy {
                logits,
                slices: slices.to_vec(),
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Mean smooth-L1 (Huber with unit threshold) against a constant target.
    pub fn smooth_l1(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var, NnError> {
        if self.shape(pred) != target.shape() {
            return Err(NnError::Shape {
                op: "smooth_l1",
                expected: self.shape(pred).to_vec(),
                got: target.shape().to_vec(),
            });
        }
        let v = loss::smooth_l1_forward(self.value(pred).data(), target.data());
        let ng = self.ng(pred);
        Ok(self.push(
            Tensor::scalar(v),
            Op::SmoothL1 {
                pred,
                target: target.clone(),
            },
            ng,
        ))
    }

    /// `1 − SSIM(pred, target)`, averaged over samples and channels.
    pub fn ssim_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var, NnError> {
        if self.shape(pred) != target.shape() {
            return Err(NnError::Shape {
                op: "ssim_loss",
                expected: self.shape(pred).to_vec(),
                got: target.shape().to_vec(),
            });
        }
        let v = loss::ssim_loss_forward(self.value(pred), target)?;
        let ng = self.ng(pred);
        Ok(self.push(
            Tensor::scalar(v),
            Op::SsimLoss {
                pred,
                target: target.clone(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, T::ONE / T::from_usize(n))
    }

    // ---- reverse pass ----------------------------------------------------

    /// Accumulates `d loss / d node` for every node that needs a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<(), NnError> {
        if self.value(loss).numel() != 1 {
            return Err(NnError::Shape {
                op: "backward",
                expected: vec![1],
                got: self.shape(loss).to_vec(),
            });
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::ONE]);
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let xv = &nodes[x.0].value;
                    let wv = &nodes[w.0].value;
                    let (dx, dw, db) = conv::conv2d_backward(
                        xv,
                        wv,
                        &g,
                        *stride,
                        *pad,
                        nodes[x.0].needs_grad,
                        nodes[w.0].needs_grad,
                        b.is_some_and(|b| nodes[b.0].needs_grad),
                    );
                    add_into(&mut grads, nodes, *x, dx);
                    add_into(&mut grads, nodes, *w, dw);
                    if let Some(b) = b {
                        add_into(&mut grads, nodes, *b, db);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = norm::linear_backward(
                        &nodes[x.0].value,
                        &nodes[w.0].value,
                        &g,
                        nodes[x.0].needs_grad,
                        nodes[w.0].needs_grad,
                        b.is_some_and(|b| nodes[b.0].needs_grad),
                    );
                    add_into(&mut grads, nodes, *x, dx);
                    add_into(&mut grads, nodes, *w, dw);
                    if let Some(b) = b {
                        add_into(&mut grads, nodes, *b, db);
                    }
                }
                Op::Normalize { x, rstd } => {
                    if nodes[x.0].needs_grad {
                        let dx = norm::normalize_backward(&node.value, rstd, &g);
                        add_into(&mut grads, nodes, *x, Some(dx));
                    }
                }
                Op::ChannelAffine { x, scale, shift } => {
                    let (dx, ds, db) = norm::channel_affine_backward(
                        &nodes[x.0].value,
                        scale.map(|s| &nodes[s.0].value),
                        shift.map(|s| &nodes[s.0].value),
                        &g,
                    );
                    add_into(&mut grads, nodes, *x, Some(dx));
                    if let Some(s) = scale {
                        add_into(&mut grads, nodes, *s, ds);
                    }
                    if let Some(s) = shift {
                        add_into(&mut grads, nodes, *s, db);
                    }
                }
                Op::Gelu(x) => {
                    let xv = nodes[x.0].value.data();
                    let dx = xv.iter().zip(&g).map(|(&v, &gi)| gi * gelu_grad(v)).collect();
                    add_into(&mut grads, nodes, *x, Some(dx));
                }
                Op::Add(a, b) => {
                    add_slice(&mut grads, nodes, *a, &g, T::ONE);
                    add_slice(&mut grads, nodes, *b, &g, T::ONE);
                }
                Op::Sub(a, b) => {
                    add_slice(&mut grads, nodes, *a, &g, T::ONE);
                    add_slice(&mut grads, nodes, *b, &g, -T::ONE);
                }
                Op::Mul(a, b) => {
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    let da = g.iter().zip(bv).map(|(&gi, &v)| gi * v).collect();
                    let db = g.iter().zip(av).map(|(&gi, &v)| gi * v).collect();
                    add_into(&mut grads, nodes, *a, Some(da));
                    add_into(&mut grads, nodes, *b, Some(db));
                }
                Op::Scale(a, k) => add_slice(&mut grads, nodes, *a, &g, *k),
                Op::SimpleGate(x) => {
                    let xv = &nodes[x.0].value;
                    let (n, c, h, w) = xv.dims4().expect("rank 4");
                    let (half, hw) = (c / 2, h * w);
                    let src = xv.data();
                    let mut dx = vec![T::ZERO; src.len()];
                    for s in 0..n {
                        for ch in 0..half {
                            let ia = (s * c + ch) * hw;
                            let ib = (s * c + ch + half) * hw;
                            let io = (s * half + ch) * hw;
                            for i in 0..hw {
                                dx[ia + i] = g[io + i] * src[ib + i];
                                dx[ib + i] = g[io + i] * src[ia + i];
                            }
                        }
                    }
                    add_into(&mut grads, nodes, *x, Some(dx));
                }
                Op::AvgPool(x) => {
                    let (_, _, h, w) = nodes[x.0].value.dims4().expect("rank 4");
                    let hw = h * w;
                    let inv = T::ONE / T::from_usize(hw);
                    let mut dx = Vec::with_capacity(g.len() * hw);
                    for &gi in &g {
                        dx.extend(core::iter::repeat_n(gi * inv, hw));
                    }
                    add_into(&mut grads, nodes, *x, Some(dx));
                }
                Op::CenterSpatial(x) => {
                    let (_, _, h, w) = nodes[x.0].value.dims4().expect("rank 4");
                    let mut dx = g.clone();
                    center_planes(&mut dx, h * w);
                    add_into(&mut grads, nodes, *x, Some(dx));
                }
                Op::Upsample2x(x) => {
                    let dx = conv::upsample2x_backward(&nodes[x.0].value, &g);
                    add_into(&mut grads, nodes, *x, Some(dx));
                }
                Op::Concat(a, b) => {
                    let (n, ca, h, w) = nodes[a.0].value.dims4().expect("rank 4");
                    let cb = nodes[b.0].value.dims4().expect("rank 4").1;
                    let hw = h * w;
                    let mut da = Vec::with_capacity(n * ca * hw);
                    let mut db = Vec::with_capacity(n * cb * hw);
                    for s in 0..n {
                        let base = s * (ca + cb) * hw;
                        da.extend_from_slice(&g[base..base + ca * hw]);
                        db.extend_from_slice(&g[base + ca * hw..base + (ca + cb) * hw]);
                    }
                    add_into(&mut grads, nodes, *a, Some(da));
                    add_into(&mut grads, nodes, *b, Some(db));
                }
                Op::LevelSoftmax { x, slices } => {
                    let dx = loss::level_softmax_backward(&node.value, slices, &g);
                    add_into(&mut grads, nodes, *x, Some(dx));
                }
                Op::LevelCrossEntropy {
                    logits,
                    slices,
                    targets,
                    probs,
                } => {
                    let shape = nodes[logits.0].value.shape();
                    let dx = loss::level_ce_backward(shape, slices, targets, probs, g[0]);
                    add_into(&mut grads, nodes, *logits, Some(dx));
                }
                Op::SmoothL1 { pred, target } => {
                    let dx = loss::smooth_l1_backward(nodes[pred.0].value.data(), target.data(), g[0]);
                    add_into(&mut grads, nodes, *pred, Some(dx));
                }
                Op::SsimLoss { pred, target } => {
                    let dx = loss::ssim_loss_backward(&nodes[pred.0].value, target, g[0]);
                    add_into(&mut grads, nodes, *pred, Some(dx));
                }
                Op::Sum(x) => {
                    let len = nodes[x.0].value.numel();
                    add_into(&mut grads, nodes, *x, Some(vec![g[0]; len]));
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}

fn add_into<T: Scalar>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var, d: Option<Vec<T>>) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let Some(d) = d else { return };
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(&d) {
                *a += *x;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

fn add_slice<T: Scalar>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var, d: &[T], k: T) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let acc = grads[v.0].get_or_insert_with(|| vec![T::ZERO; d.len()]);
    for (a, &x) in acc.iter_mut().zip(d) {
        *a += k * x;
    }
}

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact Gaussian-CDF GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    T::from_f64(0.5) * x * (T::ONE + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = T::from_f64(0.5) * (T::ONE + (x * T::from_f64(FRAC_1_SQRT_2)).erf());
    let pdf = T::from_f64(FRAC_1_SQRT_2PI) * (-(x * x) * T::from_f64(0.5)).exp();
    cdf + x * pdf
}

fn center_planes<T: Scalar>(data: &mut [T], plane: usize) {
    let inv = T::ONE / T::from_usize(plane);
    for p in data.chunks_exact_mut(plane) {
        let mean = p.iter().copied().sum::<T>() * inv;
        p.iter_mut().for_each(|v| *v -= mean);
    }
}
