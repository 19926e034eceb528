use super::conv::{self, Geometry};
use super::{Element, Result, Shape, Tensor, TensorError};

/// Operation tag stored on autograd nodes.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Op<T: Element> {
    Conv2d { dilation: usize, has_bias: bool },
    Add,
    Sub,
    Mul,
    /// `a (N,C,H,W) ⊙ b (1|N, C, 1, 1)`.
    MulChannel,
    OneMinus,
    LeakyRelu(T),
    Sigmoid,
    Tanh,
    GlobalAvgPool,
    Mse,
    Sum,
    SliceChannels { start: usize },
    /// Stack along the leading axis.
    Cat0,
}

impl<T: Element> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Conv2d { .. } => "conv2d",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::MulChannel => "mul_channel",
            Op::OneMinus => "one_minus",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::Mse => "mse_loss",
            Op::Sum => "sum",
            Op::SliceChannels { .. } => "slice_channels",
            Op::Cat0 => "cat0",
        }
    }

    /// Gradient contributions for each parent (`None` when the parent does
    /// not require gradients).
    pub(crate) fn backward(&self, out: &Tensor<T>, gout: &[T], parents: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let need = |i: usize| parents[i].requires_grad();
        match *self {
            Op::Conv2d { dilation, has_bias } => {
                let (x, w) = (&parents[0], &parents[1]);
                let g = Geometry::new(x.shape(), w.shape(), dilation);
                let grads = conv::backward(
                    &g,
                    &x.data(),
                    &w.data(),
                    gout,
                    [need(0), need(1), has_bias && need(2)],
                );
                let mut v = vec![grads.input, grads.weight];
                if has_bias {
                    v.push(grads.bias);
                }
                v
            }
            Op::Add => vec![need(0).then(|| gout.to_vec()), need(1).then(|| gout.to_vec())],
            Op::Sub => vec![
                need(0).then(|| gout.to_vec()),
                need(1).then(|| gout.iter().map(|g| -*g).collect()),
            ],
            Op::Mul => {
                let (a, b) = (parents[0].data(), parents[1].data());
                vec![
                    need(0).then(|| gout.iter().zip(b.iter()).map(|(g, b)| *g * *b).collect()),
                    need(1).then(|| gout.iter().zip(a.iter()).map(|(g, a)| *g * *a).collect()),
                ]
            }
            Op::MulChannel => {
                let (sa, sb) = (parents[0].shape(), parents[1].shape());
                let (a, b) = (parents[0].data(), parents[1].data());
                let plane = sa.plane();
                let ga = need(0).then(|| {
                    let mut ga = vec![T::zero(); a.len()];
                    for (i, (dst, src)) in ga.chunks_exact_mut(plane).zip(gout.chunks_exact(plane)).enumerate() {
                        let s = b[channel_index(i, sa, sb)];
                        dst.iter_mut().zip(src).for_each(|(d, g)| *d = *g * s);
                    }
                    ga
                });
                let gb = need(1).then(|| {
                    let mut gb = vec![T::zero(); b.len()];
                    for (i, (ap, gp)) in a.chunks_exact(plane).zip(gout.chunks_exact(plane)).enumerate() {
                        let acc: T = ap.iter().zip(gp).map(|(x, g)| *x * *g).sum();
                        let j = channel_index(i, sa, sb);
                        gb[j] = gb[j] + acc;
                    }
                    gb
                });
                vec![ga, gb]
            }
            Op::OneMinus => vec![need(0).then(|| gout.iter().map(|g| -*g).collect())],
            Op::LeakyRelu(slope) => {
                let x = parents[0].data();
                vec![need(0).then(|| {
                    x.iter()
                        .zip(gout)
                        .map(|(x, g)| if *x > T::zero() { *g } else { *g * slope })
                        .collect()
                })]
            }
            Op::Sigmoid => {
                let y = out.data();
                vec![need(0).then(|| y.iter().zip(gout).map(|(y, g)| *g * *y * (T::one() - *y)).collect())]
            }
            Op::Tanh => {
                let y = out.data();
                vec![need(0).then(|| y.iter().zip(gout).map(|(y, g)| *g * (T::one() - *y * *y)).collect())]
            }
            Op::GlobalAvgPool => {
                let s = parents[0].shape();
                let plane = s.plane();
                let scale = T::one() / T::from_usize(plane).unwrap();
                vec![need(0).then(|| {
                    gout.iter()
                        .flat_map(|g| std::iter::repeat_n(*g * scale, plane))
                        .collect()
                })]
            }
            Op::Mse => {
                let (p, t) = (parents[0].data(), parents[1].data());
                let k = gout[0] * T::from_f64_lossy(2.0 / p.len() as f64);
                let diff = |sign: T| -> Vec<T> { p.iter().zip(t.iter()).map(|(p, t)| sign * k * (*p - *t)).collect() };
                vec![need(0).then(|| diff(T::one())), need(1).then(|| diff(-T::one()))]
            }
            Op::Sum => vec![need(0).then(|| vec![gout[0]; parents[0].numel()])],
            Op::SliceChannels { start } => {
                let s = parents[0].shape();
                let len = out.shape().c();
                let plane = s.plane();
                vec![need(0).then(|| {
                    let mut g = vec![T::zero(); s.numel()];
                    for n in 0..s.n() {
                        let dst = (n * s.c() + start) * plane;
                        let src = n * len * plane;
                        g[dst..dst + len * plane].copy_from_slice(&gout[src..src + len * plane]);
                    }
                    g
                })]
            }
            Op::Cat0 => {
                let mut offset = 0;
                parents
                    .iter()
                    .map(|p| {
                        let len = p.numel();
                        let g = p.requires_grad().then(|| gout[offset..offset + len].to_vec());
                        offset += len;
                        g
                    })
                    .collect()
            }
        }
    }
}

/// Index into a `(1|N, C, 1, 1)` operand for plane `i` of an `(N, C, H, W)` one.
fn channel_index(plane: usize, a: Shape, b: Shape) -> usize {
    let (n, c) = (plane / a.c(), plane % a.c());
    if b.n() == 1 {
        c
    } else {
        n * a.c() + c
    }
}

fn map<T: Element>(x: &Tensor<T>, op: Op<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    let data = x.data().iter().map(|v| f(*v)).collect();
    Tensor::from_op(x.shape(), data, op, vec![x.clone()])
}

/// Overflow-free logistic function: with `e = exp(−|x|) ∈ (0, 1]`,
/// `σ(x) = 1/(1+e)` for `x ≥ 0` and `e/(1+e)` otherwise. Written as a select
/// rather than a branch, which the sign of activations makes unpredictable.
pub(crate) fn stable_sigmoid<T: Element>(x: T) -> T {
    let e = (-x.abs()).exp();
    let num = if x >= T::zero() { T::one() } else { e };
    num / (T::one() + e)
}

/// `tanh` through `expm1`, which keeps full relative accuracy near zero.
pub(crate) fn expm1_tanh<T: Element>(x: T) -> T {
    let m = (x.abs() * T::from_f64_lossy(-2.0)).exp_m1();
    let t = -m / (m + T::from_f64_lossy(2.0));
    t.copysign(x)
}

impl<T: Element> Tensor<T> {
    fn zip_same(&self, other: &Tensor<T>, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: op.name(),
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| f(*a, *b))
            .collect();
        Ok(Tensor::from_op(self.shape(), data, op, vec![self.clone(), other.clone()]))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_same(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_same(other, Op::Sub, |a, b| a - b)
    }

    /// Elementwise product. `other` may also be a per-channel `(1|N, C, 1, 1)`
    /// tensor, broadcast over the spatial axes.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa == sb {
            return self.zip_same(other, Op::Mul, |a, b| a * b);
        }
        let per_channel = sb.c() == sa.c() && sb.h() == 1 && sb.w() == 1 && (sb.n() == 1 || sb.n() == sa.n());
        if !per_channel {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: sa,
                right: sb,
            });
        }
        let plane = sa.plane();
        let data = {
            let (a, b) = (self.data(), other.data());
            let mut out = Vec::with_capacity(a.len());
            for (i, chunk) in a.chunks_exact(plane).enumerate() {
                let s = b[channel_index(i, sa, sb)];
                out.extend(chunk.iter().map(|v| *v * s));
            }
            out
        };
        Ok(Tensor::from_op(sa, data, Op::MulChannel, vec![self.clone(), other.clone()]))
    }

    /// `1 − x`.
    pub fn one_minus(&self) -> Tensor<T> {
        map(self, Op::OneMinus, |v| T::one() - v)
    }

    /// `max(x, slope·x)` for `slope ∈ (0, 1)`.
    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        map(self, Op::LeakyRelu(slope), |v| if v > T::zero() { v } else { v * slope })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        map(self, Op::Sigmoid, T::logistic)
    }

    pub fn tanh(&self) -> Tensor<T> {
        map(self, Op::Tanh, T::tanh_act)
    }

    /// Spatial mean per `(n, c)`, shape `(N, C, 1, 1)`.
    pub fn global_avg_pool(&self) -> Tensor<T> {
        let s = self.shape();
        let plane = s.plane();
        let data = self
            .data()
            .chunks_exact(plane)
            .map(|p| {
                let sum: f64 = p.iter().map(|v| v.to_f64_lossy()).sum();
                T::from_f64_lossy(sum / plane as f64)
            })
            .collect();
        Tensor::from_op(Shape::new(s.n(), s.c(), 1, 1), data, Op::GlobalAvgPool, vec![self.clone()])
    }

    /// Mean of squared differences over every element.
    pub fn mse_loss(&self, target: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mse_loss",
                left: self.shape(),
                right: target.shape(),
            });
        }
        let value = {
            let (p, t) = (self.data(), target.data());
            let ss: f64 = p
                .iter()
                .zip(t.iter())
                .map(|(p, t)| {
                    let d = (*p - *t).to_f64_lossy();
                    d * d
                })
                .sum();
            ss / p.len() as f64
        };
        Ok(Tensor::from_op(
            Shape::SCALAR,
            vec![T::from_f64_lossy(value)],
            Op::Mse,
            vec![self.clone(), target.clone()],
        ))
    }

    pub fn sum(&self) -> Tensor<T> {
        let total: f64 = self.data().iter().map(|v| v.to_f64_lossy()).sum();
        Tensor::from_op(Shape::SCALAR, vec![T::from_f64_lossy(total)], Op::Sum, vec![self.clone()])
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if start + len > s.c() || len == 0 {
            return Err(TensorError::ChannelRange {
                what: "slice_channels",
                start,
                end: start + len,
                shape: s,
            });
        }
        let plane = s.plane();
        let data = {
            let x = self.data();
            let mut out = Vec::with_capacity(s.n() * len * plane);
            for n in 0..s.n() {
                let from = (n * s.c() + start) * plane;
                out.extend_from_slice(&x[from..from + len * plane]);
            }
            out
        };
        Ok(Tensor::from_op(
            Shape::new(s.n(), len, s.h(), s.w()),
            data,
            Op::SliceChannels { start },
            vec![self.clone()],
        ))
    }

    /// Stacks tensors along the leading axis; trailing dimensions must agree.
    pub fn cat0(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("cat0 of zero tensors".into()))?
            .shape();
        let mut lead = 0;
        for p in parts {
            let s = p.shape();
            if s.0[1..] != first.0[1..] {
                return Err(TensorError::ShapeMismatch {
                    op: "cat0",
                    left: first,
                    right: s,
                });
            }
            lead += s.n();
        }
        let mut data = Vec::with_capacity(lead * first.numel() / first.n());
        for p in parts {
            data.extend_from_slice(&p.data());
        }
        let shape = Shape::new(lead, first.c(), first.h(), first.w());
        Ok(Tensor::from_op(shape, data, Op::Cat0, parts.iter().map(|p| (*p).clone()).collect()))
    }
}
