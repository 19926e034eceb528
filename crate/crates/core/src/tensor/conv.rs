//! Same-padded dilated 2-D cross-correlation via im2col + GEMM.

use super::{Element, Op, Result, Shape, Tensor, TensorError};

/// A convolution kernel: weights `(out, in, k, k)`, bias `(out, 1, 1, 1)`.
///
/// Padding is derived from the dilation so spatial size is preserved.
#[derive(Debug, Clone)]
pub struct ConvKernel<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub dilation: usize,
}

impl<T: Element> ConvKernel<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>, dilation: usize) -> Result<Self> {
        check_weight(weight.shape(), dilation)?;
        if let Some(b) = &bias {
            let expect = Shape::new(weight.shape().n(), 1, 1, 1);
            if b.shape() != expect {
                return Err(TensorError::ShapeMismatch {
                    op: "conv bias",
                    left: weight.shape(),
                    right: b.shape(),
                });
            }
        }
        Ok(Self {
            weight,
            bias,
            dilation,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n()
    }

    pub fn size(&self) -> usize {
        self.weight.shape().h()
    }

    pub fn padding(&self) -> usize {
        padding(self.size(), self.dilation)
    }

    /// Number of weight elements, biases excluded.
    pub fn weight_count(&self) -> usize {
        self.weight.numel()
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        input.conv2d(&self.weight, self.bias.as_ref(), self.dilation)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        std::iter::once(self.weight.clone())
            .chain(self.bias.clone())
            .collect()
    }
}

pub(crate) fn padding(size: usize, dilation: usize) -> usize {
    dilation * (size - 1) / 2
}

pub(crate) fn check_weight(w: Shape, dilation: usize) -> Result<()> {
    let (kh, kw) = (w.h(), w.w());
    if kh != kw || kh % 2 == 0 || !(kh == 1 || kh == 3) {
        return Err(TensorError::KernelSize(if kh == kw { kh } else { kh.max(kw) }));
    }
    if dilation == 0 {
        return Err(TensorError::Dilation);
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    /// Dilated cross-correlation with zero "same" padding plus optional bias.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, dilation: usize) -> Result<Tensor<T>> {
        let (xs, ws) = (self.shape(), weight.shape());
        check_weight(ws, dilation)?;
        if xs.c() != ws.c() {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: xs,
                right: ws,
            });
        }
        if let Some(b) = bias {
            if b.numel() != ws.n() {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    left: ws,
                    right: b.shape(),
                });
            }
        }
        let geom = Geometry::new(xs, ws, dilation);
        let out_shape = Shape::new(xs.n(), ws.n(), xs.h(), xs.w());
        let out = {
            let x = self.data();
            let w = weight.data();
            let b = bias.map(|b| b.data());
            forward(&geom, &x, &w, b.as_deref().map(|v| v.as_slice()))
        };
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Tensor::from_op(
            out_shape,
            out,
            Op::Conv2d {
                dilation,
                has_bias: bias.is_some(),
            },
            parents,
        ))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub dil: usize,
    pub pad: usize,
}

impl Geometry {
    pub fn new(x: Shape, w: Shape, dilation: usize) -> Self {
        Self {
            n: x.n(),
            cin: x.c(),
            cout: w.n(),
            h: x.h(),
            w: x.w(),
            k: w.h(),
            dil: dilation,
            pad: padding(w.h(), dilation),
        }
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Rows of the unfolded input matrix.
    fn kdim(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn pointwise(&self) -> bool {
        self.k == 1
    }
}

/// Unfolds one `(C, H, W)` image into `(C·k·k, H·W)` columns.
pub(crate) fn im2col<T: Element>(g: &Geometry, src: &[T], cols: &mut [T]) {
    let (h, w, hw) = (g.h, g.w, g.hw());
    let mut row = 0;
    for c in 0..g.cin {
        let plane = &src[c * hw..(c + 1) * hw];
        for ki in 0..g.k {
            let dy = (ki * g.dil) as isize - g.pad as isize;
            for kj in 0..g.k {
                let dx = (kj * g.dil) as isize - g.pad as isize;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (x0, x1) = valid_range(w, dx);
                for y in 0..h {
                    let out = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        out.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out[..x0].fill(T::zero());
                    out[x1..].fill(T::zero());
                    let s0 = (x0 as isize + dx) as usize;
                    out[x0..x1].copy_from_slice(&srow[s0..s0 + (x1 - x0)]);
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds columns back, accumulating into `dst`.
pub(crate) fn col2im_acc<T: Element>(g: &Geometry, cols: &[T], dst: &mut [T]) {
    let (h, w, hw) = (g.h, g.w, g.hw());
    let mut row = 0;
    for c in 0..g.cin {
        let plane = &mut dst[c * hw..(c + 1) * hw];
        for ki in 0..g.k {
            let dy = (ki * g.dil) as isize - g.pad as isize;
            for kj in 0..g.k {
                let dx = (kj * g.dil) as isize - g.pad as isize;
                let src = &cols[row * hw..(row + 1) * hw];
                let (x0, x1) = valid_range(w, dx);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let s0 = (x0 as isize + dx) as usize;
                    let drow = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x1 - x0)];
                    for (d, s) in drow.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d = *d + *s;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Output columns `x` in `[x0, x1)` whose source `x + dx` lies inside the row.
fn valid_range(w: usize, dx: isize) -> (usize, usize) {
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
    (x0.min(w), x1)
}

pub(crate) fn forward<T: Element>(g: &Geometry, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let (hw, kd) = (g.hw(), g.kdim());
    let mut out = vec![T::zero(); g.n * g.cout * hw];
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); kd * hw] };
    for n in 0..g.n {
        let xn = &x[n * g.cin * hw..(n + 1) * g.cin * hw];
        let on = &mut out[n * g.cout * hw..(n + 1) * g.cout * hw];
        if let Some(b) = b {
            for (o, row) in on.chunks_exact_mut(hw).enumerate() {
                row.fill(b[o]);
            }
        }
        let src: &[T] = if g.pointwise() {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        T::gemm_acc(g.cout, kd, hw, w, kd as isize, 1, src, hw as isize, 1, on, T::one());
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn backward<T: Element>(
    g: &Geometry,
    x: &[T],
    w: &[T],
    gout: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let (hw, kd) = (g.hw(), g.kdim());
    let [need_x, need_w, need_b] = need;
    let mut gx = need_x.then(|| vec![T::zero(); g.n * g.cin * hw]);
    let mut gw = need_w.then(|| vec![T::zero(); g.cout * kd]);
    let mut gb = need_b.then(|| vec![T::zero(); g.cout]);
    let mut cols = if g.pointwise() || !need_w { Vec::new() } else { vec![T::zero(); kd * hw] };
    let mut gcols = if g.pointwise() || !need_x { Vec::new() } else { vec![T::zero(); kd * hw] };

    for n in 0..g.n {
        let xn = &x[n * g.cin * hw..(n + 1) * g.cin * hw];
        let gn = &gout[n * g.cout * hw..(n + 1) * g.cout * hw];
        if let Some(gb) = gb.as_mut() {
            for (o, row) in gn.chunks_exact(hw).enumerate() {
                gb[o] = gb[o] + row.iter().copied().sum::<T>();
            }
        }
        if let Some(gw) = gw.as_mut() {
            let src: &[T] = if g.pointwise() {
                xn
            } else {
                im2col(g, xn, &mut cols);
                &cols
            };
            // gw (cout × kd) += gout (cout × hw) · srcᵀ (hw × kd)
            T::gemm_acc(g.cout, hw, kd, gn, hw as isize, 1, src, 1, hw as isize, gw, T::one());
        }
        if let Some(gx) = gx.as_mut() {
            let gxn = &mut gx[n * g.cin * hw..(n + 1) * g.cin * hw];
            // (kd × hw) = wᵀ (kd × cout) · gout (cout × hw)
            if g.pointwise() {
                T::gemm_acc(kd, g.cout, hw, w, 1, kd as isize, gn, hw as isize, 1, gxn, T::one());
            } else {
                T::gemm_acc(kd, g.cout, hw, w, 1, kd as isize, gn, hw as isize, 1, &mut gcols, T::zero());
                col2im_acc(g, &gcols, gxn);
            }
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}
