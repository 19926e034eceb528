use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type a [`Tensor`](super::Tensor) can hold.
///
/// Training and inference run on `f32`; `f64` exists for gradient checking.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// `c ← beta·c + a·b` for strided matrices, `a: m×k`, `b: k×n`, `c: m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        c: &mut [Self],
        beta: Self,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Logistic function `1 / (1 + e^(−x))`, overflow-free.
    #[inline]
    fn logistic(self) -> Self {
        super::ops::stable_sigmoid(self)
    }

    /// Hyperbolic tangent.
    #[inline]
    fn tanh_act(self) -> Self {
        super::ops::expm1_tanh(self)
    }
}

macro_rules! check_extent {
    ($m:expr, $k:expr, $n:expr, $a:expr, $rsa:expr, $csa:expr, $b:expr, $rsb:expr, $csb:expr, $c:expr) => {
        debug_assert!(
            $m == 0 || $k == 0 || ($m - 1) as isize * $rsa + ($k - 1) as isize * $csa < $a.len() as isize
        );
        debug_assert!(
            $k == 0 || $n == 0 || ($k - 1) as isize * $rsb + ($n - 1) as isize * $csb < $b.len() as isize
        );
        assert!($c.len() >= $m * $n);
    };
}

impl Element for f32 {
    #[inline]
    fn logistic(self) -> f32 {
        let e = exp_f32(-self.abs());
        let num = if self >= 0.0 { 1.0 } else { e };
        let y = num / (1.0 + e);
        if self.is_nan() {
            self
        } else {
            y
        }
    }

    #[inline]
    fn tanh_act(self) -> f32 {
        let a = self.abs();
        let e = exp_f32(-2.0 * a);
        let wide = (1.0 - e) / (1.0 + e);
        // cancellation in 1 − e is avoided near zero by the odd series
        let a2 = a * a;
        let narrow = a * (1.0 - a2 * (1.0 / 3.0 - a2 * (2.0 / 15.0)));
        let t = if a < 0.04 { narrow } else { wide };
        let y = t.copysign(self);
        if self.is_nan() {
            self
        } else {
            y
        }
    }

    fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        c: &mut [f32],
        beta: f32,
    ) {
        check_extent!(m, k, n, a, rsa, csa, b, rsb, csb, c);
        // SAFETY: extents checked above; `c` is an exclusive row-major m×n block.
        unsafe {
            gemm::gemm(
                m,
                n,
                k,
                c.as_mut_ptr(),
                1,
                n as isize,
                beta != 0.0,
                a.as_ptr(),
                csa,
                rsa,
                b.as_ptr(),
                csb,
                rsb,
                beta,
                1.0,
                false,
                false,
                false,
                gemm::Parallelism::None,
            );
        }
    }
}

impl Element for f64 {
    fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        c: &mut [f64],
        beta: f64,
    ) {
        check_extent!(m, k, n, a, rsa, csa, b, rsb, csb, c);
        // SAFETY: extents checked above; `c` is an exclusive row-major m×n block.
        unsafe {
            gemm::gemm(
                m,
                n,
                k,
                c.as_mut_ptr(),
                1,
                n as isize,
                beta != 0.0,
                a.as_ptr(),
                csa,
                rsa,
                b.as_ptr(),
                csb,
                rsb,
                beta,
                1.0,
                false,
                false,
                false,
                gemm::Parallelism::None,
            );
        }
    }
}

/// `e^x` for `f32` by range reduction `x = n·ln 2 + r` and a degree-6
/// polynomial on `|r| ≤ ln 2 / 2` (relative error about 2e-7). Branch-free
/// and built from plain arithmetic and bit operations so slice loops over it
/// vectorise; the libm call does not. Saturates to 0 below −87.3 and to
/// `f32::MAX`-range values above 88.
#[inline(always)]
pub(crate) fn exp_f32(x: f32) -> f32 {
    const ROUND: f32 = 12_582_912.0; // 1.5 · 2^23
    let x = x.clamp(-87.3, 88.0);
    let n = (x * std::f32::consts::LOG2_E + ROUND) - ROUND;
    let r = x - n * 0.693_359_4 + n * 2.121_944_4e-4;
    let p = ((((1.987_569_2e-4 * r + 1.398_2e-3) * r + 8.333_452e-3) * r + 4.166_579_6e-2) * r + 1.666_666_5e-1) * r
        + 5e-1;
    let y = p * r * r + r + 1.0;
    // 2^n: n + 127 lands in the mantissa of 2^23 + (n + 127)
    let biased = (n + 127.0 + 8_388_608.0).to_bits() - 0x4B00_0000;
    y * f32::from_bits(biased << 23)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> impl Iterator<Item = f32> {
        (-200_000..=200_000).map(|i| i as f32 * 5e-4).chain([0.0, -0.0, 1e-30, -1e-30, 1e-6, 90.0, -90.0, 1e4, -1e4])
    }

    #[test]
    fn exp_matches_libm() {
        for x in grid().filter(|x| x.abs() < 87.0) {
            let want = (x as f64).exp();
            let got = exp_f32(x) as f64;
            assert!(((got - want) / want).abs() < 4e-7, "exp({x}) = {got}, want {want}");
        }
        assert_eq!(exp_f32(-1e4), exp_f32(-87.3));
        assert!(exp_f32(-1e4) < 1e-37);
        assert!(exp_f32(1e4).is_finite());
    }

    #[test]
    fn f32_activations_match_f64_reference() {
        for x in grid() {
            let xd = x as f64;
            let s = x.logistic() as f64;
            let s_ref = xd.logistic();
            assert!((s - s_ref).abs() <= 4e-7 * s_ref.max(1e-30) + 1e-38, "σ({x}) = {s}, want {s_ref}");
            assert!((0.0..=1.0).contains(&s));
            let t = x.tanh_act() as f64;
            let t_ref = xd.tanh();
            assert!((t - t_ref).abs() <= 4e-7 * t_ref.abs() + 1e-45, "tanh({x}) = {t}, want {t_ref}");
        }
        assert!(f32::NAN.logistic().is_nan());
        assert!(f32::NAN.tanh_act().is_nan());
        assert_eq!(0f32.logistic(), 0.5);
        assert_eq!(0f32.tanh_act(), 0.0);
    }

    #[test]
    fn f64_activations_are_accurate() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.01;
            assert!((x.tanh_act() - x.tanh()).abs() <= 2.0 * f64::EPSILON * x.tanh().abs().max(1e-300));
        }
        assert_eq!(1e-20f64.tanh_act(), 1e-20);
    }
}
