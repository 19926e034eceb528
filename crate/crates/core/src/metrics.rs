//! Full-reference image quality: PSNR and luminance SSIM.
//!
//! SSIM uses the reference settings: an 11×11 Gaussian window with σ = 1.5,
//! `K1 = 0.01`, `K2 = 0.03` and a peak of 1, evaluated on BT.601 luma over
//! every window position fully inside the image. Images narrower or shorter
//! than the window use a window shrunk to the image along that axis.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::raster::Raster;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_dims(a: &Raster, b: &Raster, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Config(format!(
            "{what}: image dimensions differ ({:?} vs {:?})",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean squared difference over every sample, accumulated in `f64`.
pub fn mse(a: &Raster, b: &Raster) -> Result<f64> {
    same_dims(a, b, "mse")?;
    let ss: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(ss / a.data().len() as f64)
}

/// `10 · log10(peak² / MSE)` in dB; `+∞` for identical images.
pub fn psnr(a: &Raster, b: &Raster, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Config(format!("PSNR peak {peak} must be positive")));
    }
    let mse = mse(a, b)?;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

/// Normalised 1-D Gaussian of `len` taps centred on `(len − 1) / 2`.
pub fn gaussian_taps(len: usize, sigma: f64) -> Vec<f64> {
    let centre = (len as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as f64 - centre;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Weighted window sums of `v` (an `h × w` plane) at every valid position:
/// the separable product of `gy` down the rows and `gx` along them.
fn filter_valid(v: &[f64], h: usize, w: usize, gy: &[f64], gx: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h - gy.len() + 1, w - gx.len() + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = gx.iter().enumerate().map(|(k, g)| g * v[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = gy.iter().enumerate().map(|(k, g)| g * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// SSIM of one window from its local statistics.
pub fn ssim_from_moments(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

/// Mean luminance SSIM over all window positions.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    same_dims(a, b, "ssim")?;
    let (h, w) = (a.height(), a.width());
    let gy = gaussian_taps(SSIM_WINDOW.min(h), SSIM_SIGMA);
    let gx = gaussian_taps(SSIM_WINDOW.min(w), SSIM_SIGMA);
    let (la, lb) = (a.luminance(), b.luminance());
    let product = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(&la, h, w, &gy, &gx);
    let mu_b = filter_valid(&lb, h, w, &gy, &gx);
    let e_aa = filter_valid(&product(&la, &la), h, w, &gy, &gx);
    let e_bb = filter_valid(&product(&lb, &lb), h, w, &gy, &gx);
    let e_ab = filter_valid(&product(&la, &lb), h, w, &gy, &gx);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            ssim_from_moments(ma, mb, e_aa[i] - ma * ma, e_bb[i] - mb * mb, e_ab[i] - ma * mb)
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Scores of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
}

impl ImageScore {
    /// Scores `estimate` against `reference`, both clamped to `[0, 1]`.
    pub fn measure(image: impl Into<String>, estimate: &Raster, reference: &Raster) -> Result<Self> {
        let (e, r) = (estimate.clamped(), reference.clamped());
        Ok(Self {
            image: image.into(),
            psnr: psnr(&e, &r, 1.0)?,
            ssim: ssim(&e, &r)?,
        })
    }
}

/// Per-image scores with their means.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<ImageScore>,
}

impl MetricReport {
    pub fn new(rows: Vec<ImageScore>) -> Self {
        Self { rows }
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim))
    }

    /// `image,psnr,ssim` with a trailing `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,psnr,ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.image, r.psnr, r.ssim);
        }
        let _ = writeln!(out, "mean,{},{}", self.mean_psnr(), self.mean_ssim());
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.image.len()).max().unwrap_or(0).max(5);
        writeln!(f, "{:<width$}  {:>9}  {:>7}", "image", "PSNR(dB)", "SSIM")?;
        for r in &self.rows {
            writeln!(f, "{:<width$}  {:>9.3}  {:>7.4}", r.image, r.psnr, r.ssim)?;
        }
        write!(f, "{:<width$}  {:>9.3}  {:>7.4}", "mean", self.mean_psnr(), self.mean_ssim())
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    values.sum::<f64>() / n as f64
}
