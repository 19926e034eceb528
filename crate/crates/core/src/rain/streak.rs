use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RainLayerSpec;
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Standard deviation of the smoothing applied after rasterising segments.
const SMOOTH_SIGMA: f64 = 0.6;

/// Renders one streak layer as a single-channel map in `[0, 1]`.
///
/// About `density · H · W / 1000` seed points are scattered uniformly (over
/// a canvas padded by half a streak so streaks may enter through the
/// border), each drawn as an anti-aliased segment of the given length and
/// thickness oriented `angle` degrees from vertical, combined by maximum,
/// Gaussian-smoothed and peak-normalised.
pub fn gen_streak_layer(spec: &RainLayerSpec, height: usize, width: usize) -> Result<Raster> {
    spec.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::Config(format!("degenerate streak layer {height}×{width}")));
    }
    let mut map = vec![0f64; height * width];
    let count = (spec.density as f64 * (height * width) as f64 / 1000.0).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let theta = (spec.angle as f64).to_radians();
    let (dx, dy) = (theta.sin(), theta.cos());
    let half_len = (spec.length as f64 - 1.0) / 2.0;
    let radius = spec.thickness as f64 / 2.0;
    let pad = half_len + radius + 1.0;
    for _ in 0..count {
        let cy = rng.random_range(-pad..height as f64 + pad);
        let cx = rng.random_range(-pad..width as f64 + pad);
        let intensity = rng.random_range(0.6..=1.0);
        draw_segment(&mut map, height, width, (cy, cx), (dy, dx), half_len, radius, intensity);
    }
    let smoothed = gaussian_blur(&map, height, width, SMOOTH_SIGMA);
    let peak = smoothed.iter().cloned().fold(0.0, f64::max);
    let data = if peak > 0.0 {
        smoothed.iter().map(|v| (v / peak) as f32).collect()
    } else {
        vec![0.0; height * width]
    };
    Raster::new(1, height, width, data)
}

#[allow(clippy::too_many_arguments)]
fn draw_segment(
    map: &mut [f64],
    height: usize,
    width: usize,
    (cy, cx): (f64, f64),
    (dy, dx): (f64, f64),
    half_len: f64,
    radius: f64,
    intensity: f64,
) {
    let reach = half_len + radius + 1.0;
    let y0 = (cy - reach).floor().max(0.0) as usize;
    let x0 = (cx - reach).floor().max(0.0) as usize;
    let y1 = ((cy + reach).ceil() as isize).min(height as isize - 1);
    let x1 = ((cx + reach).ceil() as isize).min(width as isize - 1);
    if y1 < 0 || x1 < 0 {
        return;
    }
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            let (py, px) = (y as f64 - cy, x as f64 - cx);
            // distance from the pixel centre to the segment
            let t = (py * dy + px * dx).clamp(-half_len, half_len);
            let dist = ((py - t * dy).powi(2) + (px - t * dx).powi(2)).sqrt();
            let coverage = (radius + 0.5 - dist).clamp(0.0, 1.0);
            let v = &mut map[y * width + x];
            *v = v.max(coverage * intensity);
        }
    }
}

/// Separable Gaussian blur with edge clamping, radius `⌈3σ⌉`.
pub(crate) fn gaussian_blur(src: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            rows[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * src[y * width + clamp(x as isize + k as isize - r, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * rows[clamp(y as isize + k as isize - r, height) * width + x])
                .sum();
        }
    }
    out
}

/// Dominant streak direction of a single-channel map, in degrees from
/// vertical in `(−90, 90]` (same convention as [`RainLayerSpec::angle`]).
///
/// Uses the summed structure tensor of Scharr gradients: the
/// gradient orientation with most energy is perpendicular to the streaks.
pub fn dominant_orientation(map: &Raster) -> f64 {
    let (h, w) = (map.height(), map.width());
    let v = map.plane(0);
    let (mut jxx, mut jyy, mut jxy) = (0.0, 0.0, 0.0);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let p = |dy: usize, dx: usize| v[(y + dy - 1) * w + x + dx - 1] as f64;
            // Scharr derivatives: nearly rotation-invariant on the pixel grid
            let gx = 3.0 * (p(0, 2) - p(0, 0)) + 10.0 * (p(1, 2) - p(1, 0)) + 3.0 * (p(2, 2) - p(2, 0));
            let gy = 3.0 * (p(2, 0) - p(0, 0)) + 10.0 * (p(2, 1) - p(0, 1)) + 3.0 * (p(2, 2) - p(0, 2));
            jxx += gx * gx;
            jyy += gy * gy;
            jxy += gx * gy;
        }
    }
    // gradient orientation φ from the x axis; streaks run along φ + 90°,
    // which is −φ measured from the downward vertical
    let phi = 0.5 * (2.0 * jxy).atan2(jxx - jyy);
    let mut angle = -phi.to_degrees();
    if angle <= -90.0 {
        angle += 180.0;
    }
    if angle > 90.0 {
        angle -= 180.0;
    }
    angle
}

/// Mean-removed autocorrelation of a single-channel map at offset `(dy, dx)`,
/// normalised by the zero-lag value.
pub fn autocorrelation(map: &Raster, dy: usize, dx: usize) -> f64 {
    let (h, w) = (map.height(), map.width());
    let v = map.plane(0);
    let mean = v.iter().map(|x| *x as f64).sum::<f64>() / v.len() as f64;
    let at = |y: usize, x: usize| v[y * w + x] as f64 - mean;
    let var: f64 = v.iter().map(|x| (*x as f64 - mean).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for y in 0..h.saturating_sub(dy) {
        for x in 0..w.saturating_sub(dx) {
            acc += at(y, x) * at(y + dy, x + dx);
        }
    }
    acc / var
}
