use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::streak::gaussian_blur;
use crate::error::Result;
use crate::raster::Raster;

/// Lowest and highest background intensity; the headroom above keeps most
/// additive streaks inside the 8-bit range.
const FLOOR: f64 = 0.05;
const CEIL: f64 = 0.85;

/// Deterministic RGB test scene in `[FLOOR, CEIL]`: a colour gradient, a few
/// oriented sinusoidal textures and soft-edged rectangles and discs.
pub fn procedural_background(height: usize, width: usize, seed: u64) -> Result<Raster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = height * width;
    let mut rgb = vec![vec![0f64; plane]; 3];

    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.65));
    let tilt = rng.random_range(0.0..TAU);
    let slope: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.25..0.25));
    let diag = ((height * height + width * width) as f64).sqrt();
    for y in 0..height {
        for x in 0..width {
            let u = (x as f64 * tilt.cos() + y as f64 * tilt.sin()) / diag;
            for c in 0..3 {
                rgb[c][y * width + x] = base[c] + slope[c] * u;
            }
        }
    }

    for _ in 0..rng.random_range(2..=4) {
        let freq = rng.random_range(0.03..0.2) * TAU;
        let dir = rng.random_range(0.0..TAU);
        let phase = rng.random_range(0.0..TAU);
        let amp: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.02..0.1));
        for y in 0..height {
            for x in 0..width {
                let s = (freq * (x as f64 * dir.cos() + y as f64 * dir.sin()) + phase).sin();
                for c in 0..3 {
                    rgb[c][y * width + x] += amp[c] * s;
                }
            }
        }
    }

    for _ in 0..rng.random_range(3..=6) {
        let colour: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.85));
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let ry = rng.random_range(0.08..0.3) * height as f64;
        let rx = rng.random_range(0.08..0.3) * width as f64;
        let disc = rng.random_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let (py, px) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let d = if disc { (py * py + px * px).sqrt() } else { py.abs().max(px.abs()) };
                // one-pixel-ish soft edge
                let inside = ((1.0 - d) * ry.min(rx)).clamp(0.0, 1.0);
                for c in 0..3 {
                    let v = &mut rgb[c][y * width + x];
                    *v += inside * (colour[c] - *v);
                }
            }
        }
    }

    let mut data = Vec::with_capacity(3 * plane);
    for channel in &rgb {
        let smooth = gaussian_blur(channel, height, width, 0.7);
        data.extend(smooth.iter().map(|v| v.clamp(FLOOR, CEIL) as f32));
    }
    Raster::new(3, height, width, data)
}
