//! Planar floating-point images and their PNG / raw encodings.
//!
//! Pixel values are nominally in `[0, 1]`; raw values outside that range are
//! kept in memory and only clamped when quantising to 8 bits. Residual maps
//! in `[−1, 1]` use the offset encoding `v = round((r + 1) / 2 · 255)`.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Channel-major (`C × H × W`) image of `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

const RAW_MAGIC: &[u8; 8] = b"RSCNRAW1";

impl Raster {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Config(format!("degenerate image {channels}×{height}×{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::Config(format!(
                "image {channels}×{height}×{width} needs {} samples, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn same_dims(&self, other: &Raster, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Config(format!(
                "{what}: image dimensions differ ({:?} vs {:?})",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// Elementwise `f(self, other)`.
    pub fn zip_with(&self, other: &Raster, what: &str, f: impl Fn(f32, f32) -> f32) -> Result<Raster> {
        self.same_dims(other, what)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        Raster::new(self.channels, self.height, self.width, data)
    }

    pub fn add(&self, other: &Raster) -> Result<Raster> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Raster) -> Result<Raster> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Raster {
        Raster {
            data: self.data.iter().map(|v| f(*v)).collect(),
            ..*self
        }
    }

    pub fn clamped(&self) -> Raster {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Repeats a single-channel image over `channels` channels.
    pub fn broadcast(&self, channels: usize) -> Result<Raster> {
        if self.channels != 1 {
            return Err(Error::Config(format!("cannot broadcast a {}-channel image", self.channels)));
        }
        Raster::new(channels, self.height, self.width, self.data.repeat(channels))
    }

    /// `channels × size × size` window with its top-left corner at `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, size: usize) -> Result<Raster> {
        if y + size > self.height || x + size > self.width {
            return Err(Error::Config(format!(
                "crop {size}×{size} at ({y}, {x}) exceeds {}×{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * size * size);
        for c in 0..self.channels {
            for row in y..y + size {
                let start = (c * self.height + row) * self.width + x;
                data.extend_from_slice(&self.data[start..start + size]);
            }
        }
        Raster::new(self.channels, size, size, data)
    }

    /// ITU-R BT.601 luma `0.299 R + 0.587 G + 0.114 B` in `f64`; single-channel
    /// images are returned as they are.
    pub fn luminance(&self) -> Vec<f64> {
        if self.channels != 3 {
            return self.plane(0).iter().map(|v| *v as f64).collect();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        r.iter()
            .zip(g)
            .zip(b)
            .map(|((r, g), b)| 0.299 * *r as f64 + 0.587 * *g as f64 + 0.114 * *b as f64)
            .collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, self.channels, self.height, self.width), self.data.clone())
            .expect("raster length matches its shape")
    }

    /// Image `n` of a `(N, C, H, W)` tensor.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Raster> {
        let s = t.shape();
        if n >= s.n() {
            return Err(Error::Config(format!("image {n} of a batch of {}", s.n())));
        }
        let len = s.numel() / s.n();
        Raster::new(s.c(), s.h(), s.w(), t.data()[n * len..(n + 1) * len].to_vec())
    }

    /// Stacks equally sized images into one `(N, C, H, W)` tensor.
    pub fn batch<'a>(images: impl IntoIterator<Item = &'a Raster>) -> Result<Tensor> {
        let mut dims = None;
        let mut data = Vec::new();
        let mut n = 0;
        for img in images {
            match dims {
                None => dims = Some(img.dims()),
                Some(d) if d != img.dims() => {
                    return Err(Error::Config(format!("batch of mixed sizes {d:?} and {:?}", img.dims())))
                }
                Some(_) => {}
            }
            data.extend_from_slice(&img.data);
            n += 1;
        }
        let (c, h, w) = dims.ok_or_else(|| Error::Config("empty batch".into()))?;
        Ok(Tensor::from_vec(Shape::new(n, c, h, w), data)?)
    }

    /// 8-bit PNG (gray or RGB) after clamping to `[0, 1]`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.save_quantised(path, |v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
    }

    /// 8-bit PNG of a residual in `[−1, 1]` via `round((r + 1) / 2 · 255)`.
    pub fn save_residual_png(&self, path: &Path) -> Result<()> {
        self.save_quantised(path, encode_residual)
    }

    fn save_quantised(&self, path: &Path, q: impl Fn(f32) -> u8) -> Result<()> {
        let (h, w) = (self.height, self.width);
        let img_err = |source| Error::Image {
            path: path.to_path_buf(),
            source,
        };
        match self.channels {
            1 => {
                let buf: Vec<u8> = self.data.iter().map(|v| q(*v)).collect();
                ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, buf)
                    .expect("buffer length matches")
                    .save(path)
                    .map_err(img_err)
            }
            3 => {
                let plane = h * w;
                let buf: Vec<u8> = (0..plane)
                    .flat_map(|i| (0..3).map(move |c| (c, i)))
                    .map(|(c, i)| q(self.data[c * plane + i]))
                    .collect();
                ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, buf)
                    .expect("buffer length matches")
                    .save(path)
                    .map_err(img_err)
            }
            c => Err(Error::Config(format!("PNG export supports 1 or 3 channels, not {c}"))),
        }
    }

    /// Loads a PNG as RGB with samples `v / 255`.
    pub fn load_png(path: &Path) -> Result<Raster> {
        Self::load_rgb(path, |v| v as f32 / 255.0)
    }

    /// Loads a residual PNG written by [`Raster::save_residual_png`].
    pub fn load_residual_png(path: &Path) -> Result<Raster> {
        Self::load_rgb(path, decode_residual)
    }

    fn load_rgb(path: &Path, dq: impl Fn(u8) -> f32) -> Result<Raster> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let plane = h * w;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + i] = dq(px[c]);
            }
        }
        Raster::new(3, h, w, data)
    }

    /// Exact little-endian `f32` dump: magic, `u32` C, H, W, samples.
    pub fn save_raw(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(20 + 4 * self.data.len());
        bytes.extend_from_slice(RAW_MAGIC);
        for d in [self.channels, self.height, self.width] {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_raw(path: &Path) -> Result<Raster> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 20 || &bytes[..8] != RAW_MAGIC {
            return Err(Error::format(path, "not a raw image dump"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        let (c, h, w) = (dim(0), dim(1), dim(2));
        let body = &bytes[20..];
        if body.len() != 4 * c * h * w {
            return Err(Error::format(path, format!("expected {} samples", c * h * w)));
        }
        let data = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        Raster::new(c, h, w, data).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub fn encode_residual(r: f32) -> u8 {
    ((r.clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0).round() as u8
}

pub fn decode_residual(v: u8) -> f32 {
    v as f32 / 255.0 * 2.0 - 1.0
}
