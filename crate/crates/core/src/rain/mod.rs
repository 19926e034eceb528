//! Synthetic rain: streak layers, the three composition models and on-disk
//! datasets of rainy / clean / residual triples.
//!
//! * [`RainModel::Single`]: `O = B + R`.
//! * [`RainModel::Layered`]: `O = B + Σ_i R^i`, one layer per streak kind.
//! * [`RainModel::Hazy`]: `O = (1 − Σ_{i=0}^n α_i) B + α_0 A + Σ_{i=1}^n α_i R^i`
//!   with atmospheric light `A` and scene transmission `α_0`.
//!
//! The ground-truth residual is always `R_gt = O − B`, so that subtracting it
//! from the rainy image recovers the background.

mod background;
mod dataset;
mod streak;

use std::fmt;
use std::str::FromStr;

pub use background::procedural_background;
pub use dataset::{
    derive_seed, load_split, make_dataset, regenerate, DatasetSpec, Manifest, PairRecord, Sample, Split, SynthRanges,
    MANIFEST_NAME,
};
pub use streak::{autocorrelation, dominant_orientation, gen_streak_layer};

use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RainModel {
    Single,
    Layered,
    Hazy,
}

impl RainModel {
    pub const ALL: [RainModel; 3] = [RainModel::Single, RainModel::Layered, RainModel::Hazy];

    pub fn name(self) -> &'static str {
        match self {
            RainModel::Single => "single",
            RainModel::Layered => "layered",
            RainModel::Hazy => "hazy",
        }
    }
}

impl fmt::Display for RainModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RainModel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        RainModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown rain model `{s}` (expected single, layered or hazy)"))
    }
}

/// One kind of streak: shared direction, shape and brightness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RainLayerSpec {
    /// Degrees from vertical; positive leans towards +x going down.
    pub angle: f32,
    /// Streak length in pixels.
    pub length: f32,
    /// Streak thickness in pixels.
    pub thickness: f32,
    /// Streak seeds per 1000 px².
    pub density: f32,
    /// Layer weight `α_i`: brightness for the additive models, mixing
    /// coefficient for the hazy one.
    pub alpha: f32,
    pub seed: u64,
}

impl RainLayerSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.angle, self.length, self.thickness, self.density, self.alpha]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config(format!("non-finite streak layer parameter in {self:?}")));
        }
        if self.density <= 0.0 {
            return Err(Error::Config(format!("streak density {} must be > 0", self.density)));
        }
        if self.length < 1.0 {
            return Err(Error::Config(format!("streak length {} must be ≥ 1", self.length)));
        }
        if self.thickness <= 0.0 {
            return Err(Error::Config(format!("streak thickness {} must be > 0", self.thickness)));
        }
        Ok(())
    }
}

/// Everything needed to synthesise one rainy image.
#[derive(Debug, Clone, PartialEq)]
pub struct RainSceneSpec {
    pub background: Raster,
    /// Atmospheric light `A` (gray level), used by the hazy model.
    pub atmosphere: f32,
    /// Scene transmission coefficient `α_0`, used by the hazy model.
    pub alpha0: f32,
    pub layers: Vec<RainLayerSpec>,
}

/// A synthesised pair with its ground truth, all in raw (unclipped) floats.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub rainy: Raster,
    pub clean: Raster,
    /// `O − B`.
    pub residual: Raster,
    /// The per-layer maps `R^i` as they enter the composition: `α_i`-scaled
    /// streaks for the additive models, unit-peak streaks for the hazy one.
    pub layers: Vec<Raster>,
}

/// Checks `α_i ≥ 0` for every weight, and `Σ_{i=0}^n α_i ≤ 1` for the hazy
/// model, naming the violated inequality.
pub fn check_weights(model: RainModel, alpha0: f32, alphas: &[f32]) -> Result<()> {
    let named = std::iter::once((0, alpha0)).chain(alphas.iter().enumerate().map(|(i, a)| (i + 1, *a)));
    for (i, a) in named {
        if model != RainModel::Hazy && i == 0 {
            continue;
        }
        if !a.is_finite() || a < 0.0 {
            return Err(Error::Constraint(format!("α_{i} = {a} violates α_i ≥ 0")));
        }
    }
    if model == RainModel::Hazy {
        let total = alpha0 as f64 + alphas.iter().map(|a| *a as f64).sum::<f64>();
        if total > 1.0 {
            return Err(Error::Constraint(format!("Σα_i = {total} violates Σα_i ≤ 1")));
        }
    }
    Ok(())
}

fn check_background(b: &Raster) -> Result<()> {
    match b.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::Constraint(format!("background value {v} violates 0 ≤ B ≤ 1"))),
        None => Ok(()),
    }
}

/// Lifts a single-channel map to the channel count of `like`.
fn match_channels(map: &Raster, like: &Raster) -> Result<Raster> {
    if map.channels() == like.channels() {
        Ok(map.clone())
    } else {
        map.broadcast(like.channels())
    }
}

/// `O = B + R`.
pub fn compose_single(background: &Raster, streaks: &Raster) -> Result<Raster> {
    background.add(&match_channels(streaks, background)?)
}

/// `O = B + Σ_i R^i`.
pub fn compose_layered(background: &Raster, layers: &[Raster]) -> Result<Raster> {
    let mut out = background.clone();
    for layer in layers {
        out = out.add(&match_channels(layer, background)?)?;
    }
    Ok(out)
}

/// `O = (1 − α_0 − Σ α_i) B + α_0 A + Σ α_i R^i`, evaluated in `f64`.
pub fn compose_hazy(background: &Raster, atmosphere: f32, alpha0: f32, alphas: &[f32], layers: &[Raster]) -> Result<Raster> {
    if alphas.len() != layers.len() {
        return Err(Error::Config(format!("{} weights for {} layers", alphas.len(), layers.len())));
    }
    check_weights(RainModel::Hazy, alpha0, alphas)?;
    let layers = layers
        .iter()
        .map(|l| match_channels(l, background))
        .collect::<Result<Vec<_>>>()?;
    let keep = 1.0 - alpha0 as f64 - alphas.iter().map(|a| *a as f64).sum::<f64>();
    let haze = alpha0 as f64 * atmosphere as f64;
    let data = (0..background.data().len())
        .map(|i| {
            let streaks: f64 = alphas.iter().zip(&layers).map(|(a, l)| *a as f64 * l.data()[i] as f64).sum();
            (keep * background.data()[i] as f64 + haze + streaks) as f32
        })
        .collect();
    let (c, h, w) = background.dims();
    Raster::new(c, h, w, data)
}

/// Renders the scene's streak layers and composes them under `model`.
pub fn synthesize(scene: &RainSceneSpec, model: RainModel) -> Result<SynthPair> {
    let clean = &scene.background;
    check_background(clean)?;
    let alphas: Vec<f32> = scene.layers.iter().map(|l| l.alpha).collect();
    check_weights(model, scene.alpha0, &alphas)?;
    if model == RainModel::Single && scene.layers.len() != 1 {
        return Err(Error::Config(format!(
            "the single-layer model takes exactly one streak layer, got {}",
            scene.layers.len()
        )));
    }
    if model == RainModel::Hazy && !(scene.atmosphere.is_finite() && (0.0..=1.0).contains(&scene.atmosphere)) {
        return Err(Error::Constraint(format!(
            "atmospheric light {} violates 0 ≤ A ≤ 1",
            scene.atmosphere
        )));
    }
    let (_, h, w) = clean.dims();
    let streaks = scene
        .layers
        .iter()
        .map(|l| gen_streak_layer(l, h, w))
        .collect::<Result<Vec<_>>>()?;
    let (rainy, residual, layers) = match model {
        RainModel::Single | RainModel::Layered => {
            let layers: Vec<Raster> = streaks
                .iter()
                .zip(&alphas)
                .map(|(s, a)| match_channels(&s.map(|v| v * a), clean))
                .collect::<Result<_>>()?;
            let mut residual = Raster::filled(clean.channels(), h, w, 0.0)?;
            for l in &layers {
                residual = residual.add(l)?;
            }
            let rainy = clean.add(&residual)?;
            (rainy, residual, layers)
        }
        RainModel::Hazy => {
            let rainy = compose_hazy(clean, scene.atmosphere, scene.alpha0, &alphas, &streaks)?;
            let residual = rainy.sub(clean)?;
            (rainy, residual, streaks)
        }
    };
    Ok(SynthPair {
        rainy,
        clean: clean.clone(),
        residual,
        layers,
    })
}
