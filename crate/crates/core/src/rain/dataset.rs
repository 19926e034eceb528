use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{procedural_background, synthesize, RainLayerSpec, RainModel, RainSceneSpec, SynthPair};
use crate::error::{Error, Result};
use crate::kv::{join_list, parse_list};
use crate::raster::Raster;

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Child seed for item `index` of a stream rooted at `master` (SplitMix64
/// finaliser over a golden-ratio stride).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

/// Sampling ranges for the per-pair scene parameters. Angles are drawn from
/// the listed set; every other scalar uniformly from its interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRanges {
    pub layers: usize,
    pub angles: Vec<f32>,
    pub length: (f32, f32),
    pub thickness: (f32, f32),
    pub density: (f32, f32),
    pub alpha: (f32, f32),
    pub alpha0: (f32, f32),
    pub atmosphere: (f32, f32),
}

impl SynthRanges {
    /// Three streak layers in five directions; weights sized so the hazy
    /// model's `Σα_i ≤ 1` always holds.
    pub fn defaults(model: RainModel) -> Self {
        let (layers, alpha) = match model {
            RainModel::Single => (1, (0.3, 0.7)),
            RainModel::Layered => (3, (0.25, 0.6)),
            RainModel::Hazy => (3, (0.08, 0.2)),
        };
        Self {
            layers,
            angles: vec![-30.0, -15.0, 0.0, 15.0, 30.0],
            length: (8.0, 16.0),
            thickness: (1.0, 2.0),
            density: (1.5, 4.0),
            alpha,
            alpha0: (0.0, 0.1),
            atmosphere: (0.7, 1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.angles.is_empty() {
            return Err(Error::Config("at least one streak angle is needed".into()));
        }
        for (name, (lo, hi)) in [
            ("length", self.length),
            ("thickness", self.thickness),
            ("density", self.density),
            ("alpha", self.alpha),
            ("alpha0", self.alpha0),
            ("atmosphere", self.atmosphere),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }
}

/// What to generate: `pairs` scenes of `height × width`, the last
/// `test_pairs` of which form the test split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub model: RainModel,
    pub pairs: usize,
    pub test_pairs: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub ranges: SynthRanges,
}

impl DatasetSpec {
    /// 20 training and 5 test pairs of 64×64 layered rain.
    pub fn desk_default(seed: u64) -> Self {
        Self::new(RainModel::Layered, 25, 5, 64, seed)
    }

    pub fn new(model: RainModel, pairs: usize, test_pairs: usize, size: usize, seed: u64) -> Self {
        Self {
            model,
            pairs,
            test_pairs,
            height: size,
            width: size,
            seed,
            ranges: SynthRanges::defaults(model),
        }
    }
}

/// Everything needed to regenerate one pair, plus its file names.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub index: usize,
    pub split: Split,
    pub seed: u64,
    pub background_seed: u64,
    pub atmosphere: f32,
    pub alpha0: f32,
    pub layers: Vec<RainLayerSpec>,
    pub rainy: String,
    pub clean: String,
    pub residual: String,
}

impl PairRecord {
    pub(crate) fn draw(spec: &DatasetSpec, index: usize) -> Self {
        let r = &spec.ranges;
        let seed = derive_seed(spec.seed, index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f32, f32)| if lo == hi { lo } else { rng.random_range(lo..hi) };
        let atmosphere = uniform(&mut rng, r.atmosphere);
        let alpha0 = if spec.model == RainModel::Hazy { uniform(&mut rng, r.alpha0) } else { 0.0 };
        let mut layers = Vec::with_capacity(r.layers);
        for i in 0..r.layers {
            let length = uniform(&mut rng, r.length);
            let thickness = uniform(&mut rng, r.thickness);
            let density = uniform(&mut rng, r.density);
            let alpha = uniform(&mut rng, r.alpha);
            let angle = r.angles[rng.random_range(0..r.angles.len())];
            layers.push(RainLayerSpec {
                angle,
                length,
                thickness,
                density,
                alpha,
                seed: derive_seed(seed, i as u64 + 1),
            });
        }
        let split = if index + spec.test_pairs >= spec.pairs { Split::Test } else { Split::Train };
        let stem = format!("{}_{index:03}", split.name());
        PairRecord {
            index,
            split,
            seed,
            background_seed: derive_seed(seed, 0),
            atmosphere,
            alpha0,
            layers,
            rainy: format!("{stem}_rainy.png"),
            clean: format!("{stem}_clean.png"),
            residual: format!("{stem}_residual.png"),
        }
    }

    fn synthesize(&self, model: RainModel, height: usize, width: usize) -> Result<SynthPair> {
        let scene = RainSceneSpec {
            background: procedural_background(height, width, self.background_seed)?,
            atmosphere: self.atmosphere,
            alpha0: self.alpha0,
            layers: self.layers.clone(),
        };
        synthesize(&scene, model)
    }

    fn to_line(&self) -> String {
        let layers: Vec<String> = self
            .layers
            .iter()
            .map(|l| format!("{}/{}/{}/{}/{}/{}", l.angle, l.length, l.thickness, l.density, l.alpha, l.seed))
            .collect();
        format!(
            "pair index={} split={} seed={} background_seed={} atmosphere={} alpha0={} rainy={} clean={} residual={} layers={}",
            self.index,
            self.split.name(),
            self.seed,
            self.background_seed,
            self.atmosphere,
            self.alpha0,
            self.rainy,
            self.clean,
            self.residual,
            if layers.is_empty() { "-".to_string() } else { layers.join(";") },
        )
    }

    fn parse(fields: &Fields) -> std::result::Result<Self, String> {
        let layers = match fields.get("layers")? {
            "-" => Vec::new(),
            text => text.split(';').map(parse_layer).collect::<std::result::Result<_, _>>()?,
        };
        Ok(PairRecord {
            index: fields.parse("index")?,
            split: fields.parse("split")?,
            seed: fields.parse("seed")?,
            background_seed: fields.parse("background_seed")?,
            atmosphere: fields.parse("atmosphere")?,
            alpha0: fields.parse("alpha0")?,
            layers,
            rainy: fields.get("rainy")?.to_string(),
            clean: fields.get("clean")?.to_string(),
            residual: fields.get("residual")?.to_string(),
        })
    }
}

fn parse_layer(text: &str) -> std::result::Result<RainLayerSpec, String> {
    let parts: Vec<&str> = text.split('/').collect();
    let [angle, length, thickness, density, alpha, seed] = parts[..] else {
        return Err(format!("layer `{text}`: expected angle/length/thickness/density/alpha/seed"));
    };
    let f = |v: &str| v.parse::<f32>().map_err(|e| format!("layer `{text}`: {e}"));
    Ok(RainLayerSpec {
        angle: f(angle)?,
        length: f(length)?,
        thickness: f(thickness)?,
        density: f(density)?,
        alpha: f(alpha)?,
        seed: seed.parse().map_err(|e| format!("layer `{text}`: {e}"))?,
    })
}

/// `key=value` tokens of one manifest line.
struct Fields<'a>(Vec<(&'a str, &'a str)>);

impl<'a> Fields<'a> {
    fn split(tokens: impl Iterator<Item = &'a str>) -> std::result::Result<Self, String> {
        tokens
            .map(|t| t.split_once('=').ok_or_else(|| format!("token `{t}` is not key=value")))
            .collect::<std::result::Result<_, _>>()
            .map(Fields)
    }

    fn get(&self, key: &str) -> std::result::Result<&'a str, String> {
        self.0
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("missing `{key}`"))
    }

    fn parse<T: FromStr>(&self, key: &str) -> std::result::Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key)?;
        v.parse().map_err(|e| format!("`{key}={v}`: {e}"))
    }
}

/// Line-oriented dataset description: a `dataset` header and one `pair`
/// record per generated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub model: RainModel,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub angles: Vec<f32>,
    pub records: Vec<PairRecord>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::from(
            "# rain dataset manifest; training target = rainy − clean; \
             residual PNGs encode round((r + 1) / 2 · 255)\n",
        );
        let _ = writeln!(
            out,
            "dataset model={} height={} width={} seed={} pairs={} angles={}",
            self.model,
            self.height,
            self.width,
            self.seed,
            self.records.len(),
            join_list(&self.angles),
        );
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut header = None;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |e: String| format!("line {}: {e}", lineno + 1);
            let mut tokens = line.split_whitespace();
            let kind = tokens.next().unwrap_or_default();
            let fields = Fields::split(tokens).map_err(at)?;
            match kind {
                "dataset" => header = Some(Self::parse_header(&fields).map_err(at)?),
                "pair" => records.push(PairRecord::parse(&fields).map_err(at)?),
                other => return Err(at(format!("unknown record kind `{other}`"))),
            }
        }
        let (mut manifest, pairs) = header.ok_or("missing `dataset` header line")?;
        if records.len() != pairs {
            return Err(format!("header announces {pairs} pairs, found {}", records.len()));
        }
        manifest.records = records;
        Ok(manifest)
    }

    /// The header's fields and announced pair count.
    fn parse_header(fields: &Fields) -> std::result::Result<(Self, usize), String> {
        let pairs: usize = fields.parse("pairs")?;
        let angles = fields.get("angles")?;
        let manifest = Manifest {
            model: fields.parse("model")?,
            height: fields.parse("height")?,
            width: fields.parse("width")?,
            seed: fields.parse("seed")?,
            angles: if angles.is_empty() {
                Vec::new()
            } else {
                parse_list(angles).map_err(|e| format!("angles: {e}"))?
            },
            records: Vec::new(),
        };
        Ok((manifest, pairs))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text).map_err(|msg| Error::format(&path, msg))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &PairRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

fn write_pair(dir: &Path, record: &PairRecord, pair: &SynthPair) -> Result<()> {
    pair.rainy.save_png(&dir.join(&record.rainy))?;
    pair.clean.save_png(&dir.join(&record.clean))?;
    pair.residual.save_residual_png(&dir.join(&record.residual))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Synthesises `spec.pairs` pairs into `out_dir` as PNG triples plus a
/// manifest from which they can be regenerated bit for bit.
pub fn make_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<Manifest> {
    spec.ranges.validate()?;
    if spec.test_pairs > spec.pairs {
        return Err(Error::Config(format!(
            "{} test pairs requested out of {}",
            spec.test_pairs, spec.pairs
        )));
    }
    if spec.model == RainModel::Single && spec.ranges.layers != 1 {
        return Err(Error::Config("the single-layer model takes exactly one streak layer".into()));
    }
    create_dir(out_dir)?;
    let mut records = Vec::with_capacity(spec.pairs);
    for index in 0..spec.pairs {
        let record = PairRecord::draw(spec, index);
        let pair = record.synthesize(spec.model, spec.height, spec.width)?;
        write_pair(out_dir, &record, &pair)?;
        records.push(record);
    }
    let manifest = Manifest {
        model: spec.model,
        height: spec.height,
        width: spec.width,
        seed: spec.seed,
        angles: spec.ranges.angles.clone(),
        records,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Rewrites every pair listed in `manifest` (and the manifest) into `out_dir`.
pub fn regenerate(manifest: &Manifest, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    for record in &manifest.records {
        let pair = record.synthesize(manifest.model, manifest.height, manifest.width)?;
        write_pair(out_dir, record, &pair)?;
    }
    manifest.write(out_dir)
}

/// One loaded pair. The training target is recomputed as `rainy − clean`
/// from the decoded PNGs, so it matches the clipped, quantised inputs
/// exactly rather than the raw residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub rainy: Raster,
    pub clean: Raster,
    pub target: Raster,
}

impl Sample {
    pub fn new(name: impl Into<String>, rainy: Raster, clean: Raster) -> Result<Self> {
        let target = rainy.sub(&clean)?;
        Ok(Self {
            name: name.into(),
            rainy,
            clean,
            target,
        })
    }
}

/// Loads the pairs of one split of a dataset directory.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Sample>> {
    let manifest = Manifest::read(dir)?;
    manifest
        .split(split)
        .map(|r| {
            let path = |f: &str| -> PathBuf { dir.join(f) };
            let name = r.rainy.trim_end_matches("_rainy.png");
            Sample::new(name, Raster::load_png(&path(&r.rainy))?, Raster::load_png(&path(&r.clean))?)
        })
        .collect()
}
