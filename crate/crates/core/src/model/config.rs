use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::nn::RecurrentKind;

/// How stages are chained and what each stage predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Framework {
    /// Stateless cascade: each stage removes its prediction from the
    /// previous stage's output.
    Iter,
    /// Each stage predicts what previous stages have not yet removed.
    Additive,
    /// Each stage predicts the whole streak layer.
    Full,
}

impl Framework {
    pub const ALL: [Framework; 3] = [Framework::Iter, Framework::Additive, Framework::Full];

    pub fn name(self) -> &'static str {
        match self {
            Framework::Iter => "iter",
            Framework::Additive => "additive",
            Framework::Full => "full",
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Framework {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "iter" => Ok(Framework::Iter),
            "additive" | "add" => Ok(Framework::Additive),
            "full" => Ok(Framework::Full),
            other => Err(format!("unknown framework '{other}' (expected iter, additive or full)")),
        }
    }
}

/// Optional recurrent unit as written in configs: `none` or a unit name.
fn parse_unit(s: &str) -> Result<Option<RecurrentKind>, String> {
    match s.to_ascii_lowercase().as_str() {
        "none" | "" => Ok(None),
        other => other.parse().map(Some),
    }
}

fn unit_name(unit: Option<RecurrentKind>) -> &'static str {
    unit.map_or("none", RecurrentKind::name)
}

/// Single-stage network architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub depth: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub use_se: bool,
    /// Every dilation set to 1 (the undilated ablation).
    pub all_dilation_one: bool,
    pub slope: f64,
    pub se_ratio: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            width: 8,
            in_channels: 3,
            out_channels: 3,
            use_se: true,
            all_dilation_one: false,
            slope: 0.2,
            se_ratio: 4,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 4 {
            return Err(Error::Config(format!("depth must be at least 4, got {}", self.depth)));
        }
        if self.width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::Config(format!("leaky slope must lie in (0, 1), got {}", self.slope)));
        }
        if self.use_se && (self.se_ratio == 0 || !self.width.is_multiple_of(self.se_ratio)) {
            return Err(Error::Config(format!(
                "SE ratio {} must divide width {}",
                self.se_ratio, self.width
            )));
        }
        Ok(())
    }

    /// Dilation of layer `j` for `j < depth`: `1, 1, 2, 4, …, 2^(d−4), 1, 1`.
    pub fn dilation(&self, j: usize) -> usize {
        if self.all_dilation_one || j == 0 || j + 2 >= self.depth {
            1
        } else {
            1 << (j - 1)
        }
    }

    pub fn dilations(&self) -> Vec<usize> {
        (0..self.depth).map(|j| self.dilation(j)).collect()
    }

    /// Number of trainable scalars of the single-stage network, summed layer
    /// by layer from the architecture table.
    pub fn param_count(&self) -> usize {
        let w = self.width;
        let se = if self.use_se {
            let hidden = w / self.se_ratio;
            (w * hidden + hidden) + (hidden * w + w)
        } else {
            0
        };
        let first = 9 * self.in_channels * w + w + se;
        let middle = (self.depth - 2) * (9 * w * w + w + se);
        let decoder = w * self.out_channels + self.out_channels;
        first + middle + decoder
    }

    pub(crate) fn write_kv(&self, kv: &mut KvMap) {
        kv.set("depth", self.depth);
        kv.set("width", self.width);
        kv.set("in_channels", self.in_channels);
        kv.set("out_channels", self.out_channels);
        kv.set("use_se", self.use_se);
        kv.set("all_dilation_one", self.all_dilation_one);
        kv.set("slope", self.slope);
        kv.set("se_ratio", self.se_ratio);
    }

    pub(crate) fn read_kv(kv: &KvMap, base: &ScanConfig) -> Result<Self> {
        Ok(Self {
            depth: kv.parse_or("depth", base.depth)?,
            width: kv.parse_or("width", base.width)?,
            in_channels: kv.parse_or("in_channels", base.in_channels)?,
            out_channels: kv.parse_or("out_channels", base.out_channels)?,
            use_se: kv.parse_or("use_se", base.use_se)?,
            all_dilation_one: kv.parse_or("all_dilation_one", base.all_dilation_one)?,
            slope: kv.parse_or("slope", base.slope)?,
            se_ratio: kv.parse_or("se_ratio", base.se_ratio)?,
        })
    }
}

pub const DEFAULT_STAGES: usize = 4;
pub const MAX_STAGES: usize = 8;

/// Multi-stage architecture. `stages = 1` with no unit is the single-stage
/// network.
#[derive(Debug, Clone, PartialEq)]
pub struct RescanConfig {
    pub scan: ScanConfig,
    pub stages: usize,
    pub unit: Option<RecurrentKind>,
    pub framework: Framework,
}

impl Default for RescanConfig {
    fn default() -> Self {
        Self {
            scan: ScanConfig::default(),
            stages: DEFAULT_STAGES,
            unit: Some(RecurrentKind::Gru),
            framework: Framework::Full,
        }
    }
}

impl RescanConfig {
    /// The single-stage network.
    pub fn scan(scan: ScanConfig) -> Self {
        Self {
            scan,
            stages: 1,
            unit: None,
            framework: Framework::Additive,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scan.validate()?;
        if !(1..=MAX_STAGES).contains(&self.stages) {
            return Err(Error::Config(format!(
                "stages must lie in 1..={MAX_STAGES}, got {}",
                self.stages
            )));
        }
        if self.framework == Framework::Iter && self.unit.is_some() {
            return Err(Error::Config(format!(
                "the iter framework carries no state between stages; unit must be none, got {}",
                unit_name(self.unit)
            )));
        }
        Ok(())
    }

    /// Number of layers holding recurrent state (all but the decoder).
    pub fn state_layers(&self) -> usize {
        if self.unit.is_some() {
            self.scan.depth - 1
        } else {
            0
        }
    }

    /// Number of state tensors carried between stages.
    pub fn state_tensors(&self) -> usize {
        match self.unit {
            Some(RecurrentKind::Lstm) => 2 * self.state_layers(),
            Some(_) => self.state_layers(),
            None => 0,
        }
    }

    /// Trainable scalars including recurrent gate kernels.
    pub fn param_count(&self) -> usize {
        let Some(kind) = self.unit else {
            return self.scan.param_count();
        };
        let s = &self.scan;
        let w = s.width;
        let g = kind.gates();
        let se = if s.use_se {
            let hidden = w / s.se_ratio;
            2 * w * hidden + hidden + w
        } else {
            0
        };
        let unit = |inp: usize| g * (9 * inp * w + 9 * w * w + w);
        let first = unit(s.in_channels) + se;
        let middle = (s.depth - 2) * (unit(w) + se);
        let decoder = w * s.out_channels + s.out_channels;
        first + middle + decoder
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        self.scan.write_kv(&mut kv);
        kv.set("stages", self.stages);
        kv.set("unit", unit_name(self.unit));
        kv.set("framework", self.framework);
        kv
    }

    /// Reads the keys present in `kv`, taking the rest from `base`.
    pub fn from_kv(kv: &KvMap, base: &RescanConfig) -> Result<Self> {
        let unit = match kv.get("unit") {
            Some(v) => parse_unit(v).map_err(|e| Error::Config(format!("unit = {v}: {e}")))?,
            None => base.unit,
        };
        let cfg = Self {
            scan: ScanConfig::read_kv(kv, &base.scan)?,
            stages: kv.parse_or("stages", base.stages)?,
            unit,
            framework: kv.parse_or("framework", base.framework)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
