//! Named-tensor checkpoints.
//!
//! Binary layout, little-endian: the 8-byte magic `RSCNCKPT`, a `u32` format
//! version, a `u32` tensor count, then per tensor a `u16` name length, the
//! UTF-8 name, a `u8` rank, `rank` `u32` dims and the `f32` data. The model
//! configuration is written next to it as a `key = value` text file with the
//! `.cfg` extension.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::config::RescanConfig;
use super::net::DerainNet;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::tensor::Element;

pub const MAGIC: &[u8; 8] = b"RSCNCKPT";
pub const VERSION: u32 = 1;

/// A tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

/// Path of the configuration file accompanying a checkpoint.
pub fn config_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("cfg")
}

pub fn encode(tensors: &[StoredTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dims.len() as u8);
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<StoredTensor>, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|e| format!("tensor name is not UTF-8: {e}"))?
            .to_string();
        let rank = c.take(1)?[0] as usize;
        let dims = (0..rank).map(|_| c.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let numel = dims.iter().map(|d| *d as usize).product::<usize>();
        let raw = c.take(numel.checked_mul(4).ok_or("tensor too large")?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(StoredTensor { name, dims, data });
    }
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - c.pos));
    }
    Ok(tensors)
}

impl<T: Element> DerainNet<T> {
    pub fn to_stored(&self) -> Vec<StoredTensor> {
        self.named_params()
            .into_iter()
            .map(|(name, t)| StoredTensor {
                name,
                dims: t.shape().0.iter().map(|d| *d as u32).collect(),
                data: t.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
            })
            .collect()
    }

    /// Writes the binary checkpoint and its configuration file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&encode(&self.to_stored())).map_err(|e| Error::io(path, e))?;
        let mut kv = self.config.to_kv();
        kv.set("param_count", self.param_count());
        kv.set("state_tensors", self.config.state_tensors());
        kv.write(&config_path(path))
    }

    /// Builds a network of `config` holding the stored parameters. Every
    /// parameter must be present with its exact shape and nothing else.
    pub fn from_stored(config: &RescanConfig, stored: &[StoredTensor]) -> std::result::Result<Self, String> {
        let net = Self::init_zero(config).map_err(|e| e.to_string())?;
        let named = net.named_params();
        if named.len() != stored.len() {
            return Err(format!("expected {} tensors, found {}", named.len(), stored.len()));
        }
        for (name, t) in &named {
            let s = stored
                .iter()
                .find(|s| &s.name == name)
                .ok_or_else(|| format!("missing tensor {name}"))?;
            let want: Vec<u32> = t.shape().0.iter().map(|d| *d as u32).collect();
            if s.dims != want {
                return Err(format!("{name}: stored dims {:?}, model expects {}", s.dims, t.shape()));
            }
            let data: Vec<T> = s.data.iter().map(|v| T::from_f64_lossy(*v as f64)).collect();
            t.set_data(&data).map_err(|e| e.to_string())?;
        }
        Ok(net)
    }

    /// Loads a checkpoint and its configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg_path = config_path(path);
        let kv = KvMap::read(&cfg_path)?;
        let config = RescanConfig::from_kv(&kv, &RescanConfig::default())?;
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let stored = decode(&bytes).map_err(|m| Error::format(path, m))?;
        Self::from_stored(&config, &stored).map_err(|m| Error::format(path, m))
    }
}
