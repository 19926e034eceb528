//! Line-oriented `key = value` text used for model and training configs.
//!
//! Blank lines and lines starting with `#` are ignored. Keys keep their
//! insertion order when written.

use std::fmt::{self, Display};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: Vec<(String, String)>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut map = KvMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", lineno + 1))?;
            map.set(k.trim(), v.trim());
        }
        Ok(map)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|msg| Error::format(path, msg))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    /// Parsed value of `key`, or `None` when absent.
    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("{key} = {v}: {e}")))
            })
            .transpose()
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in &other.entries {
            self.set(k, v);
        }
    }
}

impl Display for KvMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Comma-separated list of values.
pub fn parse_list<T: FromStr>(text: &str) -> std::result::Result<Vec<T>, T::Err> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

pub fn join_list<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments_and_overrides() {
        let m = KvMap::parse("# header\n depth = 7\n\nwidth=24\ndepth = 5\n").unwrap();
        assert_eq!(m.get("depth"), Some("5"));
        assert_eq!(m.parse_or("width", 0usize).unwrap(), 24);
        assert_eq!(m.parse_or("missing", 3usize).unwrap(), 3);
        assert!(m.parse_opt::<usize>("depth").unwrap().is_some());
        assert!(KvMap::parse("no equals sign").is_err());
        let text = m.to_string();
        assert_eq!(KvMap::parse(&text).unwrap(), m);
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<f64>("-30, -15,0,15 ,30").unwrap(), vec![-30.0, -15.0, 0.0, 15.0, 30.0]);
        assert_eq!(join_list(&[1, 2, 3]), "1,2,3");
        assert!(parse_list::<usize>("").unwrap().is_empty());
    }
}
