//! Flat `key = value` configuration files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Later assignments override earlier ones, which is how command-line
//! overrides are layered on top of a file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Result, TvnetError};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-')
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TvnetError::Config(format!("line {}: expected key = value, got {raw:?}", n + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| TvnetError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            TvnetError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    /// Sets a key; `-` in keys is normalised to `_`.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !valid_key(key) {
            return Err(TvnetError::Config(format!("invalid key {key:?}")));
        }
        self.entries.insert(key.replace('-', "_"), value.into());
        Ok(())
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &Config) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parses a key if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| TvnetError::Config(format!("{key} = {v:?}: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fails on keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        let unknown: Vec<_> = self.keys().filter(|k| !known.contains(k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(TvnetError::Config(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )))
        }
    }

    /// Keeps only the keys in `keys`.
    pub fn subset(&self, keys: &[&str]) -> Config {
        Config {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| keys.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

/// Sorted `key = value` lines; parses back to an equal config.
impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = Config::parse("# run\nlr = 0.05  # default\n\nbatch_size=4\nlr = 0.1\n").unwrap();
        assert_eq!(cfg.get::<f64>("lr").unwrap(), Some(0.1));
        assert_eq!(cfg.get_or("batch_size", 1usize).unwrap(), 4);
        assert_eq!(cfg.get::<usize>("epochs").unwrap(), None);
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = Config::parse("b = 2\na = x y\n").unwrap();
        cfg.set("use-hrf", "false").unwrap();
        assert_eq!(Config::parse(&cfg.to_string()).unwrap(), cfg);
        assert!(cfg.contains("use_hrf"));
    }

    #[test]
    fn malformed_lines_are_config_errors() {
        let err = Config::parse("lr 0.05").unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Usage);
        assert!(Config::parse("x = 1").unwrap().get::<bool>("x").is_err());
    }
}
