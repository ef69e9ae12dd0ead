//! Flat `key = value` experiment configuration.
//!
//! Every file starts with `version = 1`. `#` starts a comment. Keys not
//! accepted by the running subcommand are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use coalsis::{Error, Result};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, (String, usize)>,
    /// Directory relative paths are resolved against.
    base: PathBuf,
}

impl Config {
    /// Parses `text`, accepting only `allowed` keys besides `version`.
    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected 'key = value', found '{line}'", k + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if key != "version" && !allowed.contains(&key) {
                return Err(Error::Config(format!(
                    "line {}: unknown key '{key}'; accepted keys: version, {}",
                    k + 1,
                    allowed.join(", ")
                )));
            }
            if values.insert(key.to_string(), (value.to_string(), k + 1)).is_some() {
                return Err(Error::Config(format!("line {}: key '{key}' set twice", k + 1)));
            }
        }
        let cfg = Self { values, base: PathBuf::new() };
        match cfg.get::<u32>("version")? {
            Some(VERSION) => Ok(cfg),
            Some(v) => Err(Error::Config(format!("unsupported config version {v}; expected {VERSION}"))),
            None => Err(Error::Config(format!("missing 'version = {VERSION}'"))),
        }
    }

    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, allowed)?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str, allowed: &[&str]) -> Result<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(Error::Config(format!("override '{assignment}' is not of the form key=value")));
        };
        let key = key.trim();
        if !allowed.contains(&key) {
            return Err(Error::Config(format!("unknown key '{key}' in override")));
        }
        self.values.insert(key.to_string(), (value.trim().to_string(), 0));
        Ok(())
    }

    fn where_(&self, key: &str) -> String {
        match self.values.get(key) {
            Some((_, 0)) | None => format!("'{key}'"),
            Some((_, line)) => format!("'{key}' (line {line})"),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("{}: cannot parse '{v}'", self.where_(key)))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|x| x.trim())
            .filter(|x| !x.is_empty())
            .map(|x| x.parse().map_err(|_| Error::Config(format!("{}: cannot parse '{x}'", self.where_(key)))))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// A path, resolved against the config file's directory.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|v| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                self.base.join(p)
            }
        })
    }
}

/// Strictly increasing, positive grid.
pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("theta grid is empty".into()));
    }
    if grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::Config("theta grid values must be positive".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("theta grid must be strictly increasing".into()));
    }
    Ok(())
}
