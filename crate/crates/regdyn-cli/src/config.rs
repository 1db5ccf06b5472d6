//! Flat key=value configuration files.
//!
//! Grammar: one `key = value` assignment per line; keys are dotted
//! identifiers like `lv.eps_list`; `#` starts a comment (full-line or
//! trailing); blank lines are ignored; list values are comma-separated.
//! Values are typed on access, and a duplicate key is an error so typos
//! don't silently lose settings.

use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate key '{0}'")]
    Duplicate(String),
    #[error("key '{key}': expected {want}, got '{got}'")]
    BadValue {
        key: String,
        want: &'static str,
        got: String,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    pub fn empty() -> Self {
        Config::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
                line: i + 1,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            let key = key.trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    msg: format!("bad key '{key}'"),
                });
            }
            if map.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate(key.to_string()));
            }
        }
        Ok(Config { map })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Config::parse(&text)
    }

    /// Insert or override one key (CLI flags take this path).
    pub fn set(&mut self, key: &str, value: &str) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                want: "a real number",
                got: v.clone(),
            }),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                want: "a nonnegative integer",
                got: v.clone(),
            }),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                want: "a nonnegative integer",
                got: v.clone(),
            }),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.map.get(key).map(String::as_str) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(ConfigError::BadValue {
                key: key.into(),
                want: "true or false",
                got: v.into(),
            }),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.map.get(key).map(String::as_str).unwrap_or(default)
    }

    /// Comma-separated list of reals.
    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| ConfigError::BadValue {
                        key: key.into(),
                        want: "comma-separated reals",
                        got: v.clone(),
                    })
                })
                .collect(),
        }
    }

    /// Comma-separated list of integers.
    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, ConfigError> {
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| ConfigError::BadValue {
                        key: key.into(),
                        want: "comma-separated integers",
                        got: v.clone(),
                    })
                })
                .collect(),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}
