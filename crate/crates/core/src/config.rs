//! Flat `name=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Names are case
//! sensitive. Each consumer pulls the names it understands; [`ConfigMap::unused`]
//! reports whatever nobody asked for.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected name=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: {name} set twice")]
    Duplicate { name: String, line: usize },
    #[error("{name}={value}: expected {expected}")]
    BadValue {
        name: String,
        value: String,
        expected: &'static str,
    },
    #[error("unknown setting {0}")]
    Unknown(String),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            let name = name.trim();
            if name.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if entries
                .insert(name.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(ConfigError::Duplicate {
                    name: name.to_string(),
                    line: i + 1,
                });
            }
        }
        Ok(Self {
            entries,
            used: RefCell::default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Sets or overrides one entry.
    pub fn set(&mut self, name: &str, value: impl ToString) {
        self.entries.insert(name.to_string(), value.to_string());
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn raw(&self, name: &str) -> Option<&str> {
        self.used.borrow_mut().insert(name.to_string());
        self.entries.get(name).map(String::as_str)
    }

    pub fn get<T: FromStr>(
        &self,
        name: &str,
        expected: &'static str,
    ) -> Result<Option<T>, ConfigError> {
        match self.raw(name) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| ConfigError::BadValue {
                name: name.to_string(),
                value: v.to_string(),
                expected,
            }),
        }
    }

    pub fn f64_or(&self, name: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.get::<f64>(name, "a number")?.unwrap_or(default);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ConfigError::BadValue {
                name: name.to_string(),
                value: v.to_string(),
                expected: "a finite number",
            })
        }
    }

    pub fn u64_or(&self, name: &str, default: u64) -> Result<u64, ConfigError> {
        Ok(self
            .get::<u64>(name, "a non-negative integer")?
            .unwrap_or(default))
    }

    pub fn u32_or(&self, name: &str, default: u32) -> Result<u32, ConfigError> {
        Ok(self
            .get::<u32>(name, "a non-negative integer")?
            .unwrap_or(default))
    }

    pub fn bool_or(&self, name: &str, default: bool) -> Result<bool, ConfigError> {
        match self.raw(name) {
            None => Ok(default),
            Some("true" | "1" | "yes" | "on") => Ok(true),
            Some("false" | "0" | "no" | "off") => Ok(false),
            Some(v) => Err(ConfigError::BadValue {
                name: name.to_string(),
                value: v.to_string(),
                expected: "true or false",
            }),
        }
    }

    /// Names present in the file that no consumer has read.
    pub fn unused(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.entries
            .keys()
            .filter(|k| !used.contains(*k))
            .cloned()
            .collect()
    }

    /// Fails on the first name nobody read.
    pub fn deny_unused(&self) -> Result<(), ConfigError> {
        match self.unused().into_iter().next() {
            Some(name) => Err(ConfigError::Unknown(name)),
            None => Ok(()),
        }
    }
}
