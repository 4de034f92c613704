//! Flat `key = value` files with `[section]` headers.
//!
//! `#` starts a comment. Reals accept ratios such as `1/6`; lists are comma
//! separated. Every error names the offending line.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
    headers: BTreeMap<String, usize>,
}

fn err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RawConfig::default();
        let mut section = String::new();
        cfg.sections.insert(section.clone(), BTreeMap::new());
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(line, format!("malformed section header `{body}`")))?
                    .trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                    return Err(err(line, format!("invalid section name `{name}`")));
                }
                if cfg.headers.insert(name.to_string(), line).is_some() {
                    return Err(err(line, format!("section [{name}] appears twice")));
                }
                section = name.to_string();
                cfg.sections.entry(section.clone()).or_default();
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected `key = value`, found `{body}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(err(line, "empty key"));
            }
            let map = cfg.sections.get_mut(&section).expect("section registered");
            if let Some(prev) = map.get(key) {
                return Err(err(line, format!("duplicate key `{key}` (first set on line {})", prev.line)));
            }
            map.insert(key.to_string(), Entry { value: value.trim().to_string(), line });
        }
        Ok(cfg)
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.headers.contains_key(name)
    }

    pub fn section_line(&self, name: &str) -> Option<usize> {
        self.headers.get(name).copied()
    }

    /// Removes and returns an entry; keys never taken are reported by [`RawConfig::finish`].
    pub fn take(&mut self, section: &str, key: &str) -> Option<Entry> {
        self.sections.get_mut(section).and_then(|m| m.remove(key))
    }

    /// Removes every remaining entry of a section.
    pub fn drain(&mut self, section: &str) -> Vec<(String, Entry)> {
        self.sections.get_mut(section).map(std::mem::take).unwrap_or_default().into_iter().collect()
    }

    pub fn finish(self) -> Result<()> {
        let mut left: Vec<(usize, String, String)> = self
            .sections
            .into_iter()
            .flat_map(|(s, m)| m.into_iter().map(move |(k, e)| (e.line, s.clone(), k)))
            .collect();
        left.sort();
        match left.first() {
            None => Ok(()),
            Some((line, s, k)) if s.is_empty() => Err(err(*line, format!("unknown key `{k}`"))),
            Some((line, s, k)) => Err(err(*line, format!("unknown key `{k}` in [{s}]"))),
        }
    }
}

impl Entry {
    pub fn fail(&self, key: &str, msg: impl std::fmt::Display) -> Error {
        err(self.line, format!("{key}: {msg}"))
    }

    pub fn real(&self, key: &str) -> Result<f64> {
        parse_real(&self.value).map_err(|m| self.fail(key, m))
    }

    pub fn reals(&self, key: &str) -> Result<Vec<f64>> {
        self.value
            .split(',')
            .map(|s| parse_real(s.trim()).map_err(|m| self.fail(key, m)))
            .collect()
    }

    pub fn int<T: FromStr>(&self, key: &str) -> Result<T> {
        self.value
            .replace('_', "")
            .parse()
            .map_err(|_| self.fail(key, format!("`{}` is not a nonnegative integer", self.value)))
    }

    pub fn ints<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.value
            .split(',')
            .map(|s| {
                s.trim()
                    .replace('_', "")
                    .parse()
                    .map_err(|_| self.fail(key, format!("`{}` is not a nonnegative integer", s.trim())))
            })
            .collect()
    }

    pub fn choice<'a>(&self, key: &str, options: &[&'a str]) -> Result<&'a str> {
        options
            .iter()
            .find(|o| **o == self.value)
            .copied()
            .ok_or_else(|| self.fail(key, format!("`{}` is not one of {}", self.value, options.join(", "))))
    }
}

/// Parses a decimal or a ratio `a/b`.
pub fn parse_real(s: &str) -> std::result::Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
            if b == 0.0 {
                return Err(format!("`{s}` divides by zero"));
            }
            a / b
        }
        None => s.parse().map_err(|_| format!("`{s}` is not a number"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

/// Shortest text that parses back to `v` exactly.
pub fn format_real(v: f64) -> String {
    format!("{v:?}")
}
