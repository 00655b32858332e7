//! Flat `key = value` text with `#` comments and optional `[section]`
//! headers.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KvError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing key '{0}'")]
    Missing(String),
    #[error("key '{key}': cannot parse {value:?}")]
    BadValue { key: String, value: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Section {
    /// Empty for entries before the first header.
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), entries: Vec::new() }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        let v = self.require(key)?;
        v.parse().map_err(|_| KvError::BadValue { key: key.to_string(), value: v.to_string() })
    }

    /// Whitespace-separated list of numbers.
    pub fn floats(&self, key: &str, n: usize) -> Result<Vec<f64>, KvError> {
        let v = self.require(key)?;
        let bad = || KvError::BadValue { key: key.to_string(), value: v.to_string() };
        let out: Vec<f64> = v.split_whitespace().map(|t| t.parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
        if out.len() != n {
            return Err(bad());
        }
        Ok(out)
    }

    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }
}

/// Splits `key=value` (used for command-line overrides).
pub fn split_assignment(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    if k.is_empty() {
        return None;
    }
    Some((k.to_string(), v.trim().to_string()))
}

pub fn parse(text: &str) -> Result<Vec<Section>, KvError> {
    let mut sections = vec![Section::default()];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| KvError::Syntax { line: i + 1, message: "unterminated section header".into() })?;
            sections.push(Section::new(name.trim()));
            continue;
        }
        let (k, v) = split_assignment(line)
            .ok_or_else(|| KvError::Syntax { line: i + 1, message: format!("expected 'key = value', got {line:?}") })?;
        sections.last_mut().unwrap().entries.push((k, v));
    }
    Ok(sections)
}

pub fn render(sections: &[Section]) -> String {
    let mut out = String::new();
    for (i, s) in sections.iter().enumerate() {
        if !s.name.is_empty() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{}]", s.name);
        }
        for (k, v) in &s.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
    }
    out
}

/// Space-separated shortest round-trip representation.
pub fn join_floats(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}
