//! Machine-readable check certificates.
//!
//! A certificate is a block of `key = value` lines:
//!
//! ```text
//! check = weak_duality
//! instance = 3f1c…
//! passed = true
//! tolerance = 1.000e-8
//! max_gap = -2.141e-1
//! ```
//!
//! The first three keys are always present and in this order; the rest are
//! check-specific and keep insertion order.

use std::fmt;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub check: String,
    pub instance: String,
    pub passed: bool,
    pub entries: Vec<(String, String)>,
}

/// Fixed-precision scientific notation used for all measured numbers.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.3e}")
    } else {
        format!("{x}")
    }
}

impl Certificate {
    pub fn new(check: &str, instance: &str, passed: bool) -> Self {
        Self { check: check.to_string(), instance: instance.to_string(), passed, entries: Vec::new() }
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn with_num(self, key: &str, value: f64) -> Self {
        self.with(key, fmt_num(value))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("certificate line {}: expected `key = value`", i + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut it = pairs.into_iter();
        let mut take = |key: &str| -> Result<String> {
            match it.next() {
                Some((k, v)) if k == key => Ok(v),
                _ => Err(Error::Parse(format!("certificate is missing `{key}`"))),
            }
        };
        let check = take("check")?;
        let instance = take("instance")?;
        let passed = match take("passed")?.as_str() {
            "true" => true,
            "false" => false,
            other => return Err(Error::Parse(format!("certificate `passed` is `{other}`"))),
        };
        Ok(Self { check, instance, passed, entries: it.collect() })
    }
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "check = {}", self.check)?;
        writeln!(f, "instance = {}", self.instance)?;
        writeln!(f, "passed = {}", self.passed)?;
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
