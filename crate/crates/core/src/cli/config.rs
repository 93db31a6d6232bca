//! Flat `key=value` or JSON configuration with per-experiment defaults.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Effective parameters: experiment defaults overlaid by the config file and
/// `--set` overrides. Keys not present in the defaults are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    values: BTreeMap<String, String>,
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

/// Parses a config document: JSON object when it starts with `{`, otherwise
/// `key=value` lines with `#` comments.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(trimmed)?;
        let obj = v.as_object().ok_or_else(|| parse_err("JSON config must be an object"))?;
        return obj.iter().map(|(k, v)| Ok((k.clone(), json_scalar(v)?))).collect();
    }
    let mut out = BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = parse_assignment(line).map_err(|e| parse_err(format!("line {}: {e}", ln + 1)))?;
        out.insert(k, v);
    }
    Ok(out)
}

fn json_scalar(v: &serde_json::Value) -> Result<String> {
    use serde_json::Value;
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Array(items) => Ok(items.iter().map(json_scalar).collect::<Result<Vec<_>>>()?.join(",")),
        _ => Err(parse_err(format!("unsupported JSON value {v}"))),
    }
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| parse_err(format!("expected key=value, got `{s}`")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(parse_err(format!("empty key in `{s}`")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

impl Params {
    pub fn new(defaults: &[(&str, &str)], overrides: &BTreeMap<String, String>) -> Result<Self> {
        let mut values: BTreeMap<String, String> =
            defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in overrides {
            if !values.contains_key(k) {
                let known: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
                return Err(Error::InvalidParameter(format!("unknown key `{k}` (known: {})", known.join(", "))));
            }
            values.insert(k.clone(), v.clone());
        }
        Ok(Self { values })
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn parse_one<T: std::str::FromStr>(key: &str, s: &str) -> Result<T> {
        s.trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("`{key}`: cannot parse `{s}`")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        Self::parse_one(key, self.str(key))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        Self::parse_one(key, self.str(key))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        Self::parse_one(key, self.str(key))
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.list(key)
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.list(key)
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let s = self.str(key);
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|p| Self::parse_one(key, p)).collect()
    }
}
