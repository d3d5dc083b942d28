//! Plain-text `key = value` configuration. Blank lines and `#` comments are
//! ignored. Command-line flags are merged on top of the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvConfig {
    values: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, got `{}`", i + 1, raw.trim()))?;
            let k = k.trim().replace('-', "_");
            if k.is_empty() {
                bail!("line {}: empty key", i + 1);
            }
            if values.insert(k.clone(), v.trim().to_string()).is_some() {
                bail!("line {}: key `{k}` set twice", i + 1);
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    /// Rejects keys outside `allowed`, so typos do not pass silently.
    pub fn check_keys<S: AsRef<str>>(&self, allowed: &[S]) -> Result<()> {
        for k in self.values.keys() {
            if !allowed.iter().any(|a| a.as_ref() == k) {
                let names: Vec<&str> = allowed.iter().map(AsRef::as_ref).collect();
                bail!("unknown key `{k}`; accepted keys: {}", names.join(", "));
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow!("key `{key}`: cannot parse `{v}`: {e}"))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.opt(key)?
            .ok_or_else(|| anyhow!("missing required key `{key}` (flag --{})", key.replace('_', "-")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>()
                            .map_err(|e| anyhow!("key `{key}`: cannot parse `{s}`: {e}"))
                    })
                    .collect()
            })
            .transpose()
    }
}
