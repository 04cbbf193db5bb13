//! Flat `key = value` text files used for model, training and CLI configs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::parse(source_name, i + 1, "expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(source_name, i + 1, "empty key"));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::parse(source_name, i + 1, format!("duplicate key {key}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: Display,
    {
        self.raw(key)
            .map(|v| v.parse::<V>().map_err(|e| Error::Config(format!("{key} = {v}: {e}"))))
            .transpose()
    }

    pub fn require<V: FromStr>(&self, key: &str) -> Result<V>
    where
        V::Err: Display,
    {
        self.get(key)?.ok_or_else(|| Error::Config(format!("missing key {key}")))
    }

    /// Entries of `other` replace entries here.
    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}
