//! Flag values with a key-value config file as fallback.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};
use setrank::kv::KvConfig;

/// Config file entries, keyed like the flags with `-` replaced by `_`.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    pub kv: KvConfig,
    source: Option<PathBuf>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Ok(Self {
                kv: KvConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
                source: Some(p.to_path_buf()),
            }),
        }
    }

    fn origin(&self) -> String {
        self.source.as_ref().map_or_else(|| "config".into(), |p| p.display().to_string())
    }

    /// The flag if given, else the config entry, else `None`.
    pub fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.kv.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| anyhow!("{}: {key} = {v}: {e}", self.origin())),
        }
    }

    pub fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.opt(flag, key)?.ok_or_else(|| anyhow!("missing --{}", key.replace('_', "-")))
    }

    pub fn path(&self, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        self.opt(flag, key)
    }

    pub fn require_path(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
        self.require(flag, key)
    }
}
