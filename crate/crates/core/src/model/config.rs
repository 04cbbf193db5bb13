use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvConfig;

/// Architecture hyperparameters.
///
/// Encoder layers are numbered `1..=layers`. Global attention runs after every
/// layer `j >= global_start`; `global_start == layers + 1` disables it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub global_start: usize,
    pub hidden: usize,
    pub heads_local: usize,
    pub heads_global: usize,
    pub ffn_size: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub decoder_layers: usize,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            global_start: 3,
            hidden: 64,
            heads_local: 4,
            heads_global: 4,
            ffn_size: 256,
            vocab_size: 8192,
            max_seq_len: 32,
            decoder_layers: 1,
            layer_norm_eps: 1e-6,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.decoder_layers == 0 {
            return bad("layers and decoder_layers must be at least 1".into());
        }
        if self.global_start == 0 || self.global_start > self.layers + 1 {
            return bad(format!("global_start must lie in 1..={}", self.layers + 1));
        }
        if self.heads_local == 0 || self.heads_global == 0 {
            return bad("head counts must be positive".into());
        }
        if self.hidden % self.heads_local != 0 || self.hidden % self.heads_global != 0 {
            return bad(format!(
                "hidden {} not divisible by heads {}/{}",
                self.hidden, self.heads_local, self.heads_global
            ));
        }
        if self.max_seq_len < 2 || self.vocab_size == 0 || self.ffn_size == 0 {
            return bad("max_seq_len ≥ 2, vocab_size and ffn_size > 0 required".into());
        }
        Ok(())
    }

    /// Whether encoder layer `j` (1-based) is followed by global attention.
    pub fn has_global(&self, j: usize) -> bool {
        j >= self.global_start && j <= self.layers
    }

    pub fn global_layers(&self) -> std::ops::RangeInclusive<usize> {
        self.global_start..=self.layers
    }

    /// Same architecture with global attention removed.
    pub fn without_global(&self) -> Self {
        Self { global_start: self.layers + 1, ..self.clone() }
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("layers", self.layers);
        kv.set("global_start", self.global_start);
        kv.set("hidden", self.hidden);
        kv.set("heads_local", self.heads_local);
        kv.set("heads_global", self.heads_global);
        kv.set("ffn_size", self.ffn_size);
        kv.set("vocab_size", self.vocab_size);
        kv.set("max_seq_len", self.max_seq_len);
        kv.set("decoder_layers", self.decoder_layers);
        kv.set("layer_norm_eps", self.layer_norm_eps);
        kv.set("init_std", self.init_std);
        kv
    }

    /// Missing keys fall back to the defaults.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            layers: kv.get("layers")?.unwrap_or(d.layers),
            global_start: kv.get("global_start")?.unwrap_or(d.global_start),
            hidden: kv.get("hidden")?.unwrap_or(d.hidden),
            heads_local: kv.get("heads_local")?.unwrap_or(d.heads_local),
            heads_global: kv.get("heads_global")?.unwrap_or(d.heads_global),
            ffn_size: kv.get("ffn_size")?.unwrap_or(d.ffn_size),
            vocab_size: kv.get("vocab_size")?.unwrap_or(d.vocab_size),
            max_seq_len: kv.get("max_seq_len")?.unwrap_or(d.max_seq_len),
            decoder_layers: kv.get("decoder_layers")?.unwrap_or(d.decoder_layers),
            layer_norm_eps: kv.get("layer_norm_eps")?.unwrap_or(d.layer_norm_eps),
            init_std: kv.get("init_std")?.unwrap_or(d.init_std),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_kv().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvConfig::load(path)?)
    }
}
