use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{read_checkpoint, write_checkpoint, Tensor};

use super::ModelConfig;

/// All learnable weights, keyed by parameter path.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

fn norm_names(prefix: &str) -> [String; 2] {
    [format!("{prefix}.gain"), format!("{prefix}.bias")]
}

/// Every parameter path and shape for `config`, in a fixed order.
pub fn param_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (c, f) = (config.hidden, config.ffn_size);
    let mut out: Vec<(String, Vec<usize>)> = vec![
        ("embed.token".into(), vec![config.vocab_size, c]),
        ("embed.position".into(), vec![config.max_seq_len, c]),
    ];
    let norm = |out: &mut Vec<(String, Vec<usize>)>, prefix: String| {
        for n in norm_names(&prefix) {
            out.push((n, vec![c]));
        }
    };
    for j in 1..=config.layers {
        let p = format!("encoder.{j}");
        norm(&mut out, format!("{p}.attn_norm"));
        for w in ["q", "k", "v", "o"] {
            out.push((format!("{p}.attn.{w}"), vec![c, c]));
        }
        norm(&mut out, format!("{p}.ffn_norm"));
        out.push((format!("{p}.ffn.in"), vec![c, f]));
        out.push((format!("{p}.ffn.out"), vec![f, c]));
        if config.has_global(j) {
            norm(&mut out, format!("{p}.global.norm"));
            for w in ["q", "k", "v", "o"] {
                out.push((format!("{p}.global.{w}"), vec![c, c]));
            }
        }
    }
    norm(&mut out, "encoder.final_norm".into());
    out.push(("decoder.start".into(), vec![1, c]));
    for d in 1..=config.decoder_layers {
        let p = format!("decoder.{d}");
        norm(&mut out, format!("{p}.self_norm"));
        for w in ["v", "o"] {
            out.push((format!("{p}.self.{w}"), vec![c, c]));
        }
        norm(&mut out, format!("{p}.cross_norm"));
        for w in ["q", "k", "v", "o"] {
            out.push((format!("{p}.cross.{w}"), vec![c, c]));
        }
        norm(&mut out, format!("{p}.ffn_norm"));
        out.push((format!("{p}.ffn.in"), vec![c, f]));
        out.push((format!("{p}.ffn.out"), vec![f, c]));
    }
    norm(&mut out, "decoder.final_norm".into());
    out
}

impl<T: Scalar> ParamStore<T> {
    /// Normal(0, init_std) weights, unit norm gains, zero norm biases.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let tensors = param_layout(config)
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".gain") {
                    Tensor::full(&shape, T::one())
                } else if name.ends_with(".bias") {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::randn(&shape, config.init_std, rng)
                };
                (name, t)
            })
            .collect();
        Self { tensors }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        Self { tensors }
    }

    /// Checks that every path of `config` is present with the right shape.
    pub fn check_layout(&self, config: &ModelConfig) -> Result<()> {
        let layout = param_layout(config);
        if layout.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in layout {
            match self.tensors.get(&name) {
                None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => return Err(Error::shape("checkpoint", &shape, t.shape())),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Zeroes the output projection of every global-attention layer, which
    /// switches the cross-candidate path off without changing the architecture.
    pub fn zero_global_output(&mut self) {
        for (name, t) in self.tensors.iter_mut() {
            if name.starts_with("encoder.") && name.ends_with(".global.o") {
                t.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        write_checkpoint(&self.tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self { tensors: read_checkpoint(bytes)? })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
