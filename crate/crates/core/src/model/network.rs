//! Forward graph of the re-ranker: per-candidate encoder stacks, set-level
//! global attention over the `[CLS]` states, and a one-step decoder.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::textproc::TokenizedInput;

use super::{ModelConfig, ParamStore};

/// Additive mask value for padded keys; `exp` of it underflows to exactly 0.
const MASKED: f64 = -1e9;

/// Parameters bound to a tape.
pub struct Network<'c> {
    config: &'c ModelConfig,
    vars: HashMap<String, Var>,
}

/// Values recorded at one global-attention layer.
#[derive(Clone, Debug)]
pub struct GlobalTrace<T> {
    /// 1-based encoder layer index.
    pub layer: usize,
    /// Globally-attended `[CLS]` outputs, `[n, hidden]`, in input order.
    pub attended: Tensor<T>,
    /// Attention weights `[heads, n, n]`, rows and columns in input order.
    pub weights: Tensor<T>,
}

/// Graph handles produced by [`Network::forward`].
pub struct Forward {
    /// `[n, 2]` logits for the tokens ("true", "false").
    pub logits: Var,
    pub global: Vec<(usize, GlobalVars)>,
}

pub struct GlobalVars {
    pub attended: Var,
    pub weights: Var,
    order: Vec<usize>,
}

/// Lexicographic order of the rows of `[n, c]` values under the IEEE total
/// order; identical rows are interchangeable, so the sorted matrix is a
/// function of the row multiset alone.
fn canonical_order<T: Scalar>(rows: &Tensor<T>) -> Vec<usize> {
    let n = rows.shape()[0];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        rows.row(a)
            .iter()
            .zip(rows.row(b))
            .map(|(x, y)| x.total_order(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    order
}

impl<'c> Network<'c> {
    /// Registers every parameter as a leaf; `trainable` controls gradients.
    pub fn bind<T: Scalar>(tape: &mut Tape<T>, params: &ParamStore<T>, config: &'c ModelConfig, trainable: bool) -> Self {
        let vars = params.iter().map(|(name, t)| (name.clone(), tape.leaf(t.clone(), trainable))).collect();
        Self { config, vars }
    }

    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    /// Points `name` at another variable, e.g. one created by a caller.
    pub fn rebind(&mut self, name: &str, var: Var) {
        self.vars.insert(name.to_string(), var);
    }

    pub fn vars(&self) -> &HashMap<String, Var> {
        &self.vars
    }

    fn try_var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    fn norm<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, prefix: &str) -> Result<Var> {
        let g = self.try_var(&format!("{prefix}.gain"))?;
        let b = self.try_var(&format!("{prefix}.bias"))?;
        tape.layer_norm(x, g, b, self.config.layer_norm_eps)
    }

    /// `[.., s, c] → [.., heads, s, c/heads]`, where the leading part is `[n]`.
    fn split_heads<T: Scalar>(tape: &mut Tape<T>, x: Var, heads: usize) -> Result<Var> {
        let sh = tape.shape(x).to_vec();
        let (n, s, c) = (sh[0], sh[1], sh[2]);
        let r = tape.reshape(x, &[n, s, heads, c / heads])?;
        tape.permute(r, &[0, 2, 1, 3])
    }

    fn merge_heads<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let sh = tape.shape(x).to_vec();
        let (n, h, s, d) = (sh[0], sh[1], sh[2], sh[3]);
        let p = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(p, &[n, s, h * d])
    }

    /// Scaled dot-product attention of `q: [n, sq, c]` over `kv: [n, sk, c]`.
    #[allow(clippy::too_many_arguments)]
    fn attention<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        q_in: Var,
        kv_in: Var,
        prefix: &str,
        heads: usize,
        mask: Option<Var>,
    ) -> Result<(Var, Var)> {
        let c = self.config.hidden;
        let q = tape.matmul(q_in, self.try_var(&format!("{prefix}.q"))?)?;
        let k = tape.matmul(kv_in, self.try_var(&format!("{prefix}.k"))?)?;
        let v = tape.matmul(kv_in, self.try_var(&format!("{prefix}.v"))?)?;
        let (q, k, v) = (
            Self::split_heads(tape, q, heads)?,
            Self::split_heads(tape, k, heads)?,
            Self::split_heads(tape, v, heads)?,
        );
        let scores = tape.matmul_nt(q, k)?;
        let mut scores = tape.scale(scores, T::of(((c / heads) as f64).powf(-0.5)));
        if let Some(m) = mask {
            scores = tape.add(scores, m)?;
        }
        let weights = tape.softmax(scores)?;
        let ctx = tape.matmul(weights, v)?;
        let ctx = Self::merge_heads(tape, ctx)?;
        let out = tape.matmul(ctx, self.try_var(&format!("{prefix}.o"))?)?;
        Ok((out, weights))
    }

    /// Additive key mask `[n, heads, queries, s]` from the padding masks.
    pub fn key_mask<T: Scalar>(tape: &mut Tape<T>, inputs: &[TokenizedInput], heads: usize, queries: usize) -> Result<Var> {
        let s = inputs[0].len();
        let mut data = Vec::with_capacity(inputs.len() * heads * queries * s);
        for inp in inputs {
            let row: Vec<T> =
                inp.attention_mask.iter().map(|&m| if m == 1 { T::zero() } else { T::of(MASKED) }).collect();
            for _ in 0..heads * queries {
                data.extend_from_slice(&row);
            }
        }
        Ok(tape.constant(Tensor::new(&[inputs.len(), heads, queries, s], data)?))
    }

    /// Token plus position embeddings, `[n, s, c]`.
    pub fn embed<T: Scalar>(&self, tape: &mut Tape<T>, inputs: &[TokenizedInput]) -> Result<Var> {
        let s = inputs[0].len();
        if s > self.config.max_seq_len || inputs.iter().any(|i| i.len() != s) {
            return Err(Error::InvalidArgument(format!(
                "inputs must share one length ≤ max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        let ids: Vec<usize> = inputs.iter().flat_map(|i| i.ids.iter().copied()).collect();
        let tok = tape.embedding(self.var("embed.token"), &ids)?;
        let tok = tape.reshape(tok, &[inputs.len(), s, self.config.hidden])?;
        let pos = tape.narrow(self.var("embed.position"), 0, 0, s)?;
        tape.add(tok, pos)
    }

    /// One pre-norm transformer layer applied to every candidate independently.
    pub fn encoder_layer<T: Scalar>(&self, tape: &mut Tape<T>, j: usize, x: Var, mask: Var) -> Result<Var> {
        let p = format!("encoder.{j}");
        let h = self.norm(tape, x, &format!("{p}.attn_norm"))?;
        let (attn, _) = self.attention(tape, h, h, &format!("{p}.attn"), self.config.heads_local, Some(mask))?;
        let x = tape.add(x, attn)?;
        let h = self.norm(tape, x, &format!("{p}.ffn_norm"))?;
        let f = tape.matmul(h, self.try_var(&format!("{p}.ffn.in"))?)?;
        let f = tape.relu(f);
        let f = tape.matmul(f, self.try_var(&format!("{p}.ffn.out"))?)?;
        tape.add(x, f)
    }

    /// Splits `[n, s, c]` into the `[CLS]` states `[n, c]` and the rest `[n, s-1, c]`.
    pub fn split_cls<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<(Var, Var)> {
        let sh = tape.shape(x).to_vec();
        let cls = tape.narrow(x, 1, 0, 1)?;
        let cls = tape.reshape(cls, &[sh[0], sh[2]])?;
        let rest = tape.narrow(x, 1, 1, sh[1] - 1)?;
        Ok((cls, rest))
    }

    /// `[h + ĥ ; Ĥ]`: adds the attended state at the `[CLS]` slot only.
    pub fn fuse<T: Scalar>(tape: &mut Tape<T>, cls: Var, attended: Var, rest: Var) -> Result<Var> {
        let sh = tape.shape(cls).to_vec();
        let sum = tape.add(cls, attended)?;
        let sum = tape.reshape(sum, &[sh[0], 1, sh[1]])?;
        tape.concat(&[sum, rest], 1)
    }

    /// Multi-head attention across the `n` `[CLS]` states of one candidate set.
    ///
    /// No positional signal enters, and all reductions over candidates run in
    /// a canonical order derived from the values, so permuting the inputs
    /// permutes the outputs bit-for-bit.
    pub fn global_attention<T: Scalar>(&self, tape: &mut Tape<T>, j: usize, cls: Var) -> Result<GlobalVars> {
        let p = format!("encoder.{j}.global");
        let n = tape.shape(cls)[0];
        let c = self.config.hidden;
        let heads = self.config.heads_global;
        let order = canonical_order(tape.value(cls));
        let mut inverse = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            inverse[i] = pos;
        }
        let sorted = tape.gather(cls, &order)?;
        let h = self.norm(tape, sorted, &format!("{p}.norm"))?;
        // treat the set as one sequence of length n
        let h = tape.reshape(h, &[1, n, c])?;
        let (out, weights) = self.attention(tape, h, h, &p, heads, None)?;
        let out = tape.reshape(out, &[n, c])?;
        let attended = tape.gather(out, &inverse)?;
        Ok(GlobalVars { attended, weights, order })
    }

    /// Full forward pass over one candidate set.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        inputs: &[TokenizedInput],
        true_false: [usize; 2],
        use_global: bool,
    ) -> Result<Forward> {
        if inputs.is_empty() {
            return Err(Error::EmptyCandidateSet(String::new()));
        }
        let cfg = self.config;
        let n = inputs.len();
        let mut x = self.embed(tape, inputs)?;
        let enc_mask = Self::key_mask(tape, inputs, cfg.heads_local, inputs[0].len())?;
        let mut global = Vec::new();
        for j in 1..=cfg.layers {
            x = self.encoder_layer(tape, j, x, enc_mask)?;
            if use_global && cfg.has_global(j) {
                let (cls, rest) = Self::split_cls(tape, x)?;
                let g = self.global_attention(tape, j, cls)?;
                x = Self::fuse(tape, cls, g.attended, rest)?;
                global.push((j, g));
            }
        }
        let enc = self.norm(tape, x, "encoder.final_norm")?;

        let start = tape.gather(self.var("decoder.start"), &vec![0; n])?;
        let mut d = tape.reshape(start, &[n, 1, cfg.hidden])?;
        let cross_mask = Self::key_mask(tape, inputs, cfg.heads_local, 1)?;
        for l in 1..=cfg.decoder_layers {
            let p = format!("decoder.{l}");
            // a single decoding position attends only to itself: softmax weight 1
            let h = self.norm(tape, d, &format!("{p}.self_norm"))?;
            let v = tape.matmul(h, self.try_var(&format!("{p}.self.v"))?)?;
            let s = tape.matmul(v, self.try_var(&format!("{p}.self.o"))?)?;
            d = tape.add(d, s)?;
            let h = self.norm(tape, d, &format!("{p}.cross_norm"))?;
            let (ctx, _) = self.attention(tape, h, enc, &format!("{p}.cross"), cfg.heads_local, Some(cross_mask))?;
            d = tape.add(d, ctx)?;
            let h = self.norm(tape, d, &format!("{p}.ffn_norm"))?;
            let f = tape.matmul(h, self.try_var(&format!("{p}.ffn.in"))?)?;
            let f = tape.relu(f);
            let f = tape.matmul(f, self.try_var(&format!("{p}.ffn.out"))?)?;
            d = tape.add(d, f)?;
        }
        let d = self.norm(tape, d, "decoder.final_norm")?;
        let d = tape.reshape(d, &[n, cfg.hidden])?;
        let out_rows = tape.embedding(self.var("embed.token"), &true_false)?;
        let logits = tape.matmul_nt(d, out_rows)?;
        let logits = tape.scale(logits, T::of((cfg.hidden as f64).powf(-0.5)));
        Ok(Forward { logits, global })
    }
}

impl GlobalVars {
    /// Copies the recorded values off the tape, restoring input order.
    pub fn trace<T: Scalar>(&self, tape: &Tape<T>, layer: usize) -> GlobalTrace<T> {
        let w = tape.value(self.weights);
        let sh = w.shape();
        let (heads, n) = (sh[0] * sh[1], sh[2]);
        let mut pos = vec![0; n];
        for (p, &i) in self.order.iter().enumerate() {
            pos[i] = p;
        }
        let mut data = Vec::with_capacity(heads * n * n);
        for h in 0..heads {
            for i in 0..n {
                for k in 0..n {
                    data.push(w.data()[h * n * n + pos[i] * n + pos[k]]);
                }
            }
        }
        GlobalTrace {
            layer,
            attended: tape.value(self.attended).clone(),
            weights: Tensor::new(&[heads, n, n], data).expect("consistent shape"),
        }
    }
}
