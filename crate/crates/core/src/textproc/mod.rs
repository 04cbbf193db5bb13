//! Tokenization, the re-ranking input template, and retrieval-score discretization.

mod feature;
mod vocab;

pub use feature::{discretize_feature, FeatureScaling, FeatureSpec};
pub use vocab::*;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Piece {
    Prompt(&'static str),
    Word(String),
}

/// Whitespace split; prompt keywords survive verbatim, everything else is
/// lowercased and split further at every non-alphanumeric character (which
/// becomes a token of its own).
pub(crate) fn split_words(text: &str) -> Vec<Piece> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if let Some(p) = PROMPT_TOKENS.iter().find(|p| **p == chunk) {
            out.push(Piece::Prompt(p));
            continue;
        }
        let mut word = String::new();
        for ch in chunk.chars().flat_map(char::to_lowercase) {
            if ch.is_alphanumeric() {
                word.push(ch);
            } else {
                if !word.is_empty() {
                    out.push(Piece::Word(std::mem::take(&mut word)));
                }
                out.push(Piece::Word(ch.to_string()));
            }
        }
        if !word.is_empty() {
            out.push(Piece::Word(word));
        }
    }
    out
}

/// Token strings of `text` as seen by the model tokenizer, before vocabulary lookup.
pub fn terms(text: &str) -> Vec<String> {
    split_words(text)
        .into_iter()
        .map(|p| match p {
            Piece::Prompt(p) => p.to_string(),
            Piece::Word(w) => w,
        })
        .collect()
}

/// Deterministic word-level tokenization; out-of-vocabulary words map to `[UNK]`.
pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<usize> {
    split_words(text)
        .into_iter()
        .map(|p| match p {
            Piece::Prompt(p) => vocab.reserved(p),
            Piece::Word(w) => vocab.id(&w).unwrap_or_else(|| vocab.unk()),
        })
        .collect()
}

fn prefix_segments<'a>(query: &'a str, title: &'a str, feature: Option<&'a str>) -> Vec<&'a str> {
    let mut parts = vec![QUERY, query, TITLE, if title.trim().is_empty() { NONE } else { title }];
    if let Some(f) = feature {
        parts.push(FEATURE);
        parts.push(f);
    }
    parts.push(PASSAGE);
    parts
}

fn join(parts: &[&str]) -> String {
    parts.iter().filter(|p| !p.is_empty()).copied().collect::<Vec<_>>().join(" ")
}

/// `Query: [q] Title: [t] Feature: [f] Passage: [d] Relevant:`.
///
/// A `None` feature drops the `Feature: [f]` segment (the warm-up layout).
/// Empty titles are written as `[none]`.
pub fn render_template(query: &str, title: &str, feature: Option<u32>, passage: &str) -> String {
    let f = feature.map(|f| f.to_string());
    let mut parts = prefix_segments(query, title, f.as_deref());
    parts.push(passage);
    parts.push(RELEVANT);
    join(&parts)
}

/// Model input for one candidate, padded to `max_seq_len`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenizedInput {
    /// Starts with `[CLS]`.
    pub ids: Vec<usize>,
    /// 1 on real tokens, 0 on padding.
    pub attention_mask: Vec<u8>,
}

impl TokenizedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-padding tokens.
    pub fn true_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// `[CLS]` + tokens of the rendered template, fitted to `max_seq_len`.
///
/// Only the passage is truncated, so the query, title, feature and the closing
/// `Relevant:` prompt always survive.
pub fn build_input(
    query: &str,
    title: &str,
    feature: Option<u32>,
    passage: &str,
    vocab: &Vocab,
    max_seq_len: usize,
) -> Result<TokenizedInput> {
    let f = feature.map(|f| f.to_string());
    let mut ids = vec![vocab.cls()];
    ids.extend(tokenize(&join(&prefix_segments(query, title, f.as_deref())), vocab));
    let needed = ids.len() + 1;
    if needed > max_seq_len {
        return Err(Error::InputTooLong { needed, max: max_seq_len });
    }
    let room = max_seq_len - needed;
    ids.extend(tokenize(passage, vocab).into_iter().take(room));
    ids.push(vocab.reserved(RELEVANT));
    let real = ids.len();
    ids.resize(max_seq_len, vocab.pad());
    let mut attention_mask = vec![1u8; real];
    attention_mask.resize(max_seq_len, 0);
    Ok(TokenizedInput { ids, attention_mask })
}
