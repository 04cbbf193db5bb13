use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const UNK: &str = "[UNK]";
pub const TRUE: &str = "true";
pub const FALSE: &str = "false";
pub const QUERY: &str = "Query:";
pub const TITLE: &str = "Title:";
pub const FEATURE: &str = "Feature:";
pub const PASSAGE: &str = "Passage:";
pub const RELEVANT: &str = "Relevant:";
/// Placeholder for an empty title slot.
pub const NONE: &str = "[none]";

/// Prompt keywords that the tokenizer keeps verbatim as single tokens.
pub const PROMPT_TOKENS: [&str; 6] = [QUERY, TITLE, FEATURE, PASSAGE, RELEVANT, NONE];

/// Largest feature bucket that has its own token.
pub const MAX_DIGIT_TOKEN: u32 = 100;

pub const DEFAULT_VOCAB_SIZE: usize = 8192;

fn reserved_tokens() -> Vec<String> {
    let mut tokens: Vec<String> = [PAD, CLS, UNK, TRUE, FALSE].iter().map(|s| s.to_string()).collect();
    tokens.extend(PROMPT_TOKENS.iter().map(|s| s.to_string()));
    tokens.extend((0..=MAX_DIGIT_TOKEN).map(|d| d.to_string()));
    tokens
}

/// Word-level vocabulary with a fixed block of reserved ids at the front.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    to_id: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Reserved tokens only.
    pub fn reserved_only() -> Self {
        Self::from_tokens(reserved_tokens()).expect("reserved tokens are unique")
    }

    /// Reserved tokens followed by the `max_size - reserved` most frequent
    /// words of `texts` (ties broken alphabetically).
    pub fn build<'a, I>(texts: I, max_size: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut vocab = Self::reserved_only();
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for word in super::split_words(text) {
                if let super::Piece::Word(w) = word {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(w, _)| !vocab.to_id.contains_key(w)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = max_size.saturating_sub(vocab.len());
        for (word, _) in ranked.into_iter().take(room) {
            vocab.push(word);
        }
        vocab
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if to_id.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { to_id, tokens })
    }

    fn push(&mut self, token: String) {
        self.to_id.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.to_id.get(token).copied()
    }

    /// Id of a reserved token; panics on anything else.
    pub fn reserved(&self, token: &str) -> usize {
        self.to_id[token]
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn pad(&self) -> usize {
        self.reserved(PAD)
    }

    pub fn cls(&self) -> usize {
        self.reserved(CLS)
    }

    pub fn unk(&self) -> usize {
        self.reserved(UNK)
    }

    pub fn true_id(&self) -> usize {
        self.reserved(TRUE)
    }

    pub fn false_id(&self) -> usize {
        self.reserved(FALSE)
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let reserved = reserved_tokens();
        if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved[..] {
            return Err(Error::parse("vocab", 1, "reserved token block missing or reordered"));
        }
        if let Some(line) = tokens.iter().position(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return Err(Error::parse("vocab", line + 1, "token is empty or contains whitespace"));
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
