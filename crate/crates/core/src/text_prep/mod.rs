//! Tokenization, vocabulary and pretrained word vectors for the CNN and BiLSTM models.

mod embeddings;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

pub use embeddings::{
    load_pretrained, read_pretrained, EmbeddingFormat, EmbeddingTable, PretrainedRows,
    OOV_INIT_RANGE,
};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_LEN: usize = 256;

/// Lowercased Unicode word-boundary segmentation; whitespace is dropped and
/// punctuation marks come out as their own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_word_bounds()
        .filter(|seg| !seg.chars().all(char::is_whitespace))
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from training texts. Tokens are indexed by
    /// descending frequency, ties broken lexicographically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
            .into_iter()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens).expect("reserved tokens cannot collide with segmented tokens")
    }

    /// Restores a vocabulary from its index-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::Validation(format!(
                "vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        crate::corpus::write_bytes(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(content.lines().map(str::to_string).collect())
    }
}

/// Maps tokens to a fixed-length index sequence: truncated to the first
/// `max_len` tokens, right-padded with PAD, unknown tokens mapped to UNK.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.get(t.as_ref()).unwrap_or(UNK))
        .collect();
    ids.resize(max_len, PAD);
    ids
}

/// Number of leading non-PAD positions in an encoded sequence.
pub fn encoded_len(ids: &[usize]) -> usize {
    ids.iter().position(|&i| i == PAD).unwrap_or(ids.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Save a life!"), vec!["save", "a", "life", "!"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A  B"), vec!["a", "b"]);
        assert_eq!(tokenize("kid , his dog."), vec!["kid", ",", "his", "dog", "."]);
    }

    #[test]
    fn vocab_orders_by_frequency() {
        let v = Vocabulary::build(["a a b"], 1);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.get("a"), Some(2));

        let v = Vocabulary::build(["a a b"], 2);
        assert_eq!(encode(&["b"], &v, 1), vec![UNK]);

        let v = Vocabulary::build(std::iter::empty(), 1);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn vocab_ties_break_lexicographically() {
        let v = Vocabulary::build(["c b a", "b c"], 1);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "b", "c", "a"]);
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::from_tokens(
            ["<pad>", "<unk>", "a", "b"].map(String::from).to_vec(),
        )
        .unwrap();
        assert_eq!(encode(&["a", "b"], &v, 4), vec![2, 3, 0, 0]);
        assert_eq!(encode(&["a", "zzz"], &v, 2), vec![2, 1]);
        assert_eq!(encode(&["a", "b", "a"], &v, 2), vec![2, 3]);
        assert_eq!(encoded_len(&[2, 3, 0, 0]), 2);
    }

    #[test]
    fn from_tokens_rejects_bad_layout() {
        assert!(Vocabulary::from_tokens(vec!["a".into(), "b".into()]).is_err());
        assert!(Vocabulary::from_tokens(
            ["<pad>", "<unk>", "a", "a"].map(String::from).to_vec()
        )
        .is_err());
    }
}
