//! Greedy longest-match-first subword tokenizer for the transformer encoder.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text_prep::{tokenize, PAD_TOKEN, UNK_TOKEN};

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
const CONTINUATION: &str = "##";
const SPECIALS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordTokenizer {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
}

impl SubwordTokenizer {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const BOS: usize = 2;
    pub const EOS: usize = 3;

    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        if pieces.len() < SPECIALS.len() || pieces[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Validation(format!(
                "subword vocabulary must start with {SPECIALS:?}"
            )));
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if index.insert(p.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate subword piece {p:?}")));
            }
        }
        Ok(Self { pieces, index })
    }

    /// Builds a vocabulary of every observed character (word-initial and
    /// `##` continuation forms) plus the most frequent whole words, up to
    /// `max_size` pieces.
    pub fn train<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut words: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in tokenize(text) {
                *words.entry(w).or_default() += 1;
            }
        }
        let mut chars: Vec<String> = Vec::new();
        for w in words.keys() {
            for (i, ch) in w.chars().enumerate() {
                chars.push(if i == 0 {
                    ch.to_string()
                } else {
                    format!("{CONTINUATION}{ch}")
                });
            }
        }
        chars.sort();
        chars.dedup();
        let mut ranked: Vec<(&String, &usize)> = words.iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));

        let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        pieces.extend(chars);
        let mut seen: std::collections::HashSet<String> = pieces.iter().cloned().collect();
        for (w, _) in ranked {
            if pieces.len() >= max_size {
                break;
            }
            if seen.insert(w.clone()) {
                pieces.push(w.clone());
            }
        }
        Self::from_pieces(pieces).expect("specials lead and pieces are unique")
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<usize>) {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut ids = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let from = chars[start].0;
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                let to = chars.get(end).map_or(word.len(), |c| c.0);
                let piece = &word[from..to];
                let key = if start == 0 {
                    piece.to_string()
                } else {
                    format!("{CONTINUATION}{piece}")
                };
                if let Some(&id) = self.index.get(&key) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    ids.push(id);
                    start = end;
                }
                None => {
                    out.push(Self::UNK);
                    return;
                }
            }
        }
        out.extend(ids);
    }

    /// `<s> pieces.. </s>`, truncated so the whole sequence fits in `max_tokens`.
    pub fn encode(&self, text: &str, max_tokens: usize) -> Vec<usize> {
        let mut ids = vec![Self::BOS];
        for w in tokenize(text) {
            self.word_pieces(&w, &mut ids);
        }
        let budget = max_tokens.max(2) - 1;
        if ids.len() > budget {
            log::debug!(
                "truncating {} subword tokens to {max_tokens}",
                ids.len() + 1
            );
            ids.truncate(budget);
        }
        ids.push(Self::EOS);
        ids
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = self.pieces.join("\n");
        out.push('\n');
        crate::corpus::write_bytes(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_pieces(content.lines().map(str::to_string).collect())
    }
}
