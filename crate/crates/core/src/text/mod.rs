//! Text normalization, tokenization, n-grams and stemming.
//!
//! One tokenizer serves both retrieval indexing and every text metric, so a
//! score computed here never depends on which component produced the tokens.
//! No stopwords are removed anywhere.

mod porter;

use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub use porter::stem;

/// NFKC-normalizes, lowercases and collapses every whitespace run to a single
/// space, trimming both ends.
pub fn normalize(raw: &str) -> String {
    let folded: String = raw.nfkc().collect::<String>().to_lowercase();
    let mut out = String::with_capacity(folded.len());
    for word in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// An ordered list of non-empty tokens produced by [`tokenize`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<String> {
        self.0
    }

    /// Joins the tokens with single spaces.
    pub fn joined(&self) -> String {
        self.0.join(" ")
    }

    pub fn extend(&mut self, other: TokenSequence) {
        self.0.extend(other.0);
    }
}

impl<'a> IntoIterator for &'a TokenSequence {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Splits on whitespace, then breaks every non-alphanumeric character out as
/// its own token. Alphanumeric runs (including digit runs) stay contiguous.
///
/// The input is normalized first; normalizing twice is harmless.
pub fn tokenize(text: &str) -> TokenSequence {
    let normalized = normalize(text);
    let mut tokens = Vec::new();
    for chunk in normalized.split(' ') {
        let mut current = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                current.push(c);
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    TokenSequence(tokens)
}

/// A contiguous run of `n` tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NGram(Vec<String>);

impl NGram {
    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for NGram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.0.join(", "))
    }
}

/// All contiguous n-grams in order, duplicates preserved.
pub fn ngrams(tokens: &[String], n: usize) -> Result<Vec<NGram>> {
    if n == 0 {
        return Err(Error::InvalidParameter("n-gram order must be at least 1".into()));
    }
    Ok(tokens.windows(n).map(|w| NGram(w.to_vec())).collect())
}
