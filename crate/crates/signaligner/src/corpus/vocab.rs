//! Gloss-token vocabulary with fixed reserved ids and first-seen ordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
const RESERVED: [&str; 3] = ["<pad>", "<bos>", "<eos>"];

/// Token table: ids 0..3 are PAD/BOS/EOS, corpus tokens follow in first-seen
/// order, ids contiguous.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn from_corpus_tokens(tokens: Vec<String>) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        Vocabulary { tokens: all }
    }

    /// All tokens including reserved, in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    /// Tokenize whitespace-separated gloss text; unknown tokens are an error
    /// that lists the known vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::new();
        for token in text.split_whitespace() {
            let id = self.id(token).ok_or_else(|| Error::UnknownToken {
                token: token.to_string(),
                vocabulary: self.corpus_tokens().join(" "),
            })?;
            ids.push(id);
        }
        if ids.is_empty() {
            return Err(Error::UnknownToken {
                token: String::new(),
                vocabulary: self.corpus_tokens().join(" "),
            });
        }
        Ok(ids)
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter_map(|&id| self.token(id).map(|t| t.to_string()))
            .collect()
    }

    /// Non-reserved tokens in id order.
    pub fn corpus_tokens(&self) -> Vec<String> {
        self.tokens[RESERVED.len()..].to_vec()
    }
}

/// Build a vocabulary from gloss texts: reserved ids first, then corpus tokens
/// in order of first appearance.
pub fn build_vocabulary<S: AsRef<str>>(texts: &[S]) -> Result<Vocabulary> {
    let mut seen = Vec::new();
    for text in texts {
        for token in text.as_ref().split_whitespace() {
            if !seen.iter().any(|t: &String| t == token) {
                seen.push(token.to_string());
            }
        }
    }
    if seen.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(Vocabulary::from_corpus_tokens(seen))
}
