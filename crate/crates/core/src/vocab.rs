use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub type TokenId = usize;

pub const EOS: &str = "<eos>";

/// Ordered token list. Tokens may contain spaces ("Calot Triangle
/// Dissection" is one token); text is produced by joining tokens with a
/// single space and read back by longest-match over whitespace words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    lookup: HashMap<String, TokenId>,
    max_words: usize,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(tokens.len());
        let mut max_words = 1;
        for (i, t) in tokens.iter().enumerate() {
            let words: Vec<&str> = t.split_whitespace().collect();
            if words.is_empty() || words.join(" ") != *t {
                return Err(LabError::Config(format!("token {i} `{t}` is not whitespace-normalized")));
            }
            max_words = max_words.max(words.len());
            if lookup.insert(t.clone(), i).is_some() {
                return Err(LabError::Config(format!("duplicate token `{t}`")));
            }
        }
        if !lookup.contains_key(EOS) {
            return Err(LabError::Config(format!("vocabulary lacks `{EOS}`")));
        }
        Ok(Self {
            tokens,
            lookup,
            max_words,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.lookup.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn eos(&self) -> TokenId {
        self.lookup[EOS]
    }

    /// Joins tokens with single spaces, stopping at the first `<eos>`.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let eos = self.eos();
        ids.iter()
            .take_while(|&&t| t != eos)
            .map(|&t| self.tokens[t].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Greedy longest-match tokenization; `None` if some word cannot be
    /// covered by the vocabulary.
    pub fn tokenize(&self, text: &str) -> Option<Vec<TokenId>> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let longest = self.max_words.min(words.len() - i);
            let (id, n) = (1..=longest)
                .rev()
                .find_map(|n| self.id(&words[i..i + n].join(" ")).map(|id| (id, n)))?;
            out.push(id);
            i += n;
        }
        Some(out)
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = LabError;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::new(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}
