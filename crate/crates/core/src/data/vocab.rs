use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const MASK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const MASK_TOKEN: &str = "<mask>";

/// Token/id mapping with two reserved ids: `PAD_ID` and `MASK_ID`.
///
/// Both reserved rows of any embedding table built on this vocabulary are zero,
/// so a deselected token and the mask token are indistinguishable downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from non-reserved tokens, in the order given.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD_TOKEN.to_string(), MASK_TOKEN.to_string()];
        all.extend(tokens.into_iter().map(Into::into));
        Self::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps tokens to ids. Out-of-vocabulary tokens become `MASK_ID`, whose
    /// embedding is the zero vector.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(MASK_ID))
            .collect()
    }

    pub fn encode_strict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).ok_or_else(|| Error::UnknownToken(t.as_ref().to_string())))
            .collect()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Vocabulary over all tokens of `datasets` seen at least `min_freq` times,
/// sorted lexicographically after the reserved ids.
pub fn build_vocab(datasets: &[&Dataset], min_freq: usize) -> Result<Vocabulary> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for ds in datasets {
        for ex in &ds.examples {
            for t in &ex.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let kept = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_freq.max(1) && t != PAD_TOKEN && t != MASK_TOKEN)
        .map(|(t, _)| t.to_string());
    Ok(Vocabulary::from_tokens(kept))
}
