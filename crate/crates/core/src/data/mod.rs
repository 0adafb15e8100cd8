//! Corpora, vocabularies, word vectors and batching.

mod batch;
mod corpus;
mod embeddings;
mod synth;
mod vocab;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub use batch::{make_batches, Batch};
pub use corpus::{binarize, load_annotations, load_reviews, Domain};
pub use embeddings::{load_embeddings, EmbeddingTable, OOV_INIT_RANGE};
pub use synth::{synth_generate, SynthConfig, SynthCorpus, SynthPartition};
pub use vocab::{build_vocab, Vocabulary, MASK_ID, MASK_TOKEN, PAD_ID, PAD_TOKEN};

/// One labelled document, optionally with a token-level gold rationale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: u8,
    pub gold_mask: Option<Vec<u8>>,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        label: u8,
        gold_mask: Option<Vec<u8>>,
    ) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(Error::Config(format!("example {id} has no tokens")));
        }
        if label > 1 {
            return Err(Error::Config(format!("example {id} has label {label}, expected 0 or 1")));
        }
        if let Some(mask) = &gold_mask {
            if mask.len() != tokens.len() {
                return Err(Error::LengthMismatch {
                    what: "gold mask",
                    expected: tokens.len(),
                    found: mask.len(),
                });
            }
        }
        Ok(Self { id, tokens, label, gold_mask })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold rationale as half-open `[start, end)` runs of selected tokens.
    pub fn gold_spans(&self) -> Vec<[usize; 2]> {
        self.gold_mask.as_deref().map(mask_to_spans).unwrap_or_default()
    }
}

/// Half-open runs of ones in a binary mask.
pub fn mask_to_spans(mask: &[u8]) -> Vec<[usize; 2]> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m != 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push([s, i]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push([s, mask.len()]);
    }
    spans
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Annotation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Annotation => "annotation",
        })
    }
}

/// Coarse token categories used by degeneration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenClass {
    Informative,
    Filler,
    Marker,
    Punctuation,
}

impl TokenClass {
    pub const ALL: [TokenClass; 4] = [
        TokenClass::Informative,
        TokenClass::Filler,
        TokenClass::Marker,
        TokenClass::Punctuation,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub split: Split,
    pub aspect: String,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(split: Split, aspect: impl Into<String>, examples: Vec<Example>) -> Self {
        Self { split, aspect: aspect.into(), examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// `(negatives, positives)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.examples.iter().filter(|e| e.label == 1).count();
        (self.examples.len() - pos, pos)
    }

    pub fn has_gold(&self) -> bool {
        !self.examples.is_empty() && self.examples.iter().all(|e| e.gold_mask.is_some())
    }

    /// Mean fraction of gold-selected tokens, over examples that carry a mask.
    pub fn mean_gold_sparsity(&self) -> Option<f64> {
        let ratios: Vec<f64> = self
            .examples
            .iter()
            .filter_map(|e| {
                e.gold_mask
                    .as_ref()
                    .map(|m| m.iter().map(|&v| v as f64).sum::<f64>() / m.len() as f64)
            })
            .collect();
        if ratios.is_empty() {
            None
        } else {
            Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
        }
    }

    /// Writes the canonical JSON-lines corpus format.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        for ex in &self.examples {
            let mut record = serde_json::json!({
                "id": ex.id,
                "label": ex.label,
                "text": ex.tokens.join(" "),
            });
            if ex.gold_mask.is_some() {
                record["rationale_spans"] = serde_json::json!(ex.gold_spans());
            }
            writeln!(out, "{record}").map_err(io_err(path))?;
        }
        out.flush().map_err(io_err(path))
    }
}
