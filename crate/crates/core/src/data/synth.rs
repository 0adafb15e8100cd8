//! Planted-rationale corpora.
//!
//! Every document is filler with one contiguous span drawn from the label's
//! informative token set; that span is the gold rationale and the only
//! label-bearing content, unless a class-revealing marker token is inserted
//! outside it (with probability `marker_correlation`). Markers give a
//! predictor an alternative shortcut that no annotator would call a rationale.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Example, Split, TokenClass, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub doc_length: usize,
    pub span_length: usize,
    pub marker_correlation: f64,
    pub informative_per_class: usize,
    pub markers_per_class: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_annotation: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 100,
            doc_length: 20,
            span_length: 3,
            marker_correlation: 0.0,
            informative_per_class: 10,
            markers_per_class: 1,
            n_train: 2000,
            n_dev: 500,
            n_annotation: 500,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn filler_count(&self) -> Option<usize> {
        self.vocab_size
            .checked_sub(2 * self.informative_per_class + 2 * self.markers_per_class)
            .filter(|&n| n > 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.span_length == 0 || self.span_length >= self.doc_length {
            return Err(Error::Config(format!(
                "span_length {} must be in [1, doc_length = {})",
                self.span_length, self.doc_length
            )));
        }
        if !(0.0..=1.0).contains(&self.marker_correlation) {
            return Err(Error::Config("marker_correlation must lie in [0, 1]".into()));
        }
        if self.informative_per_class == 0 || self.filler_count().is_none() {
            return Err(Error::Config(format!(
                "inconsistent partition sizes: vocab {} cannot hold 2x{} informative, 2x{} marker and at least one filler token",
                self.vocab_size, self.informative_per_class, self.markers_per_class
            )));
        }
        if self.marker_correlation > 0.0 && self.markers_per_class == 0 {
            return Err(Error::Config("marker_correlation > 0 needs markers_per_class >= 1".into()));
        }
        Ok(())
    }
}

/// Disjoint token sets of a synthetic vocabulary, indexed by label where relevant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPartition {
    pub informative: [Vec<String>; 2],
    pub markers: [Vec<String>; 2],
    pub filler: Vec<String>,
}

impl SynthPartition {
    fn new(cfg: &SynthConfig) -> Self {
        let names = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>();
        Self {
            informative: [names("neg", cfg.informative_per_class), names("pos", cfg.informative_per_class)],
            markers: [names("mkneg", cfg.markers_per_class), names("mkpos", cfg.markers_per_class)],
            filler: names("f", cfg.filler_count().unwrap_or(0)),
        }
    }

    pub fn class_of(&self, token: &str) -> Option<TokenClass> {
        if self.informative.iter().any(|s| s.iter().any(|t| t == token)) {
            Some(TokenClass::Informative)
        } else if self.markers.iter().any(|s| s.iter().any(|t| t == token)) {
            Some(TokenClass::Marker)
        } else if self.filler.iter().any(|t| t == token) {
            Some(TokenClass::Filler)
        } else {
            None
        }
    }

    /// Label revealed by an informative or marker token.
    pub fn label_of(&self, token: &str) -> Option<u8> {
        (0..2u8).find(|&l| {
            self.informative[l as usize].iter().any(|t| t == token)
                || self.markers[l as usize].iter().any(|t| t == token)
        })
    }

    /// Class per vocabulary id; reserved and unknown ids count as filler.
    pub fn id_classes(&self, vocab: &Vocabulary) -> Vec<TokenClass> {
        vocab
            .tokens()
            .iter()
            .map(|t| self.class_of(t).unwrap_or(TokenClass::Filler))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Dataset,
    pub dev: Dataset,
    pub annotation: Dataset,
    pub partition: SynthPartition,
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let partition = SynthPartition::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen = HashSet::new();
    let mut split = |split: Split, n: usize| -> Dataset {
        let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i >= n / 2)).collect();
        labels.shuffle(&mut rng);
        let examples = labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| loop {
                let (tokens, gold) = document(cfg, &partition, label, &mut rng);
                if seen.insert(tokens.clone()) {
                    break Example { id: format!("{split}-{i}"), tokens, label, gold_mask: Some(gold) };
                }
            })
            .collect();
        Dataset::new(split, "synthetic", examples)
    };
    let train = split(Split::Train, cfg.n_train);
    let dev = split(Split::Dev, cfg.n_dev);
    let annotation = split(Split::Annotation, cfg.n_annotation);
    Ok(SynthCorpus { train, dev, annotation, partition })
}

fn document(cfg: &SynthConfig, part: &SynthPartition, label: u8, rng: &mut impl Rng) -> (Vec<String>, Vec<u8>) {
    let len = cfg.doc_length;
    let span = cfg.span_length;
    let start = rng.gen_range(0..=len - span);
    let mut tokens = Vec::with_capacity(len + 1);
    let mut gold = Vec::with_capacity(len + 1);
    for i in 0..len {
        let inside = (start..start + span).contains(&i);
        let pool = if inside { &part.informative[label as usize] } else { &part.filler };
        tokens.push(pool.choose(rng).expect("non-empty pool").clone());
        gold.push(u8::from(inside));
    }
    if cfg.marker_correlation > 0.0 && rng.gen_bool(cfg.marker_correlation) {
        // Insertion points outside the span: before it (0..=start) or after it.
        let before = start + 1;
        let after = len - start - span + 1;
        let k = rng.gen_range(0..before + after);
        let at = if k < before { k } else { start + span + (k - before) };
        let marker = part.markers[label as usize].choose(rng).expect("markers").clone();
        tokens.insert(at, marker);
        gold.insert(at, 0);
    }
    (tokens, gold)
}
