//! Loading the canonical JSON-lines review corpus.
//!
//! One object per line:
//! `{"id": str, "rating": float | "label": 0|1, "text": str, "rationale_spans": [[start, end], ...]}`.
//! A `"ratings"` object keyed by aspect is accepted in place of `"rating"` so
//! that multi-aspect dumps can be loaded without rewriting.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Example, Split};
use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Beer,
    Hotel,
}

impl Domain {
    pub fn aspects(self) -> &'static [&'static str] {
        match self {
            Domain::Beer => &["appearance", "aroma", "palate"],
            Domain::Hotel => &["location", "service", "cleanliness"],
        }
    }

    fn check_aspect(self, aspect: &str) -> Result<String> {
        let lower = aspect.to_ascii_lowercase();
        if self.aspects().contains(&lower.as_str()) {
            Ok(lower)
        } else {
            Err(Error::UnknownAspect { aspect: aspect.to_string(), domain: self.to_string() })
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Beer => "beer",
            Domain::Hotel => "hotel",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "beer" => Ok(Domain::Beer),
            "hotel" => Ok(Domain::Hotel),
            other => Err(Error::Config(format!("unknown domain {other:?}"))),
        }
    }
}

/// Maps a raw rating to a binary label; `None` means the review is dropped.
///
/// Beer ratings are normalized to `[0, 1]`: `<= 0.4` negative, `>= 0.6`
/// positive. Hotel ratings are stars: `< 3` negative, `> 3` positive.
pub fn binarize(domain: Domain, rating: f64) -> Option<u8> {
    match domain {
        Domain::Beer if rating <= 0.4 => Some(0),
        Domain::Beer if rating >= 0.6 => Some(1),
        Domain::Hotel if rating < 3.0 => Some(0),
        Domain::Hotel if rating > 3.0 => Some(1),
        _ => None,
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    rating: Option<f64>,
    ratings: Option<HashMap<String, f64>>,
    label: Option<u8>,
    text: String,
    rationale_spans: Option<Vec<[usize; 2]>>,
}

struct Parsed {
    example: Example,
    spans: Option<Vec<[usize; 2]>>,
}

fn read_records(path: &Path, aspect: &str, domain: Domain) -> Result<Vec<Parsed>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let label = match (raw.label, raw.ratings.as_ref().and_then(|r| r.get(aspect)), raw.rating) {
            (Some(l), _, _) if l <= 1 => Some(l),
            (Some(l), _, _) => return Err(malformed(format!("label {l} is not 0 or 1"))),
            (None, Some(&r), _) | (None, None, Some(r)) => binarize(domain, r),
            (None, None, None) => {
                return Err(malformed(format!("no label, rating, or {aspect:?} rating")))
            }
        };
        let Some(label) = label else { continue };
        let tokens: Vec<String> = raw.text.split_whitespace().map(String::from).collect();
        if tokens.is_empty() {
            return Err(malformed("empty text".into()));
        }
        let id = match raw.id {
            Some(serde_json::Value::String(s)) => s,
            Some(other) => other.to_string(),
            None => format!("line{line_no}"),
        };
        out.push(Parsed {
            example: Example { id, tokens, label, gold_mask: None },
            spans: raw.rationale_spans,
        });
    }
    Ok(out)
}

/// Loads one split of a review corpus, binarizing ratings. The train split is
/// subsampled (seeded) to exact class balance.
pub fn load_reviews(
    path: &Path,
    aspect: &str,
    domain: Domain,
    split: Split,
    seed: u64,
) -> Result<Dataset> {
    let aspect = domain.check_aspect(aspect)?;
    let mut examples: Vec<Example> = read_records(path, &aspect, domain)?
        .into_iter()
        .map(|p| p.example)
        .collect();
    if split == Split::Train {
        examples = balance(examples, seed);
    }
    if examples.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    Ok(Dataset::new(split, aspect, examples))
}

/// Keeps every example of the minority class and a seeded random subset of the
/// majority class of equal size, preserving file order.
fn balance(examples: Vec<Example>, seed: u64) -> Vec<Example> {
    let (pos, neg): (Vec<usize>, Vec<usize>) =
        (0..examples.len()).partition(|&i| examples[i].label == 1);
    let keep_n = pos.len().min(neg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; examples.len()];
    for mut group in [pos, neg] {
        group.shuffle(&mut rng);
        for &i in group.iter().take(keep_n) {
            keep[i] = true;
        }
    }
    examples
        .into_iter()
        .zip(keep)
        .filter_map(|(e, k)| k.then_some(e))
        .collect()
}

/// Loads the annotation split: every example gets a gold mask built from its
/// `rationale_spans` intervals.
pub fn load_annotations(path: &Path, aspect: &str, domain: Domain) -> Result<Dataset> {
    let aspect = domain.check_aspect(aspect)?;
    let mut examples = Vec::new();
    for parsed in read_records(path, &aspect, domain)? {
        let mut ex = parsed.example;
        let len = ex.tokens.len();
        let mut mask = vec![0u8; len];
        let spans = parsed.spans.unwrap_or_default();
        if spans.is_empty() {
            log::warn!("annotation example {} has no rationale spans", ex.id);
        }
        for [start, end] in spans {
            if start > end || end > len {
                return Err(Error::SpanOutOfBounds { id: ex.id, start, end, len });
            }
            mask[start..end].iter_mut().for_each(|m| *m = 1);
        }
        ex.gold_mask = Some(mask);
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(Error::EmptySplit(Split::Annotation.to_string()));
    }
    Ok(Dataset::new(Split::Annotation, aspect, examples))
}
