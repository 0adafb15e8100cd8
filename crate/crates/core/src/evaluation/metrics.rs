use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Pool token counts over all examples.
    #[default]
    Micro,
    /// Average per-example scores.
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(hit: usize, pred: usize, gold: usize) -> Self {
        let precision = if pred == 0 { 0.0 } else { hit as f64 / pred as f64 };
        let recall = if gold == 0 { 0.0 } else { hit as f64 / gold as f64 };
        Self { precision, recall, f1: f1(precision, recall) }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Token-level precision, recall and F1 of predicted masks against gold masks.
pub fn token_prf(pred: &[Vec<u8>], gold: &[Vec<u8>], averaging: Averaging) -> Result<Prf> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch { what: "predicted vs gold mask count", expected: gold.len(), found: pred.len() });
    }
    let mut counts = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch { what: "predicted vs gold mask length", expected: g.len(), found: p.len() });
        }
        let hit = p.iter().zip(g).filter(|(&a, &b)| a == 1 && b == 1).count();
        let np = p.iter().filter(|&&a| a == 1).count();
        let ng = g.iter().filter(|&&b| b == 1).count();
        counts.push((hit, np, ng));
    }
    Ok(match averaging {
        Averaging::Micro => {
            let (h, p, g) = counts.iter().fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
            Prf::from_counts(h, p, g)
        }
        Averaging::Macro => {
            if counts.is_empty() {
                return Ok(Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
            }
            let n = counts.len() as f64;
            let per: Vec<Prf> = counts.iter().map(|&(h, p, g)| Prf::from_counts(h, p, g)).collect();
            Prf {
                precision: per.iter().map(|x| x.precision).sum::<f64>() / n,
                recall: per.iter().map(|x| x.recall).sum::<f64>() / n,
                f1: per.iter().map(|x| x.f1).sum::<f64>() / n,
            }
        }
    })
}

/// Mean per-example fraction of selected tokens; each mask spans exactly the
/// example's real tokens.
pub fn sparsity(masks: &[Vec<u8>]) -> f64 {
    let rates: Vec<f64> = masks
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| m.iter().filter(|&&v| v == 1).count() as f64 / m.len() as f64)
        .collect();
    if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    }
}

/// Index of the largest entry, first on ties.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(&row.to_vec()) == y)
        .count();
    hits as f64 / labels.len() as f64
}
