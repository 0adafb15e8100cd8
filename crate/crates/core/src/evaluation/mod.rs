//! Rationale metrics, degeneration diagnostics, rendering and probes.

mod degeneration;
mod metrics;
mod probes;
mod render;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

pub use degeneration::{
    base_rates, degeneration_report, selection_rates, text_token_classes, SelectionRates, PUNCTUATION,
};
pub use metrics::{accuracy, argmax, f1, sparsity, token_prf, Averaging, Prf};
pub use probes::{
    filler_rationale, insertion_probe, median_of, lemma3_probe, uninformative_rationale_probe, InsertionReport, Lemma3Report,
    Lemma3Sentence, Lemma3View, ProbeTokens, UninformativeReport,
};
pub use render::{render_probe_html, render_rationales, RenderFormat};

use crate::data::{make_batches, Dataset, Vocabulary};
use crate::error::{io_err, Result};
use crate::model::{Mode, Model};
use crate::objective::softmax;

fn six_places<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e6).round() / 1e6)
}

fn six_places_opt<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => six_places(v, s),
        None => s.serialize_none(),
    }
}

/// `{S, Acc, P, R, F1}` as fractions; P/R/F1 absent without gold rationales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RationaleMetrics {
    #[serde(rename = "S", serialize_with = "six_places")]
    pub sparsity: f64,
    #[serde(rename = "Acc", serialize_with = "six_places")]
    pub accuracy: f64,
    #[serde(rename = "P", serialize_with = "six_places_opt", skip_serializing_if = "Option::is_none", default)]
    pub precision: Option<f64>,
    #[serde(rename = "R", serialize_with = "six_places_opt", skip_serializing_if = "Option::is_none", default)]
    pub recall: Option<f64>,
    #[serde(rename = "F1", serialize_with = "six_places_opt", skip_serializing_if = "Option::is_none", default)]
    pub f1: Option<f64>,
}

/// Eval-mode outputs for a dataset, in dataset order, truncated to `max_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub ids: Vec<String>,
    pub token_ids: Vec<Vec<usize>>,
    pub masks: Vec<Vec<u8>>,
    pub gold: Vec<Option<Vec<u8>>>,
    pub labels: Vec<usize>,
    pub predicted: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
}

impl Predictions {
    /// Writes one `{"id", "mask"}` JSON line per example, the mask as a 0/1 string.
    pub fn write_mask_dump(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
        for (id, mask) in self.ids.iter().zip(&self.masks) {
            let bits: String = mask.iter().map(|&m| if m == 1 { '1' } else { '0' }).collect();
            serde_json::to_writer(&mut out, &serde_json::json!({ "id": id, "mask": bits }))?;
            out.write_all(b"\n").map_err(io_err(path))?;
        }
        out.flush().map_err(io_err(path))
    }

    pub fn metrics(&self, averaging: Averaging) -> Result<RationaleMetrics> {
        let acc = if self.labels.is_empty() {
            0.0
        } else {
            self.labels.iter().zip(&self.predicted).filter(|(a, b)| a == b).count() as f64 / self.labels.len() as f64
        };
        let mut m = RationaleMetrics { sparsity: sparsity(&self.masks), accuracy: acc, precision: None, recall: None, f1: None };
        if !self.gold.is_empty() && self.gold.iter().all(Option::is_some) {
            let gold: Vec<Vec<u8>> = self.gold.iter().map(|g| g.clone().expect("checked")).collect();
            let prf = token_prf(&self.masks, &gold, averaging)?;
            m.precision = Some(prf.precision);
            m.recall = Some(prf.recall);
            m.f1 = Some(prf.f1);
        }
        Ok(m)
    }
}

/// Runs the eval-mode pipeline (deterministic masks) over `dataset`.
pub fn predict(model: &Model, dataset: &Dataset, vocab: &Vocabulary, batch_size: usize, max_len: usize) -> Predictions {
    let batches = make_batches(dataset, vocab, batch_size, max_len, 0, false);
    let parts: Vec<_> = batches
        .par_iter()
        .map(|b| {
            let out = model.forward(b, Mode::Eval, 0);
            let probs = softmax(&out.logits);
            let rows: Vec<_> = (0..b.size())
                .map(|i| {
                    let l = b.lengths[i];
                    let ids = b.ids.row(i).iter().take(l).copied().collect::<Vec<_>>();
                    let mask = out.mask.hard.row(i).iter().take(l).map(|&v| v as u8).collect::<Vec<_>>();
                    let p = probs.row(i).to_vec();
                    (b.indices[i], ids, mask, b.gold[i].clone(), b.labels[i], argmax(&p), p)
                })
                .collect();
            rows
        })
        .collect();
    let mut preds = Predictions {
        ids: Vec::new(),
        token_ids: Vec::new(),
        masks: Vec::new(),
        gold: Vec::new(),
        labels: Vec::new(),
        predicted: Vec::new(),
        probs: Vec::new(),
    };
    for (idx, ids, mask, gold, label, pred, p) in parts.into_iter().flatten() {
        preds.ids.push(dataset.examples[idx].id.clone());
        preds.token_ids.push(ids);
        preds.masks.push(mask);
        preds.gold.push(gold);
        preds.labels.push(label);
        preds.predicted.push(pred);
        preds.probs.push(p);
    }
    preds
}

/// Predictions plus their summary metrics.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    vocab: &Vocabulary,
    batch_size: usize,
    max_len: usize,
    averaging: Averaging,
) -> Result<(RationaleMetrics, Predictions)> {
    let preds = predict(model, dataset, vocab, batch_size, max_len);
    Ok((preds.metrics(averaging)?, preds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_json_shape() {
        let m = RationaleMetrics { sparsity: 0.1234567, accuracy: 1.0, precision: Some(2.0 / 3.0), recall: None, f1: None };
        let v = serde_json::to_value(m).unwrap();
        assert_eq!(v["S"], 0.123457);
        assert_eq!(v["P"], 0.666667);
        assert!(v.get("R").is_none());
    }

    #[test]
    fn split_without_gold_omits_prf() {
        let p = Predictions {
            ids: vec!["a".into()],
            token_ids: vec![vec![2, 3]],
            masks: vec![vec![1, 0]],
            gold: vec![None],
            labels: vec![1],
            predicted: vec![1],
            probs: vec![vec![0.2, 0.8]],
        };
        let m = p.metrics(Averaging::Micro).unwrap();
        assert_eq!((m.sparsity, m.accuracy, m.f1), (0.5, 1.0, None));
    }
}
