//! Representation probes.
//!
//! * `lemma3_probe`: distance between each token's encoding and its
//!   predecessor's, split by informative vs uninformative tokens.
//! * `insertion_probe`: output shift caused by inserting one token.
//! * `uninformative_rationale_probe`: predictor outputs on filler-only
//!   rationales vs gold rationales of opposite classes.

use std::collections::HashSet;

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset, Example, TokenClass, Vocabulary, MASK_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::objective::softmax;

/// Which probe tokens enter the two aggregate means.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProbeTokens {
    pub uninformative: HashSet<String>,
    pub informative: HashSet<String>,
}

impl ProbeTokens {
    /// Filler and punctuation count as uninformative, informative tokens as
    /// informative; markers and reserved tokens enter neither mean.
    pub fn from_classes(vocab: &Vocabulary, classes: &[TokenClass]) -> Self {
        let mut out = Self::default();
        for (id, (tok, class)) in vocab.tokens().iter().zip(classes).enumerate() {
            if id == PAD_ID || id == MASK_ID {
                continue;
            }
            match class {
                TokenClass::Filler | TokenClass::Punctuation => out.uninformative.insert(tok.clone()),
                TokenClass::Informative => out.informative.insert(tok.clone()),
                TokenClass::Marker => false,
            };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Sentence {
    pub tokens: Vec<String>,
    pub representations: Vec<Vec<f64>>,
    /// Euclidean distance to the preceding token's representation.
    pub distance_to_previous: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma3View {
    pub view: String,
    pub sentences: Vec<Lemma3Sentence>,
    pub mean_uninformative: f64,
    pub mean_informative: f64,
    /// `mean_uninformative / mean_informative`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Report {
    pub share_depth: usize,
    pub num_layers: usize,
    pub views: Vec<Lemma3View>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Median of a copy of `values`; NaN when empty.
pub fn median_of(values: &[f64]) -> f64 {
    median(&mut values.to_vec())
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn view_report(name: &str, states: &Array3<f64>, sentences: &[Vec<String>], tokens: &ProbeTokens) -> Lemma3View {
    let mut uninf = Vec::new();
    let mut inf = Vec::new();
    let rows = sentences
        .iter()
        .enumerate()
        .map(|(b, words)| {
            let reps: Vec<Vec<f64>> = (0..words.len()).map(|t| states.slice(ndarray::s![b, t, ..]).to_vec()).collect();
            let dists: Vec<Option<f64>> =
                (0..words.len()).map(|t| (t > 0).then(|| euclidean(&reps[t], &reps[t - 1]))).collect();
            for (w, d) in words.iter().zip(&dists) {
                let Some(d) = *d else { continue };
                if tokens.uninformative.contains(w) {
                    uninf.push(d);
                } else if tokens.informative.contains(w) {
                    inf.push(d);
                }
            }
            Lemma3Sentence { tokens: words.clone(), representations: reps, distance_to_previous: dists }
        })
        .collect();
    let (mu, mi) = (mean(&uninf), mean(&inf));
    Lemma3View { view: name.to_string(), sentences: rows, mean_uninformative: mu, mean_informative: mi, ratio: mu / mi }
}

/// Per-token encodings of full probe sentences under the generator view and,
/// when the encoders are not fully shared, the predictor view.
pub fn lemma3_probe(model: &Model, vocab: &Vocabulary, sentences: &[Vec<String>], tokens: &ProbeTokens) -> Result<Lemma3Report> {
    let seqs = sentences.iter().map(|s| vocab.encode_strict(s)).collect::<Result<Vec<_>>>()?;
    let batch = Batch::from_sequences(&seqs, &vec![0; seqs.len()]);
    let mut views = vec![view_report("generator", &model.encode_generator(&batch), sentences, tokens)];
    if !model.config.is_unified() {
        let states = model.encode_predictor(&batch, &batch.pad_mask);
        views.push(view_report("predictor", &states, sentences, tokens));
    }
    Ok(Lemma3Report { share_depth: model.config.share_depth, num_layers: model.config.num_layers, views })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionReport {
    pub token: String,
    /// Per example, the largest absolute change of any class probability
    /// over all insertion positions.
    pub deltas: Vec<f64>,
    pub median: f64,
}

/// Inserts `token` at each position (every slot when `positions` is `None`)
/// and measures how far the eval-mode output distribution moves.
pub fn insertion_probe(
    model: &Model,
    vocab: &Vocabulary,
    examples: &[Example],
    token: &str,
    positions: Option<&[usize]>,
) -> Result<InsertionReport> {
    let inserted = vocab.id(token).ok_or_else(|| Error::UnknownToken(token.to_string()))?;
    let deltas: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let base = vocab.encode(&ex.tokens);
            let slots: Vec<usize> = match positions {
                Some(p) => p.iter().copied().filter(|&p| p <= base.len()).collect(),
                None => (0..=base.len()).collect(),
            };
            let mut seqs = vec![base.clone()];
            for &p in &slots {
                let mut s = base.clone();
                s.insert(p, inserted);
                seqs.push(s);
            }
            let batch = Batch::from_sequences(&seqs, &vec![0; seqs.len()]);
            let probs = softmax(&model.forward(&batch, Mode::Eval, 0).logits);
            (1..probs.nrows())
                .map(|i| {
                    probs.row(i).iter().zip(probs.row(0)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let median = median(&mut deltas.clone());
    Ok(InsertionReport { token: token.to_string(), deltas, median })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UninformativeReport {
    pub filler_pairs: usize,
    pub informative_pairs: usize,
    /// Median L2 distance between predictor output distributions on
    /// filler-only rationales of two different examples.
    pub filler_median: f64,
    /// Same, for gold rationales of two examples with opposite labels.
    pub informative_median: f64,
    pub ratio: f64,
    /// Fraction of filler-only rationales the predictor assigns to class 1.
    pub filler_positive_rate: f64,
}

/// First window of `span` consecutive filler tokens outside the gold mask.
pub fn filler_rationale(ids: &[usize], gold: &[u8], classes: &[TokenClass], span: usize) -> Option<Vec<u8>> {
    if span == 0 || span > ids.len() {
        return None;
    }
    let ok = |t: usize| classes[ids[t]] == TokenClass::Filler && gold.get(t).copied().unwrap_or(0) == 0;
    let start = (0..=ids.len() - span).find(|&s| (s..s + span).all(ok))?;
    Some((0..ids.len()).map(|t| (t >= start && t < start + span) as u8).collect())
}

fn predictor_outputs(model: &Model, seqs: &[Vec<usize>], masks: &[Vec<u8>]) -> Array2<f64> {
    let batch = Batch::from_sequences(seqs, &vec![0; seqs.len()]);
    let mask = Array2::from_shape_fn(batch.ids.raw_dim(), |(b, t)| masks[b].get(t).map_or(0.0, |&m| m as f64));
    softmax(&model.predictor_logits(&batch, &mask))
}

/// Compares predictor outputs on filler-only rationales with those on gold
/// rationales of opposite classes, over the first `limit` gold-annotated
/// examples. `classes` is indexed by token id.
pub fn uninformative_rationale_probe(
    model: &Model,
    vocab: &Vocabulary,
    dataset: &Dataset,
    classes: &[TokenClass],
    span: usize,
    limit: usize,
) -> Result<UninformativeReport> {
    let examples: Vec<&Example> = dataset.examples.iter().filter(|e| e.gold_mask.is_some()).take(limit).collect();
    if examples.len() < 2 {
        return Err(Error::EmptySplit(format!("{} (need two annotated examples)", dataset.split)));
    }
    let seqs: Vec<Vec<usize>> = examples.iter().map(|e| vocab.encode(&e.tokens)).collect();
    let gold: Vec<Vec<u8>> = examples.iter().map(|e| e.gold_mask.clone().expect("filtered")).collect();
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    let gold_out = predictor_outputs(model, &seqs, &gold);

    let filler: Vec<(usize, Vec<u8>)> = seqs
        .iter()
        .zip(&gold)
        .enumerate()
        .filter_map(|(i, (s, g))| filler_rationale(s, g, classes, span).map(|m| (i, m)))
        .collect();
    let filler_seqs: Vec<Vec<usize>> = filler.iter().map(|(i, _)| seqs[*i].clone()).collect();
    let filler_masks: Vec<Vec<u8>> = filler.iter().map(|(_, m)| m.clone()).collect();
    let filler_out = if filler.is_empty() { Array2::zeros((0, 2)) } else { predictor_outputs(model, &filler_seqs, &filler_masks) };

    let dist = |o: &Array2<f64>, i: usize, j: usize| euclidean(&o.row(i).to_vec(), &o.row(j).to_vec());
    let mut f = Vec::new();
    for i in 0..filler_out.nrows() {
        for j in i + 1..filler_out.nrows() {
            f.push(dist(&filler_out, i, j));
        }
    }
    let mut g = Vec::new();
    for i in 0..examples.len() {
        for j in i + 1..examples.len() {
            if labels[i] != labels[j] {
                g.push(dist(&gold_out, i, j));
            }
        }
    }
    let positive = filler_out.rows().into_iter().filter(|r| r.len() > 1 && r[1] > r[0]).count();
    let (fm, gm) = (median(&mut f), median(&mut g));
    Ok(UninformativeReport {
        filler_pairs: f.len(),
        informative_pairs: g.len(),
        filler_median: fm,
        informative_median: gm,
        ratio: fm / gm,
        filler_positive_rate: if filler_out.nrows() == 0 { f64::NAN } else { positive as f64 / filler_out.nrows() as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, synth_generate, EmbeddingTable, SynthConfig};
    use crate::model::{build_model, ModelConfig};

    fn setup(share_depth: usize) -> (Model, Vocabulary) {
        let vocab = Vocabulary::from_tokens(["good", ".", ",", "smell"]);
        let cfg = ModelConfig { embedding_dim: 4, hidden_dim: 6, share_depth, ..Default::default() };
        let m = build_model(&cfg, &vocab, &EmbeddingTable::random(vocab.len(), 4, 0.5, 1), 2).unwrap();
        (m, vocab)
    }

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn punct() -> ProbeTokens {
        ProbeTokens {
            uninformative: [".", ","].iter().map(|s| s.to_string()).collect(),
            informative: ["smell"].iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn identical_sentences_have_identical_rows() {
        let (m, v) = setup(1);
        let r = lemma3_probe(&m, &v, &[words("good . , smell"), words("good . , smell")], &punct()).unwrap();
        assert_eq!(r.views.len(), 1);
        let s = &r.views[0].sentences;
        assert_eq!(s[0], s[1]);
        assert!(s[0].distance_to_previous[0].is_none());
        assert!(s[0].distance_to_previous.iter().flatten().all(|&d| d >= 0.0));
    }

    #[test]
    fn separate_encoders_report_two_views() {
        let (m, v) = setup(0);
        let r = lemma3_probe(&m, &v, &[words("good , . smell")], &punct()).unwrap();
        assert_eq!(r.views.iter().map(|x| x.view.as_str()).collect::<Vec<_>>(), ["generator", "predictor"]);
        assert!(r.views[0].ratio.is_finite());
    }

    #[test]
    fn unknown_probe_token_is_error() {
        let (m, v) = setup(1);
        assert!(matches!(lemma3_probe(&m, &v, &[words("good taste")], &punct()), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn probes_are_pure() {
        let (m, v) = setup(0);
        let a = lemma3_probe(&m, &v, &[words("good . , smell")], &punct()).unwrap();
        let b = lemma3_probe(&m, &v, &[words("good . , smell")], &punct()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inserting_padding_at_the_end_changes_nothing() {
        let (m, v) = setup(0);
        let ex = Example::new("a", words("good . smell"), 1, None).unwrap();
        let end = [3usize];
        let r = insertion_probe(&m, &v, std::slice::from_ref(&ex), "<pad>", Some(&end)).unwrap();
        assert_eq!(r.deltas, vec![0.0]);
        let r = insertion_probe(&m, &v, &[ex], ",", None).unwrap();
        assert!(r.deltas[0] >= 0.0);
    }

    #[test]
    fn filler_window_avoids_gold_and_non_filler() {
        use TokenClass::*;
        let classes = [Filler, Filler, Filler, Informative, Filler, Filler];
        let ids = [2, 3, 4, 5, 4, 2];
        let gold = [0, 0, 1, 1, 0, 0];
        assert_eq!(filler_rationale(&ids, &gold, &classes, 2), Some(vec![0, 0, 0, 0, 1, 1]));
        assert_eq!(filler_rationale(&ids, &gold, &classes, 3), None);
    }

    #[test]
    fn probe_tokens_follow_classes() {
        use TokenClass::*;
        let v = Vocabulary::from_tokens(["f0", "pos0", "mkpos0", "."]);
        let t = ProbeTokens::from_classes(&v, &[Filler, Filler, Filler, Informative, Marker, Punctuation]);
        let mut u: Vec<_> = t.uninformative.iter().cloned().collect();
        u.sort();
        assert_eq!(u, [".", "f0"]);
        assert_eq!(t.informative.iter().collect::<Vec<_>>(), ["pos0"]);
    }

    #[test]
    fn uninformative_probe_runs_on_synthetic() {
        let c = synth_generate(&SynthConfig { n_train: 100, n_dev: 20, n_annotation: 40, ..Default::default() }).unwrap();
        let vocab = build_vocab(&[&c.train, &c.dev, &c.annotation], 1).unwrap();
        let cfg = ModelConfig { embedding_dim: 8, hidden_dim: 8, ..Default::default() };
        let m = build_model(&cfg, &vocab, &EmbeddingTable::random(vocab.len(), 8, 0.5, 1), 2).unwrap();
        let classes = c.partition.id_classes(&vocab);
        let r = uninformative_rationale_probe(&m, &vocab, &c.annotation, &classes, 3, 40).unwrap();
        assert!(r.filler_pairs > 0 && r.informative_pairs > 0);
        assert!(r.filler_median >= 0.0);
    }
}
