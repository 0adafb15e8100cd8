//! Joint cooperative training, learning-rate grids and skewed pretraining.

use log::{debug, info};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    build_vocab, make_batches, Batch, Dataset, EmbeddingTable, Example, SynthCorpus, SynthPartition, TokenClass, Vocabulary,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, selection_rates, Averaging, RationaleMetrics, SelectionRates};
use crate::model::{build_model, gumbel_difference, Model, ModelConfig, ParamGroup};
use crate::objective::{cross_entropy_grad, sparsity_coherence_grad, ObjectiveConfig};
use crate::optim::{Adam, AdamConfig, SharedLr};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_gen: f64,
    pub lr_pred: f64,
    pub shared_lr: SharedLr,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    /// Half-width of the dev-sparsity band used by [`select_model`].
    pub sparsity_tolerance: f64,
    pub max_len: usize,
    pub max_grad_norm: Option<f64>,
    pub eval_batch_size: usize,
    pub averaging: Averaging,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_gen: 1e-3,
            lr_pred: 1e-3,
            shared_lr: SharedLr::Generator,
            batch_size: 256,
            epochs: 30,
            seed: 0,
            objective: ObjectiveConfig::default(),
            sparsity_tolerance: 0.05,
            max_len: 256,
            max_grad_norm: None,
            eval_batch_size: 256,
            averaging: Averaging::Micro,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_gen > 0.0 && self.lr_pred > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 || self.max_len == 0 {
            return Err(Error::Config("batch sizes and max_len must be positive".into()));
        }
        if !(self.sparsity_tolerance >= 0.0) {
            return Err(Error::Config("sparsity_tolerance must be non-negative".into()));
        }
        if let Some(n) = self.max_grad_norm {
            if !(n > 0.0) {
                return Err(Error::Config("max_grad_norm must be positive".into()));
            }
        }
        self.objective.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { shared: self.shared_lr, max_grad_norm: self.max_grad_norm, ..AdamConfig::new(self.lr_gen, self.lr_pred) }
    }
}

/// Everything a run reads: vocabulary, splits and optional token classes
/// (indexed by token id) for degeneration diagnostics.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub train: Dataset,
    pub dev: Dataset,
    pub annotation: Option<Dataset>,
    pub token_classes: Option<Vec<TokenClass>>,
}

impl Corpus {
    /// Vocabulary over every split, exact token classes from the generator.
    pub fn from_synth(synth: SynthCorpus) -> Result<(Self, SynthPartition)> {
        let vocab = build_vocab(&[&synth.train, &synth.dev, &synth.annotation], 1)?;
        let classes = synth.partition.id_classes(&vocab);
        Ok((
            Self { vocab, train: synth.train, dev: synth.dev, annotation: Some(synth.annotation), token_classes: Some(classes) },
            synth.partition,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub cross_entropy: f64,
    pub omega: f64,
    pub dev: RationaleMetrics,
    pub annotation: Option<RationaleMetrics>,
    /// Selected-token class shares on the annotation split (dev without one).
    pub selection: Option<SelectionRates>,
    pub marker_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch chosen by [`select_model`] (initial ones when
    /// no epoch ran).
    pub model: Model,
    /// The parameters after the last epoch.
    pub last: Model,
    pub history: TrainHistory,
    pub best_epoch: Option<usize>,
}

impl TrainOutcome {
    /// Annotation metrics of the selected epoch.
    pub fn best_annotation(&self) -> Option<RationaleMetrics> {
        self.best_epoch.and_then(|e| self.history.records[e].annotation)
    }

    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.history.records[e])
    }
}

/// Among epochs whose dev sparsity is within `tolerance` of `alpha`, the one
/// with the best dev accuracy (earliest on ties); otherwise the epoch closest
/// to `alpha`.
pub fn select_model(history: &[EpochRecord], alpha: f64, tolerance: f64) -> Option<usize> {
    let gap = |r: &EpochRecord| (r.dev.sparsity - alpha).abs();
    let mut best: Option<usize> = None;
    for (i, r) in history.iter().enumerate() {
        if gap(r) <= tolerance && best.is_none_or(|b| r.dev.accuracy > history[b].dev.accuracy) {
            best = Some(i);
        }
    }
    best.or_else(|| {
        history.iter().enumerate().fold(None, |acc: Option<usize>, (i, r)| match acc {
            Some(b) if gap(&history[b]) <= gap(r) => Some(b),
            _ => Some(i),
        })
    })
}

struct StepLosses {
    total: f64,
    ce: f64,
    omega: f64,
}

fn train_step(model: &mut Model, opt: &mut Adam, batch: &Batch, noise: Array2<f64>, obj: &ObjectiveConfig) -> Result<StepLosses> {
    let (logits, trace) = model.forward_traced(batch, noise);
    let (ce, d_logits) = cross_entropy_grad(&logits, &batch.labels);
    let (omega, d_mask) = sparsity_coherence_grad(&trace.mask.hard, &batch.lengths, obj)?;
    let total = ce + omega;
    if !total.is_finite() {
        return Err(Error::Divergence { epoch: 0, batch: 0, loss: total });
    }
    let grads = model.backward(&trace, &d_logits, Some(&d_mask));
    opt.step(model, &grads);
    Ok(StepLosses { total, ce, omega })
}

fn epoch_eval(model: &Model, corpus: &Corpus, cfg: &TrainConfig) -> Result<(RationaleMetrics, Option<RationaleMetrics>, Option<SelectionRates>)> {
    let (dev, dev_preds) = evaluate(model, &corpus.dev, &corpus.vocab, cfg.eval_batch_size, cfg.max_len, cfg.averaging)?;
    let mut annotation = None;
    let mut preds = dev_preds;
    if let Some(ann) = &corpus.annotation {
        let (m, p) = evaluate(model, ann, &corpus.vocab, cfg.eval_batch_size, cfg.max_len, cfg.averaging)?;
        annotation = Some(m);
        preds = p;
    }
    let selection = corpus.token_classes.as_ref().map(|c| selection_rates(&preds.token_ids, &preds.masks, c));
    Ok((dev, annotation, selection))
}

/// Joint training; see [`train_observed`].
pub fn train(model: Model, corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(model, corpus, cfg, |_, _| Ok(()))
}

/// Joint training with one Adam update of `CE + Ω` per batch, calling
/// `observe` after each epoch's evaluation.
pub fn train_observed(
    mut model: Model,
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord, &Model) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.train.is_empty() {
        return Err(Error::EmptySplit(corpus.train.split.to_string()));
    }
    let mut opt = Adam::new(&model, cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainHistory::default();
    let mut best = model.clone();
    let mut best_epoch = None;
    for epoch in 0..cfg.epochs {
        let batches = make_batches(&corpus.train, &corpus.vocab, cfg.batch_size, cfg.max_len, rng.gen(), true);
        let (mut total, mut ce, mut omega) = (0.0, 0.0, 0.0);
        for (bi, batch) in batches.iter().enumerate() {
            let noise = gumbel_difference(batch.size(), batch.width(), &mut rng);
            let step = train_step(&mut model, &mut opt, batch, noise, &cfg.objective).map_err(|e| match e {
                Error::Divergence { loss, .. } => Error::Divergence { epoch, batch: bi, loss },
                other => other,
            })?;
            let w = batch.size() as f64;
            total += step.total * w;
            ce += step.ce * w;
            omega += step.omega * w;
        }
        let n = corpus.train.len() as f64;
        let (dev, annotation, selection) = epoch_eval(&model, corpus, cfg)?;
        let record = EpochRecord {
            epoch,
            loss: total / n,
            cross_entropy: ce / n,
            omega: omega / n,
            dev,
            annotation,
            selection,
            marker_rate: selection.map(|s| s.marker),
        };
        info!(
            "epoch {epoch}: loss {:.4} dev acc {:.4} S {:.4} F1 {}",
            record.loss,
            dev.accuracy,
            dev.sparsity,
            annotation.and_then(|a| a.f1).map_or("-".into(), |f| format!("{f:.4}"))
        );
        observe(&record, &model)?;
        history.records.push(record);
        if select_model(&history.records, cfg.objective.alpha, cfg.sparsity_tolerance) == Some(epoch) {
            best = model.clone();
            best_epoch = Some(epoch);
        }
    }
    Ok(TrainOutcome { model: best, last: model, history, best_epoch })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr_gen: f64,
    pub lr_pred: f64,
    pub f1: Vec<f64>,
    pub median_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub gen_rates: Vec<f64>,
    pub pred_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Row-major over `gen_rates x pred_rates`.
    pub cells: Vec<GridCell>,
}

impl GridResult {
    pub fn cell(&self, gen: usize, pred: usize) -> &GridCell {
        &self.cells[gen * self.pred_rates.len() + pred]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lr_gen,lr_pred,median_f1,f1_per_seed\n");
        for c in &self.cells {
            let per: Vec<String> = c.f1.iter().map(|f| format!("{f:.6}")).collect();
            s.push_str(&format!("{},{},{:.6},{}\n", c.lr_gen, c.lr_pred, c.median_f1, per.join(";")));
        }
        s
    }
}

/// Final annotation F1 (dev F1 without an annotation split) of one run.
pub fn run_f1(outcome: &TrainOutcome) -> f64 {
    outcome
        .best_record()
        .and_then(|r| r.annotation.and_then(|a| a.f1).or(r.dev.f1))
        .unwrap_or(0.0)
}

/// Trains one separate-encoder model per (rate pair, seed) and reports the
/// median F1 per cell. The seed drives both initialization and training.
pub fn lr_grid(
    model_cfg: &ModelConfig,
    embeddings: &EmbeddingTable,
    corpus: &Corpus,
    base: &TrainConfig,
    gen_rates: &[f64],
    pred_rates: &[f64],
    seeds: &[u64],
) -> Result<GridResult> {
    if model_cfg.share_depth != 0 {
        return Err(Error::Config("learning-rate grids run with separate encoders (share_depth = 0)".into()));
    }
    if gen_rates.is_empty() || pred_rates.is_empty() || seeds.is_empty() {
        return Err(Error::Config("grid needs at least one generator rate, predictor rate and seed".into()));
    }
    let jobs: Vec<(usize, usize, u64)> = (0..gen_rates.len())
        .flat_map(|g| (0..pred_rates.len()).flat_map(move |p| seeds.iter().map(move |&s| (g, p, s))))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, p, seed)| {
            let cfg = TrainConfig { lr_gen: gen_rates[g], lr_pred: pred_rates[p], seed, ..base.clone() };
            let model = build_model(model_cfg, &corpus.vocab, embeddings, seed)?;
            let outcome = train(model, corpus, &cfg)?;
            debug!("grid cell gen {} pred {} seed {seed}: F1 {:.4}", gen_rates[g], pred_rates[p], run_f1(&outcome));
            Ok(run_f1(&outcome))
        })
        .collect::<Result<_>>()?;
    let cells = (0..gen_rates.len())
        .flat_map(|g| (0..pred_rates.len()).map(move |p| (g, p)))
        .map(|(g, p)| {
            let f1: Vec<f64> = jobs.iter().zip(&scores).filter(|((jg, jp, _), _)| *jg == g && *jp == p).map(|(_, &f)| f).collect();
            let median_f1 = crate::evaluation::median_of(&f1);
            GridCell { lr_gen: gen_rates[g], lr_pred: pred_rates[p], f1, median_f1 }
        })
        .collect();
    Ok(GridResult { gen_rates: gen_rates.to_vec(), pred_rates: pred_rates.to_vec(), seeds: seeds.to_vec(), cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkewKind {
    SkewedPredictor,
    SkewedGenerator,
}

/// What the skewed predictor sees during pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainInput {
    /// Tokens up to and including the first ".", at most `first_sentence_cap`.
    #[default]
    FirstSentence,
    /// Only the marker-class tokens of each document (synthetic corpora).
    MarkersOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewConfig {
    pub kind: SkewKind,
    /// Pretraining epochs (predictor) or accuracy threshold (generator).
    pub k: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub epoch_cap: usize,
    pub first_sentence_cap: usize,
    pub predictor_input: PretrainInput,
    pub seed: u64,
}

impl SkewConfig {
    pub fn new(kind: SkewKind, k: f64) -> Self {
        Self {
            kind,
            k,
            batch_size: 500,
            lr: 1e-3,
            epoch_cap: 20,
            first_sentence_cap: 15,
            predictor_input: PretrainInput::FirstSentence,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SkewKind::SkewedPredictor if !(self.k >= 0.0 && self.k.fract() == 0.0) => {
                Err(Error::Config(format!("predictor skew needs a whole number of epochs, got {}", self.k)))
            }
            SkewKind::SkewedGenerator if !(self.k > 0.5 && self.k < 1.0) => {
                Err(Error::Config(format!("generator skew threshold must lie in (0.5, 1), got {}", self.k)))
            }
            _ if self.batch_size == 0 || !(self.lr > 0.0) || self.epoch_cap == 0 => {
                Err(Error::Config("skew batch size, rate and epoch cap must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewOutcome {
    pub kind: SkewKind,
    pub epochs: usize,
    pub batches: usize,
    /// Dev accuracy of the pretrained module when pretraining stopped.
    pub pre_acc: f64,
}

/// Tokens up to and including the first ".", capped at `cap` tokens.
pub fn first_sentence(tokens: &[String], cap: usize) -> &[String] {
    let end = tokens.iter().position(|t| t == ".").map_or(tokens.len(), |i| i + 1);
    &tokens[..end.min(cap).min(tokens.len())]
}

fn pretrain_view(dataset: &Dataset, skew: &SkewConfig, vocab: &Vocabulary, classes: Option<&[TokenClass]>) -> Result<Dataset> {
    let examples = dataset
        .examples
        .iter()
        .filter_map(|e| {
            let tokens: Vec<String> = match skew.predictor_input {
                PretrainInput::FirstSentence => first_sentence(&e.tokens, skew.first_sentence_cap).to_vec(),
                PretrainInput::MarkersOnly => {
                    let classes = classes?;
                    e.tokens
                        .iter()
                        .filter(|t| vocab.id(t).is_some_and(|id| classes[id] == TokenClass::Marker))
                        .cloned()
                        .collect()
                }
            };
            (!tokens.is_empty()).then(|| Example::new(e.id.clone(), tokens, e.label, None))
        })
        .collect::<Result<Vec<_>>>()?;
    if examples.is_empty() {
        return Err(Error::EmptySplit(format!("{} (pretraining view)", dataset.split)));
    }
    Ok(Dataset::new(dataset.split, dataset.aspect.clone(), examples))
}

/// Trains the predictor view (encoder and head) as a plain classifier on a
/// reduced input for `k` epochs. The generator head is never touched; in a
/// shared model the shared layers absorb the pretraining.
pub fn pretrain_skewed_predictor(model: &mut Model, corpus: &Corpus, skew: &SkewConfig) -> Result<SkewOutcome> {
    skew.validate()?;
    if skew.kind != SkewKind::SkewedPredictor {
        return Err(Error::Config("expected a predictor skew config".into()));
    }
    let classes = corpus.token_classes.as_deref();
    if skew.predictor_input == PretrainInput::MarkersOnly && classes.is_none() {
        return Err(Error::Config("markers-only pretraining needs token classes".into()));
    }
    let train = pretrain_view(&corpus.train, skew, &corpus.vocab, classes)?;
    let dev = pretrain_view(&corpus.dev, skew, &corpus.vocab, classes)?;
    let mut opt = Adam::new(model, AdamConfig::new(skew.lr, skew.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(skew.seed);
    let epochs = skew.k as usize;
    let mut batches = 0;
    for _ in 0..epochs {
        for batch in make_batches(&train, &corpus.vocab, skew.batch_size, usize::MAX, rng.gen(), true) {
            let (logits, trace) = model.predictor_forward(&batch, &batch.pad_mask);
            let (loss, d_logits) = cross_entropy_grad(&logits, &batch.labels);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch: 0, batch: batches, loss });
            }
            let mut grads = model.params.zeros_like();
            model.predictor_backward(&trace, &d_logits, &mut grads);
            opt.step_filtered(model, &grads, |g| g != ParamGroup::Generator);
            batches += 1;
        }
    }
    let pre_acc = classifier_accuracy(model, &dev, &corpus.vocab);
    info!("predictor pretraining: {epochs} epochs, dev acc {pre_acc:.4}");
    Ok(SkewOutcome { kind: skew.kind, epochs, batches, pre_acc })
}

fn classifier_accuracy(model: &Model, dataset: &Dataset, vocab: &Vocabulary) -> f64 {
    let batches = make_batches(dataset, vocab, 512, usize::MAX, 0, false);
    let hits: usize = batches
        .par_iter()
        .map(|b| {
            let logits = model.classify_full_text(b);
            (0..b.size()).filter(|&i| crate::evaluation::argmax(&logits.row(i).to_vec()) == b.labels[i]).count()
        })
        .sum();
    hits as f64 / dataset.len().max(1) as f64
}

/// Fraction of `dataset` whose first-token selection probability exceeds 0.5
/// exactly for the positive class.
pub fn first_token_accuracy(model: &Model, dataset: &Dataset, vocab: &Vocabulary, max_len: usize) -> f64 {
    let batches = make_batches(dataset, vocab, 512, max_len, 0, false);
    let hits: usize = batches
        .par_iter()
        .map(|b| {
            let u = model.generator_logits(b);
            (0..b.size()).filter(|&i| ((u[[i, 0]] > 0.0) as usize) == b.labels[i]).count()
        })
        .sum();
    hits as f64 / dataset.len().max(1) as f64
}

/// Trains the generator to predict the label through the selection
/// probability of the first token, stopping as soon as dev accuracy exceeds
/// `k`. The predictor head is never touched.
pub fn pretrain_skewed_generator(model: &mut Model, corpus: &Corpus, skew: &SkewConfig, max_len: usize) -> Result<SkewOutcome> {
    skew.validate()?;
    if skew.kind != SkewKind::SkewedGenerator {
        return Err(Error::Config("expected a generator skew config".into()));
    }
    let mut opt = Adam::new(model, AdamConfig::new(skew.lr, skew.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(skew.seed);
    let mut best = 0.0f64;
    let mut batches = 0;
    for epoch in 0..skew.epoch_cap {
        for batch in make_batches(&corpus.train, &corpus.vocab, skew.batch_size, max_len, rng.gen(), true) {
            let (u, trace) = model.generator_forward(&batch);
            let n = batch.size() as f64;
            let mut d_u = Array2::zeros(u.raw_dim());
            let mut loss = 0.0;
            for b in 0..batch.size() {
                let y = batch.labels[b] as f64;
                let x = u[[b, 0]];
                // softplus form of the binary cross-entropy on sigmoid(x)
                loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
                d_u[[b, 0]] = (1.0 / (1.0 + (-x).exp()) - y) / n;
            }
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: batches, loss });
            }
            let mut grads = model.params.zeros_like();
            model.generator_backward(&trace, &d_u, &mut grads);
            opt.step_filtered(model, &grads, |g| g != ParamGroup::Predictor);
            batches += 1;
            let acc = first_token_accuracy(model, &corpus.dev, &corpus.vocab, max_len);
            best = best.max(acc);
            if acc > skew.k {
                info!("generator pretraining stopped after {batches} batches, dev acc {acc:.4}");
                return Ok(SkewOutcome { kind: skew.kind, epochs: epoch + 1, batches, pre_acc: acc });
            }
        }
    }
    Err(Error::ThresholdUnreachable { threshold: skew.k, epochs: skew.epoch_cap, best })
}
