//! Flat `key = value` run configuration.
//!
//! A run is described by one [`RunConfig`]. Values are resolved in three
//! layers: built-in defaults, then a config file, then explicit overrides
//! (command-line flags). [`RunConfig::to_text`] writes every key back out, and
//! parsing that text reproduces the same config.
//!
//! File syntax: one `key = value` per line; `#` starts a comment; blank lines
//! are ignored. Unknown or repeated keys are errors.
//!
//! | key | meaning |
//! |-----|---------|
//! | `data_source` | `synth` or `reviews` |
//! | `domain`, `aspect` | review corpus domain (`beer`, `hotel`) and aspect |
//! | `train_path`, `dev_path`, `annotation_path` | JSON-lines corpus files |
//! | `min_freq` | vocabulary frequency cutoff over the train split |
//! | `embeddings_path` | word-vector text file; random vectors when unset |
//! | `embedding_init_range` | half-width of random vectors when no file is given |
//! | `synth_*` | fields of the synthetic corpus generator |
//! | `embedding_dim` ... `freeze_embeddings` | model shape and sharing |
//! | `lr_gen` ... `averaging` | optimization and evaluation |
//! | `lambda1`, `lambda2`, `alpha`, `coherence` | regularizer |
//! | `skew_*` | pretraining protocol knobs |

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{
    build_vocab, load_annotations, load_embeddings, load_reviews, synth_generate, Domain, EmbeddingTable, Split,
    SynthConfig, SynthPartition, Vocabulary,
};
use crate::error::{io_err, Error, Result};
use crate::evaluation::text_token_classes;
use crate::model::ModelConfig;
use crate::training::{Corpus, PretrainInput, SkewConfig, SkewKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synth,
    Reviews,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub domain: Domain,
    pub aspect: String,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub annotation_path: Option<PathBuf>,
    pub min_freq: usize,
    pub embeddings_path: Option<PathBuf>,
    pub embedding_init_range: f64,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth,
            domain: Domain::Beer,
            aspect: "appearance".into(),
            train_path: None,
            dev_path: None,
            annotation_path: None,
            min_freq: 1,
            embeddings_path: None,
            embedding_init_range: 0.1,
            synth: SynthConfig::default(),
        }
    }
}

/// Skew settings other than the kind and threshold, which come per command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewSettings {
    pub batch_size: usize,
    pub lr: f64,
    pub epoch_cap: usize,
    pub first_sentence_cap: usize,
    pub predictor_input: PretrainInput,
}

impl Default for SkewSettings {
    fn default() -> Self {
        let base = SkewConfig::new(SkewKind::SkewedGenerator, 0.9);
        Self {
            batch_size: base.batch_size,
            lr: base.lr,
            epoch_cap: base.epoch_cap,
            first_sentence_cap: base.first_sentence_cap,
            predictor_input: base.predictor_input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub skew: SkewSettings,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_enum<T: DeserializeOwned>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| Error::Config(format!("{key}: unknown value {value:?}")))
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("none".into(), |p| p.display().to_string())
}

/// `(line, key, value)` triples of a config text.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", idx + 1)))?;
        let key = key.trim().to_string();
        if !seen.insert(key.clone()) {
            return Err(Error::Config(format!("line {}: key {key} given twice", idx + 1)));
        }
        out.push((idx + 1, key, value.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Every recognised key.
    pub fn keys() -> Vec<&'static str> {
        Self::default().pairs().into_iter().map(|(k, _)| k).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (d, m, t, s) = (&mut self.data, &mut self.model, &mut self.train, &mut self.skew);
        match key {
            "data_source" => d.source = parse_enum(key, value)?,
            "domain" => d.domain = parse(key, value)?,
            "aspect" => d.aspect = value.to_string(),
            "train_path" => d.train_path = opt_path(value),
            "dev_path" => d.dev_path = opt_path(value),
            "annotation_path" => d.annotation_path = opt_path(value),
            "min_freq" => d.min_freq = parse(key, value)?,
            "embeddings_path" => d.embeddings_path = opt_path(value),
            "embedding_init_range" => d.embedding_init_range = parse(key, value)?,
            "synth_vocab_size" => d.synth.vocab_size = parse(key, value)?,
            "synth_doc_length" => d.synth.doc_length = parse(key, value)?,
            "synth_span_length" => d.synth.span_length = parse(key, value)?,
            "synth_marker_correlation" => d.synth.marker_correlation = parse(key, value)?,
            "synth_informative_per_class" => d.synth.informative_per_class = parse(key, value)?,
            "synth_markers_per_class" => d.synth.markers_per_class = parse(key, value)?,
            "synth_n_train" => d.synth.n_train = parse(key, value)?,
            "synth_n_dev" => d.synth.n_dev = parse(key, value)?,
            "synth_n_annotation" => d.synth.n_annotation = parse(key, value)?,
            "synth_seed" => d.synth.seed = parse(key, value)?,
            "embedding_dim" => m.embedding_dim = parse(key, value)?,
            "hidden_dim" => m.hidden_dim = parse(key, value)?,
            "hidden_per_direction" => m.hidden_per_direction = parse(key, value)?,
            "num_layers" => m.num_layers = parse(key, value)?,
            "share_depth" => m.share_depth = parse(key, value)?,
            "num_classes" => m.num_classes = parse(key, value)?,
            "temperature" => m.temperature = parse(key, value)?,
            "freeze_embeddings" => m.freeze_embeddings = parse(key, value)?,
            "lr_gen" => t.lr_gen = parse(key, value)?,
            "lr_pred" => t.lr_pred = parse(key, value)?,
            "shared_lr" => t.shared_lr = parse_enum(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "sparsity_tolerance" => t.sparsity_tolerance = parse(key, value)?,
            "max_len" => t.max_len = parse(key, value)?,
            "max_grad_norm" => t.max_grad_norm = if value == "none" { None } else { Some(parse(key, value)?) },
            "eval_batch_size" => t.eval_batch_size = parse(key, value)?,
            "averaging" => t.averaging = parse_enum(key, value)?,
            "lambda1" => t.objective.lambda1 = parse(key, value)?,
            "lambda2" => t.objective.lambda2 = parse(key, value)?,
            "alpha" => t.objective.alpha = parse(key, value)?,
            "coherence" => t.objective.coherence = parse_enum(key, value)?,
            "skew_batch_size" => s.batch_size = parse(key, value)?,
            "skew_lr" => s.lr = parse(key, value)?,
            "skew_epoch_cap" => s.epoch_cap = parse(key, value)?,
            "skew_first_sentence_cap" => s.first_sentence_cap = parse(key, value)?,
            "skew_predictor_input" => s.predictor_input = parse_enum(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in documentation order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let (d, m, t, s) = (&self.data, &self.model, &self.train, &self.skew);
        vec![
            ("data_source", enum_name(&d.source)),
            ("domain", d.domain.to_string()),
            ("aspect", d.aspect.clone()),
            ("train_path", show_path(&d.train_path)),
            ("dev_path", show_path(&d.dev_path)),
            ("annotation_path", show_path(&d.annotation_path)),
            ("min_freq", d.min_freq.to_string()),
            ("embeddings_path", show_path(&d.embeddings_path)),
            ("embedding_init_range", d.embedding_init_range.to_string()),
            ("synth_vocab_size", d.synth.vocab_size.to_string()),
            ("synth_doc_length", d.synth.doc_length.to_string()),
            ("synth_span_length", d.synth.span_length.to_string()),
            ("synth_marker_correlation", d.synth.marker_correlation.to_string()),
            ("synth_informative_per_class", d.synth.informative_per_class.to_string()),
            ("synth_markers_per_class", d.synth.markers_per_class.to_string()),
            ("synth_n_train", d.synth.n_train.to_string()),
            ("synth_n_dev", d.synth.n_dev.to_string()),
            ("synth_n_annotation", d.synth.n_annotation.to_string()),
            ("synth_seed", d.synth.seed.to_string()),
            ("embedding_dim", m.embedding_dim.to_string()),
            ("hidden_dim", m.hidden_dim.to_string()),
            ("hidden_per_direction", m.hidden_per_direction.to_string()),
            ("num_layers", m.num_layers.to_string()),
            ("share_depth", m.share_depth.to_string()),
            ("num_classes", m.num_classes.to_string()),
            ("temperature", m.temperature.to_string()),
            ("freeze_embeddings", m.freeze_embeddings.to_string()),
            ("lr_gen", t.lr_gen.to_string()),
            ("lr_pred", t.lr_pred.to_string()),
            ("shared_lr", enum_name(&t.shared_lr)),
            ("batch_size", t.batch_size.to_string()),
            ("epochs", t.epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("sparsity_tolerance", t.sparsity_tolerance.to_string()),
            ("max_len", t.max_len.to_string()),
            ("max_grad_norm", t.max_grad_norm.map_or("none".into(), |v| v.to_string())),
            ("eval_batch_size", t.eval_batch_size.to_string()),
            ("averaging", enum_name(&t.averaging)),
            ("lambda1", t.objective.lambda1.to_string()),
            ("lambda2", t.objective.lambda2.to_string()),
            ("alpha", t.objective.alpha.to_string()),
            ("coherence", enum_name(&t.objective.coherence)),
            ("skew_batch_size", s.batch_size.to_string()),
            ("skew_lr", s.lr.to_string()),
            ("skew_epoch_cap", s.epoch_cap.to_string()),
            ("skew_first_sentence_cap", s.first_sentence_cap.to_string()),
            ("skew_predictor_input", enum_name(&s.predictor_input)),
        ]
    }

    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (line, key, value) in parse_pairs(text)? {
            cfg.set(&key, &value)
                .map_err(|e| Error::Config(format!("line {line}: {}", e.to_string().trim_start_matches("invalid configuration: "))))?;
        }
        Ok(cfg)
    }

    /// Defaults, then `file` if given, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(io_err(path))?;
                Self::from_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => Self::default(),
        };
        for (key, value) in overrides {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.train.objective.validate()?;
        if self.data.source == DataSource::Synth {
            self.data.synth.validate()?;
        } else if self.data.train_path.is_none() || self.data.dev_path.is_none() {
            return Err(Error::Config("reviews data needs train_path and dev_path".into()));
        }
        if !(self.data.embedding_init_range >= 0.0) {
            return Err(Error::Config("embedding_init_range must be non-negative".into()));
        }
        Ok(())
    }

    pub fn skew_config(&self, kind: SkewKind, k: f64) -> SkewConfig {
        SkewConfig {
            kind,
            k,
            batch_size: self.skew.batch_size,
            lr: self.skew.lr,
            epoch_cap: self.skew.epoch_cap,
            first_sentence_cap: self.skew.first_sentence_cap,
            predictor_input: self.skew.predictor_input,
            seed: self.train.seed,
        }
    }

    /// Loads or synthesizes the corpus; the partition is returned for
    /// synthetic data only.
    pub fn corpus(&self) -> Result<(Corpus, Option<SynthPartition>)> {
        let d = &self.data;
        match d.source {
            DataSource::Synth => {
                let (corpus, partition) = Corpus::from_synth(synth_generate(&d.synth)?)?;
                Ok((corpus, Some(partition)))
            }
            DataSource::Reviews => {
                let need = |p: &Option<PathBuf>, what: &str| {
                    p.clone().ok_or_else(|| Error::Config(format!("{what} is required for reviews data")))
                };
                let train = load_reviews(&need(&d.train_path, "train_path")?, &d.aspect, d.domain, Split::Train, self.train.seed)?;
                let dev = load_reviews(&need(&d.dev_path, "dev_path")?, &d.aspect, d.domain, Split::Dev, self.train.seed)?;
                let annotation = match &d.annotation_path {
                    Some(p) => Some(load_annotations(p, &d.aspect, d.domain)?),
                    None => None,
                };
                let vocab = build_vocab(&[&train], d.min_freq)?;
                let classes = text_token_classes(&vocab);
                Ok((Corpus { vocab, train, dev, annotation, token_classes: Some(classes) }, None))
            }
        }
    }

    pub fn embeddings(&self, vocab: &Vocabulary) -> Result<EmbeddingTable> {
        let dim = self.model.embedding_dim;
        match &self.data.embeddings_path {
            Some(path) => load_embeddings(path, dim, vocab, self.train.seed),
            None => Ok(EmbeddingTable::random(vocab.len(), dim, self.data.embedding_init_range, self.train.seed)),
        }
    }
}
