//! Parameters and forward/backward computation.
//!
//! The encoder layers live in one arena; the generator and predictor each hold
//! a stack of arena indices. The first `share_depth` entries of both stacks are
//! the same indices, so shared layers are aliases: an update through either
//! view is an update of the one underlying layer.

mod forward;
mod gru;
mod linear;
mod mask;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};

pub use forward::{pool_max, ForwardOutput, GeneratorTrace, Mode, PredictorTrace, Trace};
pub use gru::{BiGru, GruDirection};
pub use linear::Linear;
pub use mask::{apply_mask, gumbel_difference, sample_mask, MaskSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    /// Width of each per-token encoder output, both directions together,
    /// unless `hidden_per_direction` is set.
    pub hidden_dim: usize,
    pub hidden_per_direction: bool,
    pub num_layers: usize,
    /// Leading encoder layers shared by generator and predictor: 0 gives
    /// fully separate encoders, `num_layers` one unified encoder.
    pub share_depth: usize,
    pub num_classes: usize,
    pub temperature: f64,
    pub freeze_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 100,
            hidden_dim: 200,
            hidden_per_direction: false,
            num_layers: 1,
            share_depth: 1,
            num_classes: 2,
            temperature: 1.0,
            freeze_embeddings: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return bad("embedding_dim, hidden_dim and num_layers must be positive".into());
        }
        if !self.hidden_per_direction && !self.hidden_dim.is_multiple_of(2) {
            return bad(format!("hidden_dim {} must be even when split across directions", self.hidden_dim));
        }
        if self.share_depth > self.num_layers {
            return bad(format!(
                "share_depth {} exceeds num_layers {}",
                self.share_depth, self.num_layers
            ));
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive".into());
        }
        Ok(())
    }

    pub fn direction_width(&self) -> usize {
        if self.hidden_per_direction {
            self.hidden_dim
        } else {
            self.hidden_dim / 2
        }
    }

    /// Width of the per-token representation the heads consume.
    pub fn output_width(&self) -> usize {
        2 * self.direction_width()
    }

    pub fn is_unified(&self) -> bool {
        self.share_depth == self.num_layers
    }
}

/// Which side of the cooperative game a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Generator,
    Predictor,
    Shared,
}

/// All parameter tensors. The same type doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding: Array2<f64>,
    pub layers: Vec<BiGru>,
    pub gen_head: Linear,
    pub pred_head: Linear,
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: Array2::zeros(self.embedding.raw_dim()),
            layers: self.layers.iter().map(BiGru::zeros_like).collect(),
            gen_head: self.gen_head.zeros_like(),
            pred_head: self.pred_head.zeros_like(),
        }
    }

    /// `(name, shape, values)` in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = vec![(
            "embedding".to_string(),
            self.embedding.shape().to_vec(),
            self.embedding.as_slice().expect("standard layout"),
        )];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, shape, data) in layer.tensors() {
                out.push((format!("layers.{i}.{name}"), shape, data));
            }
        }
        for (prefix, head) in [("gen_head", &self.gen_head), ("pred_head", &self.pred_head)] {
            for (name, shape, data) in head.tensors() {
                out.push((format!("{prefix}.{name}"), shape, data));
            }
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = vec![(
            "embedding".to_string(),
            self.embedding.as_slice_mut().expect("standard layout"),
        )];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (name, data) in layer.tensors_mut() {
                out.push((format!("layers.{i}.{name}"), data));
            }
        }
        for (prefix, head) in [("gen_head", &mut self.gen_head), ("pred_head", &mut self.pred_head)] {
            for (name, data) in head.tensors_mut() {
                out.push((format!("{prefix}.{name}"), data));
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, a), (_, _, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    gen_stack: Vec<usize>,
    pred_stack: Vec<usize>,
}

/// Trainable parameter counts, shared layers counted once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub embedding: usize,
    pub generator_encoder: usize,
    pub predictor_encoder: usize,
    pub shared_encoder: usize,
    pub generator_head: usize,
    pub predictor_head: usize,
    /// Everything that receives updates (excludes a frozen embedding).
    pub trainable: usize,
    /// Trainable plus a frozen embedding table.
    pub total: usize,
}

fn stacks(cfg: &ModelConfig) -> (Vec<usize>, Vec<usize>) {
    let gen: Vec<usize> = (0..cfg.num_layers).collect();
    let pred = (0..cfg.num_layers)
        .map(|i| if i < cfg.share_depth { i } else { cfg.num_layers + i - cfg.share_depth })
        .collect();
    (gen, pred)
}

/// Builds a model with seeded initialization and the sharing pattern of
/// `cfg.share_depth`. The generator (encoder and head) is initialized first, so two
/// models that differ only in `share_depth` start from the same generator.
pub fn build_model(cfg: &ModelConfig, vocab: &Vocabulary, embeddings: &EmbeddingTable, seed: u64) -> Result<Model> {
    cfg.validate()?;
    if embeddings.dim() != cfg.embedding_dim {
        return Err(Error::Config(format!(
            "embedding table has dimension {}, config says {}",
            embeddings.dim(),
            cfg.embedding_dim
        )));
    }
    if embeddings.len() != vocab.len() {
        return Err(Error::LengthMismatch {
            what: "embedding rows vs vocabulary",
            expected: vocab.len(),
            found: embeddings.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (gen_stack, pred_stack) = stacks(cfg);
    let arena = pred_stack.iter().copied().max().map_or(0, |m| m + 1);
    let hidden = cfg.direction_width();
    let width = cfg.output_width();
    let input = |depth: usize| if depth == 0 { cfg.embedding_dim } else { width };
    let mut layers: Vec<BiGru> = (0..cfg.num_layers).map(|i| BiGru::new(input(i), hidden, &mut rng)).collect();
    let gen_head = Linear::new(width, 1, &mut rng);
    for i in cfg.num_layers..arena {
        layers.push(BiGru::new(input(i - cfg.num_layers + cfg.share_depth), hidden, &mut rng));
    }
    let pred_head = Linear::new(width, cfg.num_classes, &mut rng);
    let mut embedding = embeddings.clone();
    embedding.zero_reserved();
    Ok(Model {
        config: cfg.clone(),
        params: ModelParams { embedding: embedding.matrix, layers, gen_head, pred_head },
        gen_stack,
        pred_stack,
    })
}

impl Model {
    /// Reassembles a model from a config and previously saved parameters.
    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let (gen_stack, pred_stack) = stacks(&config);
        let arena = pred_stack.iter().copied().max().map_or(0, |m| m + 1);
        if params.layers.len() != arena {
            return Err(Error::Config(format!(
                "expected {arena} encoder layers for share_depth {}, found {}",
                config.share_depth,
                params.layers.len()
            )));
        }
        Ok(Self { config, params, gen_stack, pred_stack })
    }

    pub fn generator_layers(&self) -> &[usize] {
        &self.gen_stack
    }

    pub fn predictor_layers(&self) -> &[usize] {
        &self.pred_stack
    }

    pub fn layer_group(&self, arena_index: usize) -> ParamGroup {
        let in_gen = self.gen_stack.contains(&arena_index);
        let in_pred = self.pred_stack.contains(&arena_index);
        match (in_gen, in_pred) {
            (true, true) => ParamGroup::Shared,
            (true, false) => ParamGroup::Generator,
            _ => ParamGroup::Predictor,
        }
    }

    /// Group of a tensor by its stable name; `None` for a frozen embedding.
    pub fn tensor_group(&self, name: &str) -> Option<ParamGroup> {
        if name == "embedding" {
            return (!self.config.freeze_embeddings).then_some(ParamGroup::Shared);
        }
        if name.starts_with("gen_head.") {
            return Some(ParamGroup::Generator);
        }
        if name.starts_with("pred_head.") {
            return Some(ParamGroup::Predictor);
        }
        let idx: usize = name.strip_prefix("layers.")?.split('.').next()?.parse().ok()?;
        Some(self.layer_group(idx))
    }

    /// Encoder layers as seen from the generator and from the predictor.
    pub fn generator_view(&self) -> Vec<&BiGru> {
        self.gen_stack.iter().map(|&i| &self.params.layers[i]).collect()
    }

    pub fn predictor_view(&self) -> Vec<&BiGru> {
        self.pred_stack.iter().map(|&i| &self.params.layers[i]).collect()
    }

    pub fn param_count(&self) -> ParamCount {
        let mut count = ParamCount {
            embedding: self.params.embedding.len(),
            generator_encoder: 0,
            predictor_encoder: 0,
            shared_encoder: 0,
            generator_head: self.params.gen_head.num_params(),
            predictor_head: self.params.pred_head.num_params(),
            trainable: 0,
            total: 0,
        };
        for (i, layer) in self.params.layers.iter().enumerate() {
            let n = layer.num_params();
            match self.layer_group(i) {
                ParamGroup::Generator => count.generator_encoder += n,
                ParamGroup::Predictor => count.predictor_encoder += n,
                ParamGroup::Shared => count.shared_encoder += n,
            }
        }
        let non_embedding = count.generator_encoder
            + count.predictor_encoder
            + count.shared_encoder
            + count.generator_head
            + count.predictor_head;
        count.trainable = non_embedding + if self.config.freeze_embeddings { 0 } else { count.embedding };
        count.total = non_embedding + count.embedding;
        count
    }

    /// Parameter count of one full encoder stack (all `num_layers` layers).
    pub fn encoder_stack_count(&self) -> usize {
        self.generator_view().iter().map(|l| l.num_params()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(share_depth: usize, num_layers: usize) -> Model {
        let vocab = Vocabulary::from_tokens(["a", "b", "c"]);
        let cfg = ModelConfig {
            embedding_dim: 4,
            hidden_dim: 6,
            num_layers,
            share_depth,
            ..Default::default()
        };
        let emb = EmbeddingTable::random(vocab.len(), 4, 0.5, 1);
        build_model(&cfg, &vocab, &emb, 3).unwrap()
    }

    #[test]
    fn share_depth_beyond_layers_is_rejected() {
        let vocab = Vocabulary::from_tokens(["a"]);
        let cfg = ModelConfig { embedding_dim: 4, hidden_dim: 6, num_layers: 1, share_depth: 2, ..Default::default() };
        let emb = EmbeddingTable::random(vocab.len(), 4, 0.5, 1);
        assert!(matches!(build_model(&cfg, &vocab, &emb, 0), Err(Error::Config(_))));
    }

    #[test]
    fn unified_model_saves_one_encoder_stack() {
        let fr = setup(1, 1);
        let rnp = setup(0, 1);
        assert_eq!(fr.param_count().trainable, rnp.param_count().trainable - rnp.encoder_stack_count());
        assert_eq!(fr.param_count().predictor_encoder, 0);
        assert_eq!(fr.param_count().generator_encoder, 0);
    }

    #[test]
    fn separate_encoders_are_disjoint() {
        let rnp = setup(0, 2);
        let gen = rnp.generator_layers().to_vec();
        assert!(rnp.predictor_layers().iter().all(|i| !gen.contains(i)));
        assert_eq!(rnp.param_count().shared_encoder, 0);
    }

    #[test]
    fn partial_sharing_counts_leading_layers() {
        let m = setup(2, 3);
        let view = m.generator_view();
        let expected: usize = view[..2].iter().map(|l| l.num_params()).sum();
        assert_eq!(m.param_count().shared_encoder, expected);
        assert_eq!(m.params.layers.len(), 4);
        assert_eq!(m.generator_layers(), &[0, 1, 2]);
        assert_eq!(m.predictor_layers(), &[0, 1, 3]);
    }

    #[test]
    fn equal_seeds_equal_parameters() {
        assert_eq!(setup(0, 2), setup(0, 2));
        // generator side does not depend on sharing
        assert_eq!(setup(0, 1).params.layers[0], setup(1, 1).params.layers[0]);
    }

    #[test]
    fn groups_partition_tensors() {
        let m = setup(1, 2);
        for (name, _, _) in m.params.tensors() {
            let g = m.tensor_group(&name);
            if name == "embedding" {
                assert!(g.is_none());
            } else {
                assert!(g.is_some(), "{name}");
            }
        }
        assert_eq!(m.tensor_group("layers.0.fwd.w_ih"), Some(ParamGroup::Shared));
        assert_eq!(m.tensor_group("layers.1.fwd.w_ih"), Some(ParamGroup::Generator));
        assert_eq!(m.tensor_group("layers.2.bwd.b_hh"), Some(ParamGroup::Predictor));
    }

    #[test]
    fn frozen_embedding_excluded_from_trainable() {
        let m = setup(1, 1);
        let c = m.param_count();
        assert_eq!(c.total - c.trainable, c.embedding);
        let rnp = setup(0, 1);
        let r = rnp.param_count();
        // ratio with and without the frozen table
        let with = c.total as f64 / r.total as f64;
        let without = c.trainable as f64 / r.trainable as f64;
        assert!(without < with);
    }
}
