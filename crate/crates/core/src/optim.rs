//! Adam with per-group learning rates.

use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelParams, ParamGroup};

/// Which rate the shared encoder layers (and a trainable embedding) follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SharedLr {
    #[default]
    Generator,
    Predictor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr_gen: f64,
    pub lr_pred: f64,
    pub shared: SharedLr,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the trainable gradient to this global L2 norm when exceeded.
    pub max_grad_norm: Option<f64>,
}

impl AdamConfig {
    pub fn new(lr_gen: f64, lr_pred: f64) -> Self {
        Self { lr_gen, lr_pred, shared: SharedLr::Generator, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_grad_norm: None }
    }

    pub fn rate(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Generator => self.lr_gen,
            ParamGroup::Predictor => self.lr_pred,
            ParamGroup::Shared => match self.shared {
                SharedLr::Generator => self.lr_gen,
                SharedLr::Predictor => self.lr_pred,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: ModelParams,
    v: ModelParams,
    steps: u64,
}

impl Adam {
    pub fn new(model: &Model, config: AdamConfig) -> Self {
        Self { config, m: model.params.zeros_like(), v: model.params.zeros_like(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every trainable tensor.
    pub fn step(&mut self, model: &mut Model, grads: &ModelParams) {
        self.step_filtered(model, grads, |_| true);
    }

    /// One update restricted to the groups accepted by `update`; other
    /// tensors and their moment estimates are left untouched.
    pub fn step_filtered(&mut self, model: &mut Model, grads: &ModelParams, update: impl Fn(ParamGroup) -> bool) {
        let groups: Vec<Option<ParamGroup>> = model
            .params
            .tensors()
            .iter()
            .map(|(name, _, _)| model.tensor_group(name).filter(|g| update(*g)))
            .collect();
        let grad_tensors = grads.tensors();
        let scale = self.clip_scale(&groups, &grad_tensors);
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let params = model.params.tensors_mut();
        let moments = self.m.tensors_mut().into_iter().zip(self.v.tensors_mut());
        for ((((_, p), (_, _, g)), ((_, m), (_, v))), group) in params.into_iter().zip(grad_tensors).zip(moments).zip(&groups) {
            let Some(group) = group else { continue };
            let lr = c.rate(*group);
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
    }

    fn clip_scale(&self, groups: &[Option<ParamGroup>], grads: &[(String, Vec<usize>, &[f64])]) -> f64 {
        let Some(max) = self.config.max_grad_norm else { return 1.0 };
        let norm = groups
            .iter()
            .zip(grads)
            .filter(|(g, _)| g.is_some())
            .flat_map(|(_, (_, _, data))| data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        if norm > max && norm > 0.0 {
            max / norm
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EmbeddingTable, Vocabulary};
    use crate::model::{build_model, ModelConfig};

    fn model(share_depth: usize) -> Model {
        let vocab = Vocabulary::from_tokens(["a", "b", "c"]);
        let cfg = ModelConfig { embedding_dim: 3, hidden_dim: 4, share_depth, ..Default::default() };
        build_model(&cfg, &vocab, &EmbeddingTable::random(vocab.len(), 3, 0.1, 0), 1).unwrap()
    }

    fn ones(model: &Model) -> ModelParams {
        let mut g = model.params.zeros_like();
        for (_, t) in g.tensors_mut() {
            t.fill(1.0);
        }
        g
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut m = model(0);
        let before = m.clone();
        let mut opt = Adam::new(&m, AdamConfig::new(0.01, 0.002));
        let g = ones(&m);
        opt.step(&mut m, &g);
        for ((name, _, new), (_, _, old)) in m.params.tensors().into_iter().zip(before.params.tensors()) {
            let expect = match m.tensor_group(&name) {
                None => 0.0,
                Some(ParamGroup::Predictor) => 0.002,
                Some(_) => 0.01,
            };
            for (a, b) in new.iter().zip(old) {
                assert!(((b - a) - expect).abs() < 1e-9, "{name}");
            }
        }
    }

    #[test]
    fn filtered_step_leaves_other_groups() {
        let mut m = model(1);
        let before = m.clone();
        let mut opt = Adam::new(&m, AdamConfig::new(0.01, 0.01));
        let g = ones(&m);
        opt.step_filtered(&mut m, &g, |grp| grp != ParamGroup::Predictor);
        assert_eq!(m.params.pred_head, before.params.pred_head);
        assert_ne!(m.params.gen_head, before.params.gen_head);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let m = model(0);
        let mut cfg = AdamConfig::new(0.01, 0.01);
        cfg.max_grad_norm = Some(1.0);
        let opt = Adam::new(&m, cfg);
        let g = ones(&m);
        let groups: Vec<_> = g.tensors().iter().map(|(n, _, _)| m.tensor_group(n)).collect();
        let n = m.param_count().trainable as f64;
        assert!((opt.clip_scale(&groups, &g.tensors()) - 1.0 / n.sqrt()).abs() < 1e-12);
    }
}
