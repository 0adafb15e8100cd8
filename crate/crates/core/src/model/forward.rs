//! The generator/predictor pipeline and its backward pass.
//!
//! embed -> generator encoder -> generator head -> mask -> apply mask to a
//! fresh embedding of the original tokens -> predictor encoder -> max-pool ->
//! predictor head.

use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gru::BiTrace;
use super::mask::{gumbel_difference, MaskSample};
use super::{Model, ModelParams};
use crate::data::{Batch, MASK_ID, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Gumbel-sampled masks with straight-through sensitivities.
    Train,
    /// Deterministic `p > 0.5` masks.
    Eval,
}

#[derive(Debug, Clone)]
struct StackTrace {
    inputs: Vec<Array3<f64>>,
    layers: Vec<BiTrace>,
}

#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    ids: Array2<usize>,
    pad: Array2<f64>,
    stack: StackTrace,
    top: Array3<f64>,
}

#[derive(Debug, Clone)]
pub struct PredictorTrace {
    ids: Array2<usize>,
    pad: Array2<f64>,
    mask: Array2<f64>,
    embedded: Array3<f64>,
    stack: StackTrace,
    pooled: Array2<f64>,
    argmax: Vec<Option<usize>>,
}

/// Everything the backward pass needs from one training forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub generator: GeneratorTrace,
    pub predictor: PredictorTrace,
    pub mask: MaskSample,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `B x num_classes`.
    pub logits: Array2<f64>,
    pub mask: MaskSample,
    /// Generator-view encoding of the full text, `B x T x H`.
    pub generator_states: Array3<f64>,
    /// Predictor-view encoding of the masked text, `B x T x H`.
    pub predictor_states: Array3<f64>,
}

fn time_major(a: &Array2<f64>) -> Array2<f64> {
    a.t().as_standard_layout().into_owned()
}

fn batch_major(a: &Array3<f64>) -> Array3<f64> {
    a.view().permuted_axes([1, 0, 2]).as_standard_layout().into_owned()
}

/// Coordinate-wise max over the rows of `states` whose `pad` entry is
/// non-zero; the zero vector when there are none.
pub fn pool_max(states: ArrayView2<f64>, pad: &[f64]) -> Array1<f64> {
    let mut pooled = Array1::zeros(states.ncols());
    for k in 0..states.ncols() {
        pooled[k] = states
            .column(k)
            .iter()
            .zip(pad)
            .filter(|(_, &m)| m > 0.0)
            .map(|(&v, _)| v)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
            .unwrap_or(0.0);
    }
    pooled
}

impl Model {
    /// `[T, B, D]` embeddings of `ids` (`B x T`).
    fn embed(&self, ids: &Array2<usize>) -> Array3<f64> {
        let (batch, steps) = ids.dim();
        let d = self.params.embedding.ncols();
        let mut out = Array3::zeros((steps, batch, d));
        for b in 0..batch {
            for t in 0..steps {
                out.slice_mut(ndarray::s![t, b, ..]).assign(&self.params.embedding.row(ids[[b, t]]));
            }
        }
        out
    }

    fn scatter_embedding(&self, ids: &Array2<usize>, dx: &Array3<f64>, scale: Option<&Array2<f64>>, grads: &mut ModelParams) {
        if self.config.freeze_embeddings {
            return;
        }
        let (batch, steps) = ids.dim();
        for b in 0..batch {
            for t in 0..steps {
                let id = ids[[b, t]];
                if id == PAD_ID || id == MASK_ID {
                    continue;
                }
                let s = scale.map_or(1.0, |m| m[[t, b]]);
                if s == 0.0 {
                    continue;
                }
                let mut row = grads.embedding.row_mut(id);
                row.scaled_add(s, &dx.slice(ndarray::s![t, b, ..]));
            }
        }
    }

    fn run_stack(&self, stack: &[usize], x: Array3<f64>, pad: &Array2<f64>, keep: bool) -> (Array3<f64>, Option<StackTrace>) {
        let mut trace = keep.then(|| StackTrace { inputs: Vec::new(), layers: Vec::new() });
        let mut h = x;
        for &i in stack {
            let (out, tr) = self.params.layers[i].forward_traced(&h, pad, keep);
            if let Some(st) = trace.as_mut() {
                st.inputs.push(h);
                st.layers.push(tr.expect("trace requested"));
            }
            h = out;
        }
        (h, trace)
    }

    fn backward_stack(
        &self,
        stack: &[usize],
        trace: &StackTrace,
        pad: &Array2<f64>,
        d_top: Array3<f64>,
        grads: &mut ModelParams,
    ) -> Array3<f64> {
        let mut d = d_top;
        for (pos, &i) in stack.iter().enumerate().rev() {
            d = self.params.layers[i].backward(&trace.inputs[pos], pad, &trace.layers[pos], d.view(), &mut grads.layers[i]);
        }
        d
    }

    fn generator_run(&self, batch: &Batch, keep: bool) -> (Array2<f64>, Array3<f64>, Option<GeneratorTrace>) {
        let pad = time_major(&batch.pad_mask);
        let x = self.embed(&batch.ids);
        let gen_stack = self.generator_layers().to_vec();
        let (top, stack) = self.run_stack(&gen_stack, x, &pad, keep);
        let (steps, b, h) = top.dim();
        let flat = top.view().into_shape_with_order((steps * b, h)).expect("contiguous");
        let logits = self
            .params
            .gen_head
            .forward(flat)
            .into_shape_with_order((steps, b))
            .expect("one logit per token")
            .t()
            .as_standard_layout()
            .into_owned();
        let trace = stack.map(|stack| GeneratorTrace { ids: batch.ids.clone(), pad, stack, top: top.clone() });
        (logits, top, trace)
    }

    /// Pre-sigmoid selection scores `u`, `B x T`, with `p = sigmoid(u)`.
    pub fn generator_logits(&self, batch: &Batch) -> Array2<f64> {
        self.generator_run(batch, false).0
    }

    /// Selection probabilities, exactly 0 at padding.
    pub fn generator_probs(&self, batch: &Batch) -> Array2<f64> {
        let u = self.generator_logits(batch);
        ndarray::Zip::from(&u)
            .and(&batch.pad_mask)
            .map_collect(|&u, &m| m / (1.0 + (-u).exp()))
    }

    /// Generator-view states of the full text, `B x T x H`.
    pub fn encode_generator(&self, batch: &Batch) -> Array3<f64> {
        batch_major(&self.generator_run(batch, false).1)
    }

    pub fn generator_forward(&self, batch: &Batch) -> (Array2<f64>, GeneratorTrace) {
        let (logits, _, trace) = self.generator_run(batch, true);
        (logits, trace.expect("trace requested"))
    }

    /// Accumulates gradients given `dL/du` (`B x T`).
    pub fn generator_backward(&self, trace: &GeneratorTrace, d_logits: &Array2<f64>, grads: &mut ModelParams) {
        let (steps, b, h) = trace.top.dim();
        let d_u = time_major(d_logits).into_shape_with_order((steps * b, 1)).expect("one per token");
        let flat = trace.top.view().into_shape_with_order((steps * b, h)).expect("contiguous");
        let d_top = self
            .params
            .gen_head
            .backward(flat, d_u.view(), &mut grads.gen_head)
            .into_shape_with_order((steps, b, h))
            .expect("reshape");
        let dx = self.backward_stack(self.generator_layers(), &trace.stack, &trace.pad, d_top, grads);
        self.scatter_embedding(&trace.ids, &dx, None, grads);
    }

    fn predictor_run(&self, batch: &Batch, mask: &Array2<f64>, keep: bool) -> (Array2<f64>, Array3<f64>, Option<PredictorTrace>) {
        let pad = time_major(&batch.pad_mask);
        let mask_tm = time_major(mask);
        let embedded = self.embed(&batch.ids);
        let mut z = embedded.clone();
        for ((t, b), &m) in mask_tm.indexed_iter() {
            if m != 1.0 {
                z.slice_mut(ndarray::s![t, b, ..]).mapv_inplace(|v| v * m);
            }
        }
        let pred_stack = self.predictor_layers().to_vec();
        let (top, stack) = self.run_stack(&pred_stack, z, &pad, keep);
        let (steps, batch_n, h) = top.dim();
        let mut pooled = Array2::zeros((batch_n, h));
        let mut argmax = vec![None; batch_n * h];
        for b in 0..batch_n {
            for k in 0..h {
                let mut best: Option<(usize, f64)> = None;
                for t in 0..steps {
                    if pad[[t, b]] > 0.0 {
                        let v = top[[t, b, k]];
                        if best.is_none_or(|(_, bv)| v > bv) {
                            best = Some((t, v));
                        }
                    }
                }
                if let Some((t, v)) = best {
                    pooled[[b, k]] = v;
                    argmax[b * h + k] = Some(t);
                }
            }
        }
        let logits = self.params.pred_head.forward(pooled.view());
        let trace = stack.map(|stack| PredictorTrace {
            ids: batch.ids.clone(),
            pad,
            mask: mask_tm,
            embedded,
            stack,
            pooled,
            argmax,
        });
        (logits, top, trace)
    }

    /// Class logits from the masked text; `mask` is `B x T`.
    pub fn predictor_logits(&self, batch: &Batch, mask: &Array2<f64>) -> Array2<f64> {
        self.predictor_run(batch, mask, false).0
    }

    /// Predictor-view states of the masked text, `B x T x H`.
    pub fn encode_predictor(&self, batch: &Batch, mask: &Array2<f64>) -> Array3<f64> {
        batch_major(&self.predictor_run(batch, mask, false).1)
    }

    /// Plain classifier over the full text (mask forced to all ones).
    pub fn classify_full_text(&self, batch: &Batch) -> Array2<f64> {
        self.predictor_logits(batch, &batch.pad_mask)
    }

    pub fn predictor_forward(&self, batch: &Batch, mask: &Array2<f64>) -> (Array2<f64>, PredictorTrace) {
        let (logits, _, trace) = self.predictor_run(batch, mask, true);
        (logits, trace.expect("trace requested"))
    }

    /// Accumulates gradients given `dL/dlogits`; returns `dL/dmask` (`B x T`).
    pub fn predictor_backward(&self, trace: &PredictorTrace, d_logits: &Array2<f64>, grads: &mut ModelParams) -> Array2<f64> {
        let d_pooled = self.params.pred_head.backward(trace.pooled.view(), d_logits.view(), &mut grads.pred_head);
        let (steps, batch, _) = trace.embedded.dim();
        let h = d_pooled.ncols();
        let mut d_top = Array3::zeros((steps, batch, h));
        for b in 0..batch {
            for k in 0..h {
                if let Some(t) = trace.argmax[b * h + k] {
                    d_top[[t, b, k]] += d_pooled[[b, k]];
                }
            }
        }
        let d_z = self.backward_stack(self.predictor_layers(), &trace.stack, &trace.pad, d_top, grads);
        let mut d_mask = Array2::zeros((batch, steps));
        for t in 0..steps {
            for b in 0..batch {
                let dz = d_z.slice(ndarray::s![t, b, ..]);
                let e = trace.embedded.slice(ndarray::s![t, b, ..]);
                d_mask[[b, t]] = dz.dot(&e);
            }
        }
        self.scatter_embedding(&trace.ids, &d_z, Some(&trace.mask), grads);
        d_mask
    }

    /// Full pipeline. In train mode the Gumbel noise comes from `noise_seed`.
    pub fn forward(&self, batch: &Batch, mode: Mode, noise_seed: u64) -> ForwardOutput {
        let noise = match mode {
            Mode::Train => {
                let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
                Some(gumbel_difference(batch.size(), batch.width(), &mut rng))
            }
            Mode::Eval => None,
        };
        let (u, gen_top, _) = self.generator_run(batch, false);
        let mask = MaskSample::from_logits(&u, &batch.pad_mask, self.config.temperature, mode, noise);
        let (logits, pred_top, _) = self.predictor_run(batch, &mask.hard, false);
        ForwardOutput {
            logits,
            mask,
            generator_states: batch_major(&gen_top),
            predictor_states: batch_major(&pred_top),
        }
    }

    /// Training forward pass with an explicit noise draw (`g1 - g0`, `B x T`).
    pub fn forward_traced(&self, batch: &Batch, noise: Array2<f64>) -> (Array2<f64>, Trace) {
        let (u, generator) = self.generator_forward(batch);
        let mask = MaskSample::from_logits(&u, &batch.pad_mask, self.config.temperature, Mode::Train, Some(noise));
        let (logits, predictor) = self.predictor_forward(batch, &mask.hard);
        (logits, Trace { generator, predictor, mask })
    }

    /// Straight-through backward pass. `d_mask_extra` carries `dL/dmask`
    /// contributions from terms other than the predictor (the regularizer);
    /// the total mask sensitivity reaches the generator through the soft mask.
    pub fn backward(&self, trace: &Trace, d_logits: &Array2<f64>, d_mask_extra: Option<&Array2<f64>>) -> ModelParams {
        let mut grads = self.params.zeros_like();
        let mut d_mask = self.predictor_backward(&trace.predictor, d_logits, &mut grads);
        if let Some(extra) = d_mask_extra {
            d_mask += extra;
        }
        let d_u = d_mask * trace.mask.soft_slope();
        self.generator_backward(&trace.generator, &d_u, &mut grads);
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EmbeddingTable, Vocabulary};
    use crate::model::{build_model, ModelConfig};
    use ndarray::{array, Axis};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn model(share_depth: usize) -> Model {
        let vocab = Vocabulary::from_tokens(["a", "b", "c", "d"]);
        let cfg = ModelConfig { embedding_dim: 4, hidden_dim: 6, share_depth, ..Default::default() };
        let emb = EmbeddingTable::random(vocab.len(), 4, 0.5, 9);
        build_model(&cfg, &vocab, &emb, 4).unwrap()
    }

    fn batch() -> Batch {
        Batch::from_sequences(&[vec![2, 3, 4, 5], vec![5, 4, 0, 0], vec![3, 3, 2, 0]], &[1, 0, 1])
    }

    #[test]
    fn zero_head_gives_half() {
        let mut m = model(1);
        m.params.gen_head.weight.fill(0.0);
        m.params.gen_head.bias.fill(0.0);
        let p = m.generator_probs(&batch());
        for ((b, t), &v) in p.indexed_iter() {
            let expect = if batch().pad_mask[[b, t]] > 0.0 { 0.5 } else { 0.0 };
            assert_eq!(v, expect);
        }
    }

    #[test]
    fn full_mask_equals_plain_classifier() {
        let m = model(0);
        let b = batch();
        let mut forced = m.predictor_logits(&b, &b.pad_mask);
        forced -= &m.classify_full_text(&b);
        assert!(forced.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unified_views_agree_on_full_text() {
        let m = model(1);
        let b = batch();
        let gen = m.encode_generator(&b);
        let pred = m.encode_predictor(&b, &b.pad_mask);
        assert_eq!(gen, pred);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = model(0);
        let b = batch();
        let x = m.forward(&b, Mode::Train, 17);
        let y = m.forward(&b, Mode::Train, 17);
        assert_eq!(x.logits, y.logits);
        assert_eq!(x.mask, y.mask);
    }

    #[test]
    fn batch_order_does_not_change_rows() {
        let m = model(0);
        let b = batch();
        let swapped = Batch::from_sequences(&[vec![3, 3, 2, 0], vec![2, 3, 4, 5], vec![5, 4, 0, 0]], &[1, 1, 0]);
        let x = m.encode_generator(&b);
        let y = m.encode_generator(&swapped);
        assert_eq!(x.index_axis(Axis(0), 0), y.index_axis(Axis(0), 1));
        assert_eq!(x.index_axis(Axis(0), 2), y.index_axis(Axis(0), 0));
    }

    #[test]
    fn single_real_token_pools_to_itself() {
        let states = array![[0.3, -2.0], [9.0, 9.0]];
        assert_eq!(pool_max(states.view(), &[1.0, 0.0]), array![0.3, -2.0]);
        assert_eq!(pool_max(states.view(), &[0.0, 0.0]), array![0.0, 0.0]);
    }

    #[test]
    fn duplicating_the_max_token_is_idempotent() {
        let states = array![[1.0, 0.0], [0.5, 2.0]];
        let dup = array![[1.0, 0.0], [0.5, 2.0], [1.0, 0.0]];
        assert_eq!(pool_max(states.view(), &[1.0, 1.0]), pool_max(dup.view(), &[1.0, 1.0, 1.0]));
    }

    #[test]
    fn no_real_tokens_does_not_crash() {
        let m = model(1);
        let b = Batch::from_sequences(&[vec![0, 0]], &[0]);
        let out = m.forward(&b, Mode::Eval, 0);
        assert!(out.logits.iter().all(|v| v.is_finite()));
    }

    /// Loss along the straight-through surrogate `hard0 + soft(θ) - soft0`
    /// at a fixed noise draw: equal to the training loss at θ0 and with the
    /// straight-through gradient as its true gradient.
    fn surrogate_loss(m: &Model, b: &Batch, noise: &Array2<f64>, hard0: &Array2<f64>, soft0: &Array2<f64>) -> f64 {
        let u = m.generator_logits(b);
        let tau = m.config.temperature;
        let soft = ndarray::Zip::from(&u).and(noise).and(&b.pad_mask).map_collect(|&u, &g, &p| p / (1.0 + (-(u + g) / tau).exp()));
        let mask = hard0 + &soft - soft0;
        let logits = m.predictor_logits(b, &mask);
        let ce = crate::objective::cross_entropy(&logits, &b.labels);
        let omega = crate::objective::sparsity_coherence(&mask, &b.lengths, &objective_cfg()).unwrap();
        ce + omega
    }

    fn objective_cfg() -> crate::objective::ObjectiveConfig {
        crate::objective::ObjectiveConfig { lambda1: 0.7, lambda2: 0.3, alpha: 0.37, ..Default::default() }
    }

    /// Zero biases make every deselected prefix token sit at the exact zero
    /// state, so the max-pool ties there; random biases move the check point
    /// off that kink.
    fn randomize_biases(m: &mut Model, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut m.params.layers {
            for g in [&mut layer.fwd, &mut layer.bwd] {
                g.b_ih.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
                g.b_hh.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
            }
        }
    }

    fn straight_through_check(share_depth: usize, freeze: bool) {
        let vocab = Vocabulary::from_tokens(["a", "b", "c", "d", "e"]);
        let cfg = ModelConfig {
            embedding_dim: 4,
            hidden_dim: 6,
            share_depth,
            temperature: 0.8,
            freeze_embeddings: freeze,
            ..Default::default()
        };
        let emb = EmbeddingTable::random(vocab.len(), 4, 0.8, 3);
        let mut m = build_model(&cfg, &vocab, &emb, 5).unwrap();
        randomize_biases(&mut m, 6);
        let b = Batch::from_sequences(&[vec![2, 3, 4, 5, 6], vec![6, 2, 2, 4, 0]], &[1, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise = gumbel_difference(2, 5, &mut rng);
        let (logits, trace) = m.forward_traced(&b, noise.clone());
        let (_, d_logits) = crate::objective::cross_entropy_grad(&logits, &b.labels);
        let (_, d_mask) = crate::objective::sparsity_coherence_grad(&trace.mask.hard, &b.lengths, &objective_cfg()).unwrap();
        let grads = m.backward(&trace, &d_logits, Some(&d_mask));
        let hard0 = trace.mask.hard.clone();
        let soft0 = trace.mask.soft.clone();
        assert!(hard0.iter().any(|&v| v == 1.0) && hard0.iter().zip(&b.pad_mask).any(|(&h, &p)| h == 0.0 && p == 1.0));

        let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, _, d)| (n, d.to_vec())).collect();
        let h = 1e-6;
        let mut checked = 0;
        for (ti, (name, an)) in analytic.iter().enumerate() {
            if m.tensor_group(name).is_none() {
                assert!(an.iter().all(|&g| g == 0.0), "{name} frozen but has gradient");
                continue;
            }
            for i in 0..an.len() {
                let orig = m.params.tensors()[ti].2[i];
                m.params.tensors_mut()[ti].1[i] = orig + h;
                let plus = surrogate_loss(&m, &b, &noise, &hard0, &soft0);
                m.params.tensors_mut()[ti].1[i] = orig - h;
                let minus = surrogate_loss(&m, &b, &noise, &hard0, &soft0);
                m.params.tensors_mut()[ti].1[i] = orig;
                let fd = (plus - minus) / (2.0 * h);
                let err = (fd - an[i]).abs();
                assert!(err <= 1e-3 * fd.abs().max(an[i].abs()) + 1e-7, "{name}[{i}]: fd {fd} analytic {}", an[i]);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn straight_through_gradient_separate_encoders() {
        straight_through_check(0, true);
    }

    #[test]
    fn straight_through_gradient_shared_encoder() {
        straight_through_check(1, true);
    }

    #[test]
    fn straight_through_gradient_trainable_embeddings() {
        straight_through_check(1, false);
    }

    #[test]
    fn straight_through_gradient_partial_sharing() {
        straight_through_check_layers(2, 1);
    }

    fn straight_through_check_layers(num_layers: usize, share_depth: usize) {
        let vocab = Vocabulary::from_tokens(["a", "b", "c", "d", "e"]);
        let cfg = ModelConfig { embedding_dim: 4, hidden_dim: 6, num_layers, share_depth, ..Default::default() };
        let emb = EmbeddingTable::random(vocab.len(), 4, 0.8, 3);
        let mut m = build_model(&cfg, &vocab, &emb, 8).unwrap();
        randomize_biases(&mut m, 9);
        let b = Batch::from_sequences(&[vec![2, 3, 4, 5, 6], vec![6, 2, 2, 0, 0]], &[0, 1]);
        let noise = gumbel_difference(2, 5, &mut ChaCha8Rng::seed_from_u64(4));
        let (logits, trace) = m.forward_traced(&b, noise.clone());
        let (_, d_logits) = crate::objective::cross_entropy_grad(&logits, &b.labels);
        let (_, d_mask) = crate::objective::sparsity_coherence_grad(&trace.mask.hard, &b.lengths, &objective_cfg()).unwrap();
        let grads = m.backward(&trace, &d_logits, Some(&d_mask));
        let (hard0, soft0) = (trace.mask.hard.clone(), trace.mask.soft.clone());
        let an: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, _, d)| d.to_vec()).collect();
        let h = 1e-6;
        for (ti, an) in an.iter().enumerate().skip(1) {
            for i in (0..an.len()).step_by(3) {
                let orig = m.params.tensors()[ti].2[i];
                m.params.tensors_mut()[ti].1[i] = orig + h;
                let plus = surrogate_loss(&m, &b, &noise, &hard0, &soft0);
                m.params.tensors_mut()[ti].1[i] = orig - h;
                let minus = surrogate_loss(&m, &b, &noise, &hard0, &soft0);
                m.params.tensors_mut()[ti].1[i] = orig;
                let fd = (plus - minus) / (2.0 * h);
                assert!((fd - an[i]).abs() <= 1e-3 * fd.abs().max(an[i].abs()) + 1e-7, "tensor {ti}[{i}]: {fd} vs {}", an[i]);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn pooling_ignores_token_order(
            rows in proptest::collection::vec((proptest::collection::vec(-5.0f64..5.0, 3), proptest::bool::ANY), 1..10),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let pool = |rows: &[(Vec<f64>, bool)]| {
                let flat: Vec<f64> = rows.iter().flat_map(|(v, _)| v.clone()).collect();
                let states = ndarray::Array2::from_shape_vec((rows.len(), 3), flat).unwrap();
                let pad: Vec<f64> = rows.iter().map(|&(_, real)| real as u8 as f64).collect();
                pool_max(states.view(), &pad)
            };
            proptest::prop_assert_eq!(pool(&rows), pool(&shuffled));
        }
    }
}
