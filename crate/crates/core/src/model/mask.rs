//! Binary mask sampling with a Gumbel-softmax straight-through relaxation.

use ndarray::Array2;
use rand::Rng;

use super::Mode;
use crate::error::{Error, Result};

/// Per-token selection for a batch, all arrays `B x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSample {
    /// Bernoulli selection probabilities (0 at padding).
    pub probs: Array2<f64>,
    /// The binary mask consumed on the forward pass.
    pub hard: Array2<f64>,
    /// Relaxed mask at the same noise draw; its sensitivities are the ones
    /// propagated to the generator.
    pub soft: Array2<f64>,
    pub temperature: f64,
    /// `g_select - g_reject` per token, when sampled.
    pub noise: Option<Array2<f64>>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gumbel(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    -(-u.ln()).ln()
}

/// Difference of two independent standard Gumbel draws per entry.
pub fn gumbel_difference(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || gumbel(rng) - gumbel(rng))
}

impl MaskSample {
    /// Builds the sample from generator logits `u` (with `p = sigmoid(u)`).
    ///
    /// Train mode: the two-category relaxed softmax reduces to
    /// `soft = sigmoid((u + g1 - g0) / tau)` and the hard mask is its argmax.
    /// Eval mode: `hard = [p > 0.5]`, `soft = p`, no noise.
    pub(crate) fn from_logits(
        logits: &Array2<f64>,
        pad: &Array2<f64>,
        temperature: f64,
        mode: Mode,
        noise: Option<Array2<f64>>,
    ) -> Self {
        let probs = ndarray::Zip::from(logits).and(pad).map_collect(|&u, &m| m * sigmoid(u));
        match mode {
            Mode::Eval => {
                let hard = probs.mapv(|p| if p > 0.5 { 1.0 } else { 0.0 });
                Self { soft: probs.clone(), probs, hard, temperature, noise: None }
            }
            Mode::Train => {
                let noise = noise.expect("train mode needs noise");
                let score = logits + &noise;
                let soft = ndarray::Zip::from(&score)
                    .and(pad)
                    .map_collect(|&s, &m| m * sigmoid(s / temperature));
                let hard = ndarray::Zip::from(&score)
                    .and(pad)
                    .map_collect(|&s, &m| if m > 0.0 && s > 0.0 { 1.0 } else { 0.0 });
                Self { probs, hard, soft, temperature, noise: Some(noise) }
            }
        }
    }

    /// `d soft / d u` at the sampled noise; zero at padding.
    pub(crate) fn soft_slope(&self) -> Array2<f64> {
        let tau = self.temperature;
        self.soft.mapv(|s| s * (1.0 - s) / tau)
    }
}

/// Samples a mask from selection probabilities.
pub fn sample_mask(
    probs: &Array2<f64>,
    pad: &Array2<f64>,
    temperature: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> MaskSample {
    assert!(temperature > 0.0, "temperature must be positive");
    let logits = probs.mapv(|p| p.ln() - (1.0 - p).ln());
    let noise = match mode {
        Mode::Train => Some(gumbel_difference(probs.nrows(), probs.ncols(), rng)),
        Mode::Eval => None,
    };
    let mut sample = MaskSample::from_logits(&logits, pad, temperature, mode, noise);
    sample.probs = probs * pad;
    if mode == Mode::Eval {
        sample.hard = sample.probs.mapv(|p| if p > 0.5 { 1.0 } else { 0.0 });
        sample.soft = sample.probs.clone();
    }
    sample
}

/// Scales each row of an `l x d` embedded sequence by its mask value.
pub fn apply_mask(embedded: &Array2<f64>, mask: &[f64]) -> Result<Array2<f64>> {
    if mask.len() != embedded.nrows() {
        return Err(Error::LengthMismatch {
            what: "mask vs sequence",
            expected: embedded.nrows(),
            found: mask.len(),
        });
    }
    let mut out = embedded.clone();
    for (mut row, &m) in out.rows_mut().into_iter().zip(mask) {
        if m == 0.0 {
            row.fill(0.0);
        } else if m != 1.0 {
            row *= m;
        }
    }
    Ok(out)
}
