//! Cross-entropy plus the sparsity/coherence regularizer
//! `Ω(M) = λ1·|‖M‖/l − α| + λ2·Σ_{t=2..l} |m_t − m_{t−1}|`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the coherence sum is scaled per example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coherence {
    /// Raw transition count.
    #[default]
    Sum,
    /// Transition count divided by the unpadded length.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub coherence: Coherence,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, alpha: 0.15, coherence: Coherence::Sum }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("lambda1 and lambda2 must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Sign with `sign(0) = 0`.
#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn log_softmax_row(row: ndarray::ArrayView1<f64>) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - lse).collect()
}

/// Row-wise softmax of `B x C` logits.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let ls = log_softmax_row(row.view());
        row.iter_mut().zip(ls).for_each(|(v, l)| *v = l.exp());
    }
    out
}

/// Mean negative log-likelihood of the true classes.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    assert_eq!(logits.nrows(), labels.len(), "one label per row");
    if labels.is_empty() {
        return 0.0;
    }
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| -log_softmax_row(row)[y])
        .sum();
    total / labels.len() as f64
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_grad(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let loss = cross_entropy(logits, labels);
    let n = labels.len().max(1) as f64;
    let mut grad = softmax(logits);
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
        row /= n;
    }
    (loss, grad)
}

/// Ω for one unpadded mask.
pub fn omega(mask: &[f64], cfg: &ObjectiveConfig) -> Result<f64> {
    let l = mask.len();
    if l == 0 {
        return Err(Error::Config("regularizer undefined for an empty sequence".into()));
    }
    let selected: f64 = mask.iter().sum();
    let sparsity = (selected / l as f64 - cfg.alpha).abs();
    let mut coherence: f64 = mask.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    if cfg.coherence == Coherence::Mean {
        coherence /= l as f64;
    }
    Ok(cfg.lambda1 * sparsity + cfg.lambda2 * coherence)
}

/// Gradient of `omega` with respect to each mask entry.
pub fn omega_grad(mask: &[f64], cfg: &ObjectiveConfig) -> Result<Vec<f64>> {
    let l = mask.len();
    if l == 0 {
        return Err(Error::Config("regularizer undefined for an empty sequence".into()));
    }
    let lf = l as f64;
    let selected: f64 = mask.iter().sum();
    let ds = cfg.lambda1 * sign(selected / lf - cfg.alpha) / lf;
    let mut grad = vec![ds; l];
    let scale = match cfg.coherence {
        Coherence::Sum => cfg.lambda2,
        Coherence::Mean => cfg.lambda2 / lf,
    };
    for t in 1..l {
        let s = scale * sign(mask[t] - mask[t - 1]);
        grad[t] += s;
        grad[t - 1] -= s;
    }
    Ok(grad)
}

/// Batch mean of Ω; row `b` of `mask` contributes its first `lengths[b]` entries.
pub fn sparsity_coherence(mask: &Array2<f64>, lengths: &[usize], cfg: &ObjectiveConfig) -> Result<f64> {
    Ok(sparsity_coherence_grad(mask, lengths, cfg)?.0)
}

/// Batch mean of Ω and its gradient (`B x T`, zero past each length).
pub fn sparsity_coherence_grad(
    mask: &Array2<f64>,
    lengths: &[usize],
    cfg: &ObjectiveConfig,
) -> Result<(f64, Array2<f64>)> {
    if lengths.len() != mask.nrows() {
        return Err(Error::LengthMismatch { what: "lengths vs batch", expected: mask.nrows(), found: lengths.len() });
    }
    let n = lengths.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(mask.raw_dim());
    for (b, &l) in lengths.iter().enumerate() {
        if l > mask.ncols() {
            return Err(Error::LengthMismatch { what: "length vs batch width", expected: mask.ncols(), found: l });
        }
        let row: Vec<f64> = mask.row(b).iter().take(l).copied().collect();
        total += omega(&row, cfg)?;
        for (t, g) in omega_grad(&row, cfg)?.into_iter().enumerate() {
            grad[[b, t]] = g / n;
        }
    }
    Ok((total / n, grad))
}

pub fn total_loss(ce: f64, omega: f64) -> f64 {
    ce + omega
}
