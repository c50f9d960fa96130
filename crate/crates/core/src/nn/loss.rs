use serde::{Deserialize, Serialize};

/// Per-sample loss on softmax outputs.
///
/// * `CrossEntropy`: `-ln p_y`.
/// * `MeanAbsoluteError`: `Σ_i |p_i - y_i|` against the one-hot target,
///   which equals `2 (1 - p_y)` for a probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    MeanAbsoluteError,
}

impl LossKind {
    /// Loss of one row given its logits and probabilities.
    pub fn value(self, logits: &[f64], probs: &[f64], label: usize) -> f64 {
        match self {
            LossKind::CrossEntropy => {
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
                lse - logits[label]
            }
            LossKind::MeanAbsoluteError => probs
                .iter()
                .enumerate()
                .map(|(i, p)| (p - if i == label { 1.0 } else { 0.0 }).abs())
                .sum(),
        }
    }

    /// Writes `scale * dL/dlogits` for one row into `out`.
    pub fn logit_grad(self, probs: &[f64], label: usize, scale: f64, out: &mut [f64]) {
        match self {
            LossKind::CrossEntropy => {
                for (i, (o, p)) in out.iter_mut().zip(probs).enumerate() {
                    *o = scale * (p - if i == label { 1.0 } else { 0.0 });
                }
            }
            LossKind::MeanAbsoluteError => {
                // d/dz_j of 2(1 - p_y) = -2 p_y (δ_jy - p_j)
                let py = probs[label];
                for (i, (o, p)) in out.iter_mut().zip(probs).enumerate() {
                    *o = scale * -2.0 * py * (if i == label { 1.0 } else { 0.0 } - p);
                }
            }
        }
    }
}

pub(crate) fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, z) in out.iter_mut().zip(logits) {
        *o = (z - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}
