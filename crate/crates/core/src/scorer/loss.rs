//! Training objectives with analytic gradients.

use super::{LinearScorer, ScorerError};

/// Gradient with respect to `(weights, bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Gradient {
    pub fn zeros(dim: usize) -> Self {
        Gradient {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += scale * b;
        }
        self.bias += scale * other.bias;
    }
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        return max;
    }
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Softmax cross-entropy of `gold` among `items`.
fn softmax_ce(
    model: &LinearScorer,
    items: &[&[f64]],
    gold: usize,
) -> Result<(f64, Gradient), ScorerError> {
    let scores: Vec<f64> = items
        .iter()
        .map(|f| model.score(f))
        .collect::<Result<_, _>>()?;
    let lse = log_sum_exp(&scores);
    let loss = lse - scores[gold];
    let mut grad = Gradient::zeros(model.dim());
    for (i, (f, s)) in items.iter().zip(&scores).enumerate() {
        let p = (s - lse).exp();
        let coef = p - if i == gold { 1.0 } else { 0.0 };
        for (g, x) in grad.weights.iter_mut().zip(f.iter()) {
            *g += coef * x;
        }
        grad.bias += coef;
    }
    Ok((loss, grad))
}

/// Negative log-softmax of the gold score against gold plus negatives.
pub fn contrastive_loss(
    model: &LinearScorer,
    gold: &[f64],
    negatives: &[&[f64]],
) -> Result<(f64, Gradient), ScorerError> {
    if negatives.is_empty() {
        return Err(ScorerError::EmptyNegatives);
    }
    let items: Vec<&[f64]> = std::iter::once(gold)
        .chain(negatives.iter().copied())
        .collect();
    softmax_ce(model, &items, 0)
}

/// Logistic cross-entropy on `sigmoid(score)`.
pub fn binary_loss(
    model: &LinearScorer,
    features: &[f64],
    label: bool,
) -> Result<(f64, Gradient), ScorerError> {
    let s = model.score(features)?;
    let y = if label { 1.0 } else { 0.0 };
    // softplus(s) - y*s, computed stably
    let softplus = s.max(0.0) + (-s.abs()).exp().ln_1p();
    let loss = softplus - y * s;
    let sigma = 1.0 / (1.0 + (-s).exp());
    let coef = sigma - y;
    Ok((
        loss,
        Gradient {
            weights: features.iter().map(|x| coef * x).collect(),
            bias: coef,
        },
    ))
}

/// Softmax cross-entropy over per-class feature vectors scored by one shared model.
pub fn multiclass_loss(
    model: &LinearScorer,
    class_features: &[&[f64]],
    gold_index: usize,
) -> Result<(f64, Gradient), ScorerError> {
    if gold_index >= class_features.len() {
        return Err(ScorerError::GoldIndexOutOfRange {
            index: gold_index,
            classes: class_features.len(),
        });
    }
    softmax_ce(model, class_features, gold_index)
}
