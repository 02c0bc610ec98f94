//! Scoring of (question, item) pairs: the shared scorer interface, the
//! oracle used in tests, and trainable linear scorers over lexical features.

mod features;
mod loss;
mod threshold;
mod train;

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

pub use features::{
    extract_numbers, featurize, has_comparative_cue, has_count_cue, has_superlative_cue, tokens,
    FeatureVector, ItemFlags, FEATURE_DIM, FEATURIZER_ID,
};
pub use loss::{binary_loss, contrastive_loss, multiclass_loss, Gradient};
pub use threshold::{metric_at, tune_threshold, Threshold, ThresholdPoint};
pub use train::{
    dataset_loss, train, ClassInstance, Objective, RankingInstance, TrainConfig, TrainOutcome,
    TrainingData,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScorerError {
    #[error("feature dimension mismatch: model has {expected}, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("contrastive loss needs at least one negative")]
    EmptyNegatives,
    #[error("gold index {index} out of range for {classes} classes")]
    GoldIndexOutOfRange { index: usize, classes: usize },
    #[error("training data is empty")]
    EmptyData,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("model file line {line}: {message}")]
    ModelFormat { line: usize, message: String },
}

/// Something to score against a question.
#[derive(Debug, Clone, Copy)]
pub struct Item<'a> {
    /// Human-readable text the features look at.
    pub text: &'a str,
    /// Stable identity (canonical LF print, sketch key, or schema id).
    pub key: &'a str,
    pub flags: ItemFlags,
}

impl<'a> Item<'a> {
    pub fn new(text: &'a str, key: &'a str) -> Self {
        Item {
            text,
            key,
            flags: ItemFlags::default(),
        }
    }
}

pub trait Scorer: Send + Sync {
    fn score(&self, question: &str, item: &Item<'_>) -> Result<f64, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, question: &str, item: &Item<'_>) -> Result<f64, ScorerError> {
        (**self).score(question, item)
    }
}

/// Scores 1.0 for keys registered as gold for the question, 0.0 otherwise.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleScorer {
    gold: HashMap<String, BTreeSet<String>>,
}

impl OracleScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, question: &str, key: impl Into<String>) {
        self.gold
            .entry(question.to_string())
            .or_default()
            .insert(key.into());
    }
}

impl Scorer for OracleScorer {
    fn score(&self, question: &str, item: &Item<'_>) -> Result<f64, ScorerError> {
        let hit = self
            .gold
            .get(question)
            .is_some_and(|keys| keys.contains(item.key));
        Ok(if hit { 1.0 } else { 0.0 })
    }
}

/// `w·f + b` over [`featurize`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
}

const MODEL_MAGIC: &str = "kbqa-linear-scorer v1";

impl LinearScorer {
    pub fn zeros(dim: usize) -> Self {
        LinearScorer {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    /// Hand-set weights: lexical overlap plus operator cues, penalizing
    /// operators the question gives no cue for.
    pub fn baseline() -> Self {
        let mut w = vec![0.0; FEATURE_DIM];
        w[0] = 1.0;
        w[1] = 2.0;
        w[2] = 1.0;
        w[4] = 3.0;
        w[5] = 3.0;
        w[6] = 3.0;
        w[7] = 1.0;
        w[11] = -3.0;
        LinearScorer {
            weights: w,
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, features: &[f64]) -> Result<f64, ScorerError> {
        if features.len() != self.weights.len() {
            return Err(ScorerError::DimensionMismatch {
                expected: self.weights.len(),
                found: features.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias)
    }

    /// Flat text: magic line, `key=value` header, then weights and bias.
    /// Extra `#` lines (e.g. a config echo) go first and are ignored on load.
    pub fn to_model_text(&self, objective: Objective, preamble: &[String]) -> String {
        let mut out = String::new();
        for line in preamble {
            out.push_str(&format!("# {line}\n"));
        }
        out.push_str(MODEL_MAGIC);
        out.push('\n');
        out.push_str(&format!(
            "objective={objective}\nfeaturizer={FEATURIZER_ID}\ndimension={}\n",
            self.dim()
        ));
        let weights: Vec<String> = self.weights.iter().map(f64::to_string).collect();
        out.push_str(&format!(
            "weights={}\nbias={}\n",
            weights.join(" "),
            self.bias
        ));
        out
    }

    pub fn from_model_text(text: &str) -> Result<(Self, Objective), ScorerError> {
        let err = |line: usize, message: String| ScorerError::ModelFormat { line, message };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, l)) if l == MODEL_MAGIC => {}
            Some((n, l)) => return Err(err(n, format!("expected `{MODEL_MAGIC}`, found `{l}`"))),
            None => return Err(err(0, "empty model file".into())),
        }
        let mut fields: HashMap<&str, (usize, &str)> = HashMap::new();
        for (n, l) in lines {
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| err(n, format!("expected key=value, found `{l}`")))?;
            if fields.insert(k, (n, v)).is_some() {
                return Err(err(n, format!("duplicate key `{k}`")));
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| err(0, format!("missing `{k}`")))
        };
        let (n, objective) = get("objective")?;
        let objective: Objective = objective.parse().map_err(|m| err(n, m))?;
        let (n, featurizer) = get("featurizer")?;
        if featurizer != FEATURIZER_ID {
            return Err(err(n, format!("unsupported featurizer `{featurizer}`")));
        }
        let (n, dim) = get("dimension")?;
        let dim: usize = dim
            .parse()
            .map_err(|_| err(n, format!("bad dimension `{dim}`")))?;
        let (n, weights) = get("weights")?;
        let weights: Vec<f64> = weights
            .split_whitespace()
            .map(|w| w.parse().map_err(|_| err(n, format!("bad weight `{w}`"))))
            .collect::<Result<_, _>>()?;
        if weights.len() != dim {
            return Err(err(
                n,
                format!("{} weights for dimension {dim}", weights.len()),
            ));
        }
        let (n, bias) = get("bias")?;
        let bias: f64 = bias
            .parse()
            .map_err(|_| err(n, format!("bad bias `{bias}`")))?;
        Ok((LinearScorer { weights, bias }, objective))
    }
}

impl Scorer for LinearScorer {
    fn score(&self, question: &str, item: &Item<'_>) -> Result<f64, ScorerError> {
        LinearScorer::score(self, &featurize(question, item.text, item.flags))
    }
}
