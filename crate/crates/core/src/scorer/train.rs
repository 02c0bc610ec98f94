//! Seeded mini-batch gradient descent for the linear scorers.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{binary_loss, contrastive_loss, multiclass_loss, Gradient};
use super::{FeatureVector, LinearScorer, ScorerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Contrastive,
    Binary,
    Multiclass,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Contrastive => "contrastive",
            Objective::Binary => "binary",
            Objective::Multiclass => "multiclass",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Objective::Contrastive,
            Objective::Binary,
            Objective::Multiclass,
        ]
        .into_iter()
        .find(|o| o.as_str() == s)
        .ok_or_else(|| format!("unknown objective `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingInstance {
    pub gold: FeatureVector,
    pub negatives: Vec<FeatureVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassInstance {
    pub classes: Vec<FeatureVector>,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainingData {
    Ranking(Vec<RankingInstance>),
    Binary(Vec<(FeatureVector, bool)>),
    Multiclass(Vec<ClassInstance>),
}

impl TrainingData {
    pub fn objective(&self) -> Objective {
        match self {
            TrainingData::Ranking(_) => Objective::Contrastive,
            TrainingData::Binary(_) => Objective::Binary,
            TrainingData::Multiclass(_) => Objective::Multiclass,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TrainingData::Ranking(d) => d.len(),
            TrainingData::Binary(d) => d.len(),
            TrainingData::Multiclass(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dim(&self) -> Option<usize> {
        match self {
            TrainingData::Ranking(d) => d.first().map(|i| i.gold.len()),
            TrainingData::Binary(d) => d.first().map(|(f, _)| f.len()),
            TrainingData::Multiclass(d) => d.first().and_then(|i| i.classes.first()).map(Vec::len),
        }
    }

    fn vectors(&self) -> Box<dyn Iterator<Item = &FeatureVector> + '_> {
        match self {
            TrainingData::Ranking(d) => Box::new(
                d.iter()
                    .flat_map(|i| std::iter::once(&i.gold).chain(&i.negatives)),
            ),
            TrainingData::Binary(d) => Box::new(d.iter().map(|(f, _)| f)),
            TrainingData::Multiclass(d) => Box::new(d.iter().flat_map(|i| &i.classes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// `None` uses every negative.
    pub negatives_per_example: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.5,
            epochs: 200,
            batch: 16,
            negatives_per_example: None,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: LinearScorer,
    /// Full-data mean loss after each epoch, all negatives included.
    pub loss_trace: Vec<f64>,
}

fn instance_loss(
    model: &LinearScorer,
    data: &TrainingData,
    i: usize,
    negatives: Option<&[usize]>,
) -> Result<(f64, Gradient), ScorerError> {
    match data {
        TrainingData::Ranking(d) => {
            let inst = &d[i];
            let negs: Vec<&[f64]> = match negatives {
                Some(idx) => idx.iter().map(|&j| inst.negatives[j].as_slice()).collect(),
                None => inst.negatives.iter().map(Vec::as_slice).collect(),
            };
            contrastive_loss(model, &inst.gold, &negs)
        }
        TrainingData::Binary(d) => binary_loss(model, &d[i].0, d[i].1),
        TrainingData::Multiclass(d) => {
            let classes: Vec<&[f64]> = d[i].classes.iter().map(Vec::as_slice).collect();
            multiclass_loss(model, &classes, d[i].gold)
        }
    }
}

/// Mean loss over the data set, every negative included.
pub fn dataset_loss(model: &LinearScorer, data: &TrainingData) -> Result<f64, ScorerError> {
    let n = data.len();
    if n == 0 {
        return Err(ScorerError::EmptyData);
    }
    let mut total = 0.0;
    for i in 0..n {
        total += instance_loss(model, data, i, None)?.0;
    }
    Ok(total / n as f64)
}

pub fn train(data: &TrainingData, config: &TrainConfig) -> Result<TrainOutcome, ScorerError> {
    let dim = data.dim().ok_or(ScorerError::EmptyData)?;
    if let Some(bad) = data.vectors().find(|v| v.len() != dim) {
        return Err(ScorerError::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    if let TrainingData::Ranking(d) = data {
        if d.iter().any(|i| i.negatives.is_empty()) {
            return Err(ScorerError::EmptyNegatives);
        }
    }

    let mut model = LinearScorer::zeros(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = config.batch.max(1);
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(batch).enumerate() {
            let mut grad = Gradient::zeros(dim);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let sampled = match (data, config.negatives_per_example) {
                    (TrainingData::Ranking(d), Some(k)) if k < d[i].negatives.len() => {
                        let mut idx = index::sample(&mut rng, d[i].negatives.len(), k).into_vec();
                        idx.sort_unstable();
                        Some(idx)
                    }
                    _ => None,
                };
                let (loss, g) = instance_loss(&model, data, i, sampled.as_deref())?;
                batch_loss += loss;
                grad.add_scaled(&g, 1.0 / chunk.len() as f64);
            }
            if !batch_loss.is_finite() || grad.weights.iter().any(|g| !g.is_finite()) {
                return Err(ScorerError::NonFinite {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            for (w, g) in model.weights.iter_mut().zip(&grad.weights) {
                *w -= config.lr * g;
            }
            model.bias -= config.lr * grad.bias;
        }
        let loss = dataset_loss(&model, data)?;
        if !loss.is_finite() {
            return Err(ScorerError::NonFinite {
                epoch,
                batch: usize::MAX,
                loss,
            });
        }
        loss_trace.push(loss);
    }
    Ok(TrainOutcome { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gold always carries feature 0; negatives never do.
    fn separable() -> TrainingData {
        let inst = |neg: Vec<Vec<f64>>| RankingInstance {
            gold: vec![1.0, 0.3, 1.0],
            negatives: neg,
        };
        TrainingData::Ranking(vec![
            inst(vec![vec![0.0, 0.9, 1.0], vec![0.0, 0.1, 1.0]]),
            inst(vec![vec![0.0, 0.5, 1.0]]),
            inst(vec![
                vec![0.0, 0.3, 1.0],
                vec![0.0, 0.7, 1.0],
                vec![0.0, 0.0, 1.0],
            ]),
        ])
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let out = train(
            &separable(),
            &TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert_eq!(out.model, LinearScorer::zeros(3));
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn separable_ranking_converges() {
        let out = train(
            &separable(),
            &TrainConfig {
                lr: 0.5,
                epochs: 200,
                batch: 2,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(
            *out.loss_trace.last().unwrap() < 0.01,
            "{:?}",
            out.loss_trace.last()
        );
        assert!(out.loss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = TrainConfig {
            negatives_per_example: Some(1),
            epochs: 20,
            ..TrainConfig::default()
        };
        let a = train(&separable(), &cfg).unwrap();
        let b = train(&separable(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_data_rejected() {
        let err = train(&TrainingData::Binary(vec![]), &TrainConfig::default()).unwrap_err();
        assert_eq!(err, ScorerError::EmptyData);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let data = TrainingData::Binary(vec![(vec![f64::NAN], true)]);
        assert!(matches!(
            train(&data, &TrainConfig::default()),
            Err(ScorerError::NonFinite { .. })
        ));
    }

    #[test]
    fn binary_and_multiclass_learn() {
        let bin = TrainingData::Binary(vec![
            (vec![1.0, 1.0], true),
            (vec![0.0, 1.0], false),
            (vec![1.0, 1.0], true),
        ]);
        let out = train(&bin, &TrainConfig::default()).unwrap();
        assert!(out.model.score(&[1.0, 1.0]).unwrap() > 0.0);
        assert!(out.model.score(&[0.0, 1.0]).unwrap() < 0.0);

        let mc = TrainingData::Multiclass(vec![ClassInstance {
            classes: vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![0.0, 1.0]],
            gold: 1,
        }]);
        let out = train(&mc, &TrainConfig::default()).unwrap();
        assert!(out.loss_trace.last().unwrap() < &0.05);
    }
}
