//! Turning a gold-annotated dataset into training data for each scorer, and
//! dev predictions into threshold-tuning points.
//!
//! Only questions with a gold logical form contribute training instances;
//! NK-gold questions matter for threshold tuning alone.

use crate::dataset::{LfVerdict, QAExample};
use crate::discriminator::Prediction;
use crate::eval::exact_match;
use crate::kb::KnowledgeBase;
use crate::linker::EntityLinker;
use crate::pipeline::Pipeline;
use crate::retriever::{
    enumerate_paths, lf_surface_text, paths_to_logical_forms, CandidateLogicalForm,
    RetrieverConfig, Source,
};
use crate::scorer::{
    featurize, ClassInstance, ItemFlags, RankingInstance, ThresholdPoint, TrainingData,
};
use crate::sexpr::{canonical_key, extract_sketch, SExpr, SketchInventory};

fn golds(examples: &[QAExample]) -> impl Iterator<Item = (&QAExample, &SExpr)> {
    examples
        .iter()
        .filter_map(|e| e.gold_lf.form().map(|g| (e, g)))
}

fn lf_features(question: &str, c: &CandidateLogicalForm, kb: &KnowledgeBase) -> Vec<f64> {
    featurize(question, &lf_surface_text(&c.expr, kb), c.source.flags())
}

/// Gold versus every other enumerated path form, for questions whose gold
/// form is reachable by traversal.
pub fn retriever_data(
    examples: &[QAExample],
    kb: &KnowledgeBase,
    config: &RetrieverConfig,
) -> TrainingData {
    let linker = EntityLinker::new(kb);
    let mut out = Vec::new();
    for (ex, gold) in golds(examples) {
        let linked = linker.link(&ex.question);
        let paths = enumerate_paths(kb, &linked, config.max_hops, config.max_paths);
        let forms = paths_to_logical_forms(&paths, kb);
        let key = canonical_key(gold);
        let Some(g) = forms.iter().find(|c| c.key == key) else {
            continue;
        };
        let negatives: Vec<Vec<f64>> = forms
            .iter()
            .filter(|c| c.key != key)
            .map(|c| lf_features(&ex.question, c, kb))
            .collect();
        if !negatives.is_empty() {
            out.push(RankingInstance {
                gold: lf_features(&ex.question, g, kb),
                negatives,
            });
        }
    }
    TrainingData::Ranking(out)
}

/// Inventory classification with the gold form's sketch as the label.
pub fn sketch_data(examples: &[QAExample], inventory: &SketchInventory) -> TrainingData {
    let mut out = Vec::new();
    for (ex, gold) in golds(examples) {
        let Some(gold_index) = inventory.position(&extract_sketch(gold).key()) else {
            continue;
        };
        let classes = inventory
            .entries()
            .iter()
            .map(|e| featurize(&ex.question, &e.key, ItemFlags::default()))
            .collect();
        out.push(ClassInstance {
            classes,
            gold: gold_index,
        });
    }
    TrainingData::Multiclass(out)
}

/// Per-element relevance: every type of the KB, positive iff in the gold form.
pub fn type_data(examples: &[QAExample], kb: &KnowledgeBase) -> TrainingData {
    let mut out = Vec::new();
    for (ex, gold) in golds(examples) {
        let classes = gold.classes();
        for t in kb.types() {
            out.push((
                featurize(&ex.question, &t.label, ItemFlags::default()),
                classes.contains(&t.id.as_str()),
            ));
        }
    }
    TrainingData::Binary(out)
}

pub fn relation_data(examples: &[QAExample], kb: &KnowledgeBase) -> TrainingData {
    let mut out = Vec::new();
    for (ex, gold) in golds(examples) {
        let rels = gold.relations();
        for r in kb.relations() {
            out.push((
                featurize(&ex.question, &r.label, ItemFlags::default()),
                rels.contains(&r.id.as_str()),
            ));
        }
    }
    TrainingData::Binary(out)
}

/// Gold versus the rest of the upstream pool; a gold form missing from the
/// pool is added as a constructed candidate.
pub fn discriminator_data(
    examples: &[QAExample],
    kb: &KnowledgeBase,
    upstream: &Pipeline<'_>,
) -> TrainingData {
    let mut out = Vec::new();
    for (ex, gold) in golds(examples) {
        let Ok(pool) = upstream.candidate_pool(&ex.question) else {
            continue;
        };
        let key = canonical_key(gold);
        let gold_cand = pool
            .iter()
            .find(|c| c.key == key)
            .cloned()
            .unwrap_or_else(|| CandidateLogicalForm::new(gold, Source::Constructed));
        let negatives: Vec<Vec<f64>> = pool
            .iter()
            .filter(|c| c.key != key)
            .map(|c| lf_features(&ex.question, c, kb))
            .collect();
        if !negatives.is_empty() {
            out.push(RankingInstance {
                gold: lf_features(&ex.question, &gold_cand, kb),
                negatives,
            });
        }
    }
    TrainingData::Ranking(out)
}

/// EM credit of answering versus abstaining, from dev predictions made with
/// no threshold (every non-empty pool answered). Paired by position.
pub fn threshold_points(examples: &[QAExample], preds: &[Prediction]) -> Vec<ThresholdPoint> {
    examples
        .iter()
        .zip(preds)
        .map(|(ex, p)| ThresholdPoint {
            score: if p.logical_form.is_nk() {
                None
            } else {
                p.top_score
            },
            gain_answer: exact_match(&p.logical_form, &ex.gold_lf),
            gain_abstain: exact_match(&LfVerdict::NoKnowledge, &ex.gold_lf),
        })
        .collect()
}
