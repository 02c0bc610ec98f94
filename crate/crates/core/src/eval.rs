//! Metrics (EM, F1 against the incomplete KB, lenient F1), breakdowns, error
//! taxonomy, and the ablation harness.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fmt::Write as _;

use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::dataset::{AnswerVerdict, Category, Generalization, LfVerdict, QAExample};
use crate::discriminator::{Component, Prediction};
use crate::executor::AnswerSet;
use crate::kb::KnowledgeBase;
use crate::pipeline::{run_pipeline, Ablation, Components, PipelineConfig};
use crate::sexpr::canonical_key;

/// 1 iff both NK, or both forms are canonical-equal.
pub fn exact_match(predicted: &LfVerdict, gold: &LfVerdict) -> f64 {
    let hit = match (predicted, gold) {
        (LfVerdict::NoKnowledge, LfVerdict::NoKnowledge) => true,
        (LfVerdict::Form(p), LfVerdict::Form(g)) => canonical_key(p) == canonical_key(g),
        _ => false,
    };
    if hit {
        1.0
    } else {
        0.0
    }
}

fn set_f1(pred: &AnswerSet, gold: &AnswerSet) -> f64 {
    let common = pred.0.intersection(&gold.0).count();
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// NA against NA is 1; NA against a set is 0; otherwise set F1.
pub fn f1_regular(pred: &AnswerVerdict, gold: &AnswerVerdict) -> f64 {
    match (pred, gold) {
        (AnswerVerdict::NoAnswer, AnswerVerdict::NoAnswer) => 1.0,
        (AnswerVerdict::Answers(p), AnswerVerdict::Answers(g)) => set_f1(p, g),
        _ => 0.0,
    }
}

/// Best of F1 against the incomplete-KB gold and the ideal-KB gold.
pub fn f1_lenient(
    pred: &AnswerVerdict,
    gold_incomplete: &AnswerVerdict,
    gold_ideal: Option<&AnswerSet>,
) -> f64 {
    let regular = f1_regular(pred, gold_incomplete);
    match gold_ideal {
        Some(ideal) => regular.max(f1_regular(
            pred,
            &AnswerVerdict::from_execution(ideal.clone()),
        )),
        None => regular,
    }
}

/// Why a prediction's logical form is wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorClass {
    /// NK decided the wrong way: gold form in the pool but NK predicted, or
    /// gold NK but a form predicted.
    Thresholding,
    /// Gold form in the pool but another form ranked first.
    Reranking,
    /// Gold form never reached the pool; the stage that lost it.
    Recall(Component),
    /// A pipeline stage failed for this question.
    Failed(Component),
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorClass::Thresholding => f.write_str("thresholding"),
            ErrorClass::Reranking => f.write_str("reranking"),
            ErrorClass::Recall(c) => write!(f, "recall/{c}"),
            ErrorClass::Failed(c) => write!(f, "failed/{c}"),
        }
    }
}

pub fn classify_error(pred: &Prediction, gold: &QAExample) -> Option<ErrorClass> {
    if let Some(err) = &pred.error {
        return Some(ErrorClass::Failed(err.component));
    }
    if exact_match(&pred.logical_form, &gold.gold_lf) == 1.0 {
        return None;
    }
    if gold.gold_lf.is_nk() {
        return Some(ErrorClass::Thresholding);
    }
    let trace = pred.trace.as_ref();
    if trace.and_then(|t| t.gold_in_pool) == Some(false) {
        let stage = trace
            .and_then(|t| t.recall_stage)
            .unwrap_or(Component::Retriever);
        return Some(ErrorClass::Recall(stage));
    }
    if pred.logical_form.is_nk() {
        Some(ErrorClass::Thresholding)
    } else {
        Some(ErrorClass::Reranking)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub qid: String,
    pub category: Category,
    pub generalization: Option<Generalization>,
    pub em: f64,
    pub f1r: f64,
    pub f1l: f64,
    pub error: Option<ErrorClass>,
}

/// Means over a group of rows.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub count: usize,
    pub em: f64,
    pub f1r: f64,
    pub f1l: f64,
}

impl Metrics {
    fn of<'a>(rows: impl IntoIterator<Item = &'a Row>) -> Self {
        let mut m = Metrics::default();
        for r in rows {
            m.count += 1;
            m.em += r.em;
            m.f1r += r.f1r;
            m.f1l += r.f1l;
        }
        if m.count > 0 {
            let n = m.count as f64;
            m.em /= n;
            m.f1r /= n;
            m.f1l /= n;
        }
        m
    }

    fn to_json(self) -> Json {
        json!({ "count": self.count, "em": self.em, "f1r": self.f1r, "f1l": self.f1l })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall: Metrics,
    pub answerable: Metrics,
    pub unanswerable: Metrics,
    pub by_category: BTreeMap<Category, Metrics>,
    pub by_generalization: BTreeMap<Generalization, Metrics>,
    pub errors: BTreeMap<ErrorClass, usize>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no prediction for qid `{0}`")]
    MissingPrediction(String),
    #[error("prediction for unknown qid `{0}`")]
    UnknownPrediction(String),
    #[error("duplicate qid `{0}`")]
    DuplicateQid(String),
}

/// Scores predictions against golds, matched by qid, in gold order.
pub fn evaluate_dataset(
    preds: &[Prediction],
    golds: &[QAExample],
) -> Result<EvalReport, EvalError> {
    let mut by_qid: HashMap<&str, &Prediction> = HashMap::new();
    for p in preds {
        if by_qid.insert(&p.qid, p).is_some() {
            return Err(EvalError::DuplicateQid(p.qid.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    let mut rows = Vec::with_capacity(golds.len());
    for g in golds {
        if !seen.insert(g.qid.as_str()) {
            return Err(EvalError::DuplicateQid(g.qid.clone()));
        }
        let p = by_qid
            .get(g.qid.as_str())
            .ok_or_else(|| EvalError::MissingPrediction(g.qid.clone()))?;
        rows.push(Row {
            qid: g.qid.clone(),
            category: g.category,
            generalization: g.generalization,
            em: exact_match(&p.logical_form, &g.gold_lf),
            f1r: f1_regular(&p.answer, &g.gold_answer),
            f1l: f1_lenient(&p.answer, &g.gold_answer, g.gold_answer_ideal.as_ref()),
            error: classify_error(p, g),
        });
    }
    if let Some(extra) = preds.iter().find(|p| !seen.contains(p.qid.as_str())) {
        return Err(EvalError::UnknownPrediction(extra.qid.clone()));
    }
    Ok(EvalReport::from_rows(rows))
}

impl EvalReport {
    pub fn from_rows(rows: Vec<Row>) -> Self {
        let by_category = Category::ALL
            .into_iter()
            .filter_map(|c| {
                let m = Metrics::of(rows.iter().filter(|r| r.category == c));
                (m.count > 0).then_some((c, m))
            })
            .collect();
        let mut by_generalization = BTreeMap::new();
        for g in rows
            .iter()
            .filter_map(|r| r.generalization)
            .collect::<BTreeSet<_>>()
        {
            by_generalization.insert(
                g,
                Metrics::of(rows.iter().filter(|r| r.generalization == Some(g))),
            );
        }
        let mut errors = BTreeMap::new();
        for e in rows.iter().filter_map(|r| r.error) {
            *errors.entry(e).or_insert(0) += 1;
        }
        EvalReport {
            overall: Metrics::of(&rows),
            answerable: Metrics::of(rows.iter().filter(|r| r.category == Category::Answerable)),
            unanswerable: Metrics::of(rows.iter().filter(|r| r.category != Category::Answerable)),
            by_category,
            by_generalization,
            errors,
            rows,
        }
    }

    pub fn to_json(&self) -> Json {
        let cats: serde_json::Map<String, Json> = self
            .by_category
            .iter()
            .map(|(c, m)| (c.as_str().to_string(), m.to_json()))
            .collect();
        let gens: serde_json::Map<String, Json> = self
            .by_generalization
            .iter()
            .map(|(g, m)| (g.as_str().to_string(), m.to_json()))
            .collect();
        let errs: serde_json::Map<String, Json> = self
            .errors
            .iter()
            .map(|(e, n)| (e.to_string(), json!(n)))
            .collect();
        let rows: Vec<Json> = self
            .rows
            .iter()
            .map(|r| {
                json!({
                    "qid": r.qid,
                    "category": r.category.as_str(),
                    "em": r.em,
                    "f1r": r.f1r,
                    "f1l": r.f1l,
                    "error": r.error.map(|e| e.to_string()),
                })
            })
            .collect();
        json!({
            "overall": self.overall.to_json(),
            "answerable": self.answerable.to_json(),
            "unanswerable": self.unanswerable.to_json(),
            "by_category": cats,
            "by_generalization": gens,
            "errors": errs,
            "rows": rows,
        })
    }

    /// Fixed-width table: one line per breakdown, then error counts.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>7} {:>7} {:>7}",
            "slice", "n", "EM", "F1(R)", "F1(L)"
        );
        let mut line = |name: &str, m: &Metrics| {
            let _ = writeln!(
                out,
                "{:<24} {:>6} {:>7.2} {:>7.2} {:>7.2}",
                name,
                m.count,
                100.0 * m.em,
                100.0 * m.f1r,
                100.0 * m.f1l
            );
        };
        line("overall", &self.overall);
        line("answerable", &self.answerable);
        line("unanswerable", &self.unanswerable);
        for (c, m) in &self.by_category {
            line(&format!("  {}", c.as_str()), m);
        }
        for (g, m) in &self.by_generalization {
            line(&format!("  {}", g.as_str()), m);
        }
        if !self.errors.is_empty() {
            let _ = writeln!(out, "errors");
            for (e, n) in &self.errors {
                let _ = writeln!(out, "  {:<22} {:>6}", e.to_string(), n);
            }
        }
        out
    }
}

/// Fraction of gold-form questions whose gold reached the pool; `None` when
/// no question has a gold form or traces are missing.
pub fn coverage(preds: &[Prediction]) -> Option<f64> {
    let flags: Vec<bool> = preds
        .iter()
        .filter_map(|p| p.trace.as_ref().and_then(|t| t.gold_in_pool))
        .collect();
    if flags.is_empty() {
        return None;
    }
    Some(flags.iter().filter(|b| **b).count() as f64 / flags.len() as f64)
}

pub fn ablation_name(disabled: &BTreeSet<Ablation>) -> String {
    if disabled.is_empty() {
        "full".to_string()
    } else {
        disabled
            .iter()
            .map(|a| format!("-{a}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub disabled: BTreeSet<Ablation>,
    pub report: EvalReport,
    pub coverage: Option<f64>,
    pub predictions: Vec<Prediction>,
}

/// The full configuration plus each requested combination, keyed by name.
pub fn run_ablation_with(
    dataset: &[QAExample],
    base: &PipelineConfig,
    combos: &[BTreeSet<Ablation>],
    mut runner: impl FnMut(&PipelineConfig) -> Vec<Prediction>,
) -> Result<BTreeMap<String, AblationRun>, EvalError> {
    let mut runs = BTreeMap::new();
    let mut all = vec![BTreeSet::new()];
    all.extend(combos.iter().filter(|c| !c.is_empty()).cloned());
    for disabled in all {
        let name = ablation_name(&disabled);
        if runs.contains_key(&name) {
            continue;
        }
        let cfg = base.clone().with_disabled(disabled.iter().copied());
        let predictions = runner(&cfg);
        let report = evaluate_dataset(&predictions, dataset)?;
        let coverage = coverage(&predictions);
        runs.insert(
            name,
            AblationRun {
                disabled,
                report,
                coverage,
                predictions,
            },
        );
    }
    Ok(runs)
}

pub fn run_ablation(
    dataset: &[QAExample],
    kb: &KnowledgeBase,
    components: Components<'_>,
    base: &PipelineConfig,
    combos: &[BTreeSet<Ablation>],
) -> Result<BTreeMap<String, AblationRun>, EvalError> {
    run_ablation_with(dataset, base, combos, |cfg| {
        run_pipeline(dataset, kb, components, cfg)
    })
}

pub fn ablation_table(runs: &BTreeMap<String, AblationRun>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>6} {:>7} {:>7} {:>7} {:>9}",
        "run", "n", "EM", "F1(R)", "F1(L)", "coverage"
    );
    for (name, run) in runs {
        let m = run.report.overall;
        let cov = run
            .coverage
            .map_or("-".to_string(), |c| format!("{:.2}", 100.0 * c));
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>7.2} {:>7.2} {:>7.2} {:>9}",
            name,
            m.count,
            100.0 * m.em,
            100.0 * m.f1r,
            100.0 * m.f1l,
            cov
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::parse_sexpr;

    fn set(items: &[&str]) -> AnswerVerdict {
        AnswerVerdict::Answers(AnswerSet::from_strs(items))
    }

    fn form(s: &str) -> LfVerdict {
        LfVerdict::Form(parse_sexpr(s).unwrap())
    }

    #[test]
    fn em_examples() {
        assert_eq!(
            exact_match(&LfVerdict::NoKnowledge, &LfVerdict::NoKnowledge),
            1.0
        );
        assert_eq!(
            exact_match(&form("(AND a (JOIN r e))"), &form("(AND (JOIN r e) a)")),
            1.0
        );
        assert_eq!(
            exact_match(&LfVerdict::NoKnowledge, &form("(JOIN r e)")),
            0.0
        );
        assert_eq!(
            exact_match(&form("(JOIN r e)"), &LfVerdict::NoKnowledge),
            0.0
        );
    }

    #[test]
    fn f1_examples() {
        // P = R = 1/2
        assert_eq!(f1_regular(&set(&["a", "b"]), &set(&["b", "c"])), 0.5);
        assert_eq!(
            f1_regular(&AnswerVerdict::NoAnswer, &AnswerVerdict::NoAnswer),
            1.0
        );
        assert_eq!(f1_regular(&set(&["a"]), &AnswerVerdict::NoAnswer), 0.0);
        assert_eq!(f1_regular(&set(&["a"]), &set(&["b"])), 0.0);
    }

    #[test]
    fn lenient_examples() {
        let ideal = AnswerSet::from_strs(["stanford"]);
        let na = AnswerVerdict::NoAnswer;
        assert_eq!(f1_lenient(&set(&["stanford"]), &na, Some(&ideal)), 1.0);
        assert_eq!(f1_lenient(&na, &na, Some(&ideal)), 1.0);
        assert_eq!(f1_lenient(&set(&["palo_alto"]), &na, Some(&ideal)), 0.0);
        assert_eq!(
            f1_lenient(&set(&["a"]), &set(&["a", "b"]), None),
            f1_regular(&set(&["a"]), &set(&["a", "b"]))
        );
    }

    fn pred(qid: &str, lf: LfVerdict, answer: AnswerVerdict) -> Prediction {
        Prediction {
            logical_form: lf,
            answer,
            ..Prediction::nk(qid, None, 0)
        }
    }

    fn gold(qid: &str, lf: &str, answer: &[&str], category: Category) -> QAExample {
        QAExample {
            qid: qid.into(),
            question: "q".into(),
            gold_lf: form(lf),
            gold_answer: set(answer),
            gold_answer_ideal: None,
            category,
            generalization: Some(Generalization::Iid),
        }
    }

    #[test]
    fn report_breakdowns() {
        let golds = vec![
            gold("a", "(JOIN r e)", &["x"], Category::Answerable),
            gold("b", "(JOIN r f)", &["y"], Category::Answerable),
            QAExample {
                qid: "c".into(),
                question: "q".into(),
                gold_lf: LfVerdict::NoKnowledge,
                gold_answer: AnswerVerdict::NoAnswer,
                gold_answer_ideal: Some(AnswerSet::from_strs(["z"])),
                category: Category::MissingRelation,
                generalization: None,
            },
        ];
        let preds = vec![
            pred("c", LfVerdict::NoKnowledge, AnswerVerdict::NoAnswer),
            pred("a", form("(JOIN r e)"), set(&["x"])),
            pred("b", LfVerdict::NoKnowledge, AnswerVerdict::NoAnswer),
        ];
        let r = evaluate_dataset(&preds, &golds).unwrap();
        assert_eq!(r.answerable.em, 0.5);
        assert_eq!(r.unanswerable.em, 1.0);
        assert_eq!(r.overall.count, 3);
        let weighted: f64 = r
            .by_category
            .values()
            .map(|m| m.em * m.count as f64)
            .sum::<f64>()
            / 3.0;
        assert!((weighted - r.overall.em).abs() < 1e-12);
        assert_eq!(r.errors.get(&ErrorClass::Thresholding), Some(&1));
        assert!(r.to_table().contains("missing-relation"));
        assert_eq!(r.to_json()["overall"]["count"], 3);
    }

    #[test]
    fn qid_mismatch_is_an_error() {
        let golds = vec![gold("a", "(JOIN r e)", &["x"], Category::Answerable)];
        let preds = vec![pred("z", LfVerdict::NoKnowledge, AnswerVerdict::NoAnswer)];
        assert_eq!(
            evaluate_dataset(&preds, &golds).unwrap_err(),
            EvalError::MissingPrediction("a".into())
        );
        let preds = vec![
            pred("a", LfVerdict::NoKnowledge, AnswerVerdict::NoAnswer),
            pred("z", LfVerdict::NoKnowledge, AnswerVerdict::NoAnswer),
        ];
        assert_eq!(
            evaluate_dataset(&preds, &golds).unwrap_err(),
            EvalError::UnknownPrediction("z".into())
        );
    }

    #[test]
    fn empty_combos_give_full_only() {
        let golds = vec![gold("a", "(JOIN r e)", &["x"], Category::Answerable)];
        let runs = run_ablation_with(&golds, &PipelineConfig::default(), &[], |_| {
            vec![pred("a", form("(JOIN r e)"), set(&["x"]))]
        })
        .unwrap();
        assert_eq!(runs.keys().collect::<Vec<_>>(), ["full"]);
        assert_eq!(runs["full"].report.overall.em, 1.0);
    }
}
