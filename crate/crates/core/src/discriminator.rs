//! Final stage: merge the candidate pools, rank, threshold, execute.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde_json::Value as Json;

use crate::dataset::{AnswerVerdict, LfVerdict};
use crate::executor::{denote, AnswerSet};
use crate::kb::KnowledgeBase;
use crate::retriever::{rank_candidates, CandidateLogicalForm};
use crate::scorer::{Scorer, ScorerError, Threshold};
use crate::sexpr::SExpr;

/// Union by canonical print; a form found by both sources becomes `Both`.
/// Sorted by canonical print; scores are cleared.
pub fn assemble_candidates(
    retrieved: Vec<CandidateLogicalForm>,
    constructed: Vec<CandidateLogicalForm>,
) -> Vec<CandidateLogicalForm> {
    let mut pool: BTreeMap<String, CandidateLogicalForm> = BTreeMap::new();
    for mut c in retrieved.into_iter().chain(constructed) {
        c.score = None;
        match pool.get_mut(&c.key) {
            Some(existing) => existing.source = existing.source.merge(c.source),
            None => {
                pool.insert(c.key.clone(), c);
            }
        }
    }
    pool.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Threshold for NK, execute the top form, empty result is NA.
    Unanswerability,
    /// Answerable-only: first ranked form with a non-empty answer.
    Egc,
    /// Answerable-only without the execution check: always the top form.
    TopRanked,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unanswerability => "unanswerability",
            Mode::Egc => "egc",
            Mode::TopRanked => "top-ranked",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Mode::Unanswerability, Mode::Egc, Mode::TopRanked]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!("unknown mode `{s}` (expected unanswerability, egc or top-ranked)")
            })
    }
}

/// Pipeline stage a failure or a missed gold form is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    EntityLinking,
    Retriever,
    SketchGeneration,
    SchemaRetrieval,
    Integration,
    Discriminator,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::EntityLinking,
        Component::Retriever,
        Component::SketchGeneration,
        Component::SchemaRetrieval,
        Component::Integration,
        Component::Discriminator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::EntityLinking => "entity-linking",
            Component::Retriever => "retriever",
            Component::SketchGeneration => "sketch-generation",
            Component::SchemaRetrieval => "schema-retrieval",
            Component::Integration => "integration",
            Component::Discriminator => "discriminator",
        }
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown component `{s}`"))
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageError {
    pub component: Component,
    pub message: String,
}

/// Diagnostics recorded by the pipeline alongside a prediction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub linked: Vec<String>,
    pub n_retrieved: usize,
    pub n_constructed: usize,
    /// Whether the gold form was in the assembled pool (gold NK: `None`).
    pub gold_in_pool: Option<bool>,
    /// For a gold form missing from the pool, the first stage that lost it.
    pub recall_stage: Option<Component>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub qid: String,
    pub logical_form: LfVerdict,
    pub answer: AnswerVerdict,
    pub top_score: Option<f64>,
    pub n_candidates: usize,
    pub error: Option<StageError>,
    pub trace: Option<Trace>,
}

impl Prediction {
    pub fn nk(qid: &str, top_score: Option<f64>, n_candidates: usize) -> Self {
        Prediction {
            qid: qid.to_string(),
            logical_form: LfVerdict::NoKnowledge,
            answer: AnswerVerdict::NoAnswer,
            top_score,
            n_candidates,
            error: None,
            trace: None,
        }
    }

    pub fn failed(qid: &str, component: Component, message: impl Into<String>) -> Self {
        Prediction {
            error: Some(StageError {
                component,
                message: message.into(),
            }),
            ..Prediction::nk(qid, None, 0)
        }
    }

    /// NK implies NA.
    pub fn is_consistent(&self) -> bool {
        !self.logical_form.is_nk() || self.answer.is_na()
    }

    pub fn to_json_line(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("qid".into(), Json::String(self.qid.clone()));
        let lf = match &self.logical_form {
            LfVerdict::Form(e) => e.to_string(),
            LfVerdict::NoKnowledge => "NK".into(),
        };
        obj.insert("lf".into(), Json::String(lf));
        obj.insert("answer".into(), self.answer.to_json());
        obj.insert("score".into(), score_to_json(self.top_score));
        obj.insert("n_candidates".into(), Json::from(self.n_candidates));
        if let Some(err) = &self.error {
            obj.insert(
                "error".into(),
                serde_json::json!({ "component": err.component.as_str(), "message": err.message }),
            );
        }
        if let Some(t) = &self.trace {
            obj.insert(
                "trace".into(),
                serde_json::json!({
                    "linked": t.linked,
                    "n_retrieved": t.n_retrieved,
                    "n_constructed": t.n_constructed,
                    "gold_in_pool": t.gold_in_pool,
                    "recall_stage": t.recall_stage.map(Component::as_str),
                }),
            );
        }
        Json::Object(obj).to_string()
    }

    pub fn from_json_line(line: &str) -> Result<Self, String> {
        let v: Json = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let obj = v.as_object().ok_or("expected a JSON object")?;
        let field = |k: &str| obj.get(k).ok_or_else(|| format!("missing field `{k}`"));
        let qid = field("qid")?
            .as_str()
            .ok_or("`qid` must be a string")?
            .to_string();
        let logical_form = match field("lf")? {
            Json::String(s) if s == "NK" => LfVerdict::NoKnowledge,
            Json::String(s) => {
                LfVerdict::Form(crate::sexpr::parse_sexpr(s).map_err(|e| e.to_string())?)
            }
            other => return Err(format!("`lf` must be a string, found {other}")),
        };
        let answer = AnswerVerdict::from_json(field("answer")?)?;
        let top_score = score_from_json(obj.get("score").unwrap_or(&Json::Null))?;
        let n_candidates = field("n_candidates")?
            .as_u64()
            .ok_or("`n_candidates` must be a non-negative integer")?
            as usize;
        let error = match obj.get("error") {
            None | Some(Json::Null) => None,
            Some(e) => Some(StageError {
                component: e["component"]
                    .as_str()
                    .ok_or("error.component must be a string")?
                    .parse()?,
                message: e["message"].as_str().unwrap_or_default().to_string(),
            }),
        };
        let trace = match obj.get("trace") {
            None | Some(Json::Null) => None,
            Some(t) => Some(Trace {
                linked: t["linked"]
                    .as_array()
                    .map(|a| {
                        a.iter()
                            .filter_map(|x| x.as_str().map(String::from))
                            .collect()
                    })
                    .unwrap_or_default(),
                n_retrieved: t["n_retrieved"].as_u64().unwrap_or(0) as usize,
                n_constructed: t["n_constructed"].as_u64().unwrap_or(0) as usize,
                gold_in_pool: t["gold_in_pool"].as_bool(),
                recall_stage: match t["recall_stage"].as_str() {
                    Some(s) => Some(s.parse()?),
                    None => None,
                },
            }),
        };
        let p = Prediction {
            qid,
            logical_form,
            answer,
            top_score,
            n_candidates,
            error,
            trace,
        };
        if !p.is_consistent() {
            return Err("NK prediction must carry an NA answer".into());
        }
        Ok(p)
    }
}

/// Non-finite scores (possible with sentinel thresholds) are strings.
fn score_to_json(score: Option<f64>) -> Json {
    match score {
        None => Json::Null,
        Some(s) if s.is_finite() => {
            serde_json::Number::from_f64(s).map_or(Json::Null, Json::Number)
        }
        Some(s) => Json::String(s.to_string()),
    }
}

fn score_from_json(v: &Json) -> Result<Option<f64>, String> {
    match v {
        Json::Null => Ok(None),
        Json::Number(n) => Ok(n.as_f64()),
        Json::String(s) => s.parse().map(Some).map_err(|_| format!("bad score `{s}`")),
        other => Err(format!("`score` must be a number, found {other}")),
    }
}

/// Predictions as JSON lines, `#` header lines skipped.
pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>, crate::dataset::JsonlError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            Prediction::from_json_line(l).map_err(|message| crate::dataset::JsonlError {
                line: i + 1,
                message,
            })
        })
        .collect()
}

/// Scores the whole pool with the discriminator; descending score, ties by canonical print.
pub fn rank_pool(
    question: &str,
    candidates: Vec<CandidateLogicalForm>,
    scorer: &dyn Scorer,
    kb: &KnowledgeBase,
) -> Result<Vec<CandidateLogicalForm>, ScorerError> {
    let n = candidates.len();
    rank_candidates(question, candidates, scorer, kb, n)
}

fn answers_of(expr: &SExpr, kb: &KnowledgeBase) -> AnswerSet {
    AnswerSet::from_values(&denote(expr, kb))
}

/// Verdict for an already-ranked pool.
pub fn decide_ranked(
    qid: &str,
    ranked: &[CandidateLogicalForm],
    threshold: Option<&Threshold>,
    kb: &KnowledgeBase,
    mode: Mode,
) -> Prediction {
    let n = ranked.len();
    let Some(top) = ranked.first() else {
        return Prediction::nk(qid, None, 0);
    };
    let commit = |c: &CandidateLogicalForm, answers: AnswerSet| Prediction {
        qid: qid.to_string(),
        logical_form: LfVerdict::Form(c.expr.clone()),
        answer: AnswerVerdict::from_execution(answers),
        top_score: top.score,
        n_candidates: n,
        error: None,
        trace: None,
    };
    match mode {
        Mode::Unanswerability => {
            let tau = threshold.map_or(f64::NEG_INFINITY, |t| t.tau);
            if top.score.is_none_or(|s| s < tau) {
                return Prediction::nk(qid, top.score, n);
            }
            commit(top, answers_of(&top.expr, kb))
        }
        Mode::TopRanked => commit(top, answers_of(&top.expr, kb)),
        Mode::Egc => {
            for c in ranked {
                let answers = answers_of(&c.expr, kb);
                if !answers.is_empty() {
                    return commit(c, answers);
                }
            }
            commit(top, AnswerSet::default())
        }
    }
}

/// Ranks with the discriminator scorer, then applies [`decide_ranked`].
pub fn decide(
    qid: &str,
    question: &str,
    candidates: Vec<CandidateLogicalForm>,
    scorer: &dyn Scorer,
    threshold: Option<&Threshold>,
    kb: &KnowledgeBase,
    mode: Mode,
) -> Result<Prediction, ScorerError> {
    let ranked = rank_pool(question, candidates, scorer, kb)?;
    Ok(decide_ranked(qid, &ranked, threshold, kb, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{toy_kb, toy_parts};
    use crate::retriever::Source;
    use crate::scorer::OracleScorer;
    use crate::sexpr::{canonical_key, parse_sexpr};

    const GOLD: &str = "(AND university (JOIN (R works_at) c_manning))";
    const Q: &str = "which university does c. manning work at";

    fn cand(s: &str, source: Source) -> CandidateLogicalForm {
        CandidateLogicalForm::new(&parse_sexpr(s).unwrap(), source)
    }

    fn oracle() -> OracleScorer {
        let mut o = OracleScorer::new();
        o.register(Q, canonical_key(&parse_sexpr(GOLD).unwrap()));
        o
    }

    #[test]
    fn assembly_merges_sources() {
        let merged = assemble_candidates(
            vec![
                cand(GOLD, Source::Retrieved),
                cand("(JOIN (R works_at) c_manning)", Source::Retrieved),
            ],
            vec![cand(GOLD, Source::Constructed)],
        );
        assert_eq!(merged.len(), 2);
        let gold = merged
            .iter()
            .find(|c| c.key == canonical_key(&parse_sexpr(GOLD).unwrap()))
            .unwrap();
        assert_eq!(gold.source, Source::Both);
        assert!(assemble_candidates(vec![], vec![]).is_empty());
    }

    #[test]
    fn disjoint_pools_add_up() {
        let r: Vec<_> = (0..10)
            .map(|i| cand(&format!("(JOIN located_in e{i})"), Source::Retrieved))
            .collect();
        let c: Vec<_> = (0..7)
            .map(|i| cand(&format!("(JOIN works_at e{i})"), Source::Constructed))
            .collect();
        assert_eq!(assemble_candidates(r, c).len(), 17);
    }

    #[test]
    fn oracle_picks_gold_and_executes() {
        let kb = toy_kb();
        let pool = vec![
            cand(GOLD, Source::Both),
            cand("(JOIN (R located_in) stanford)", Source::Retrieved),
        ];
        let t = Threshold::fixed(0.5);
        let p = decide(
            "q1",
            Q,
            pool,
            &oracle(),
            Some(&t),
            &kb,
            Mode::Unanswerability,
        )
        .unwrap();
        assert_eq!(
            p.logical_form.key(),
            canonical_key(&parse_sexpr(GOLD).unwrap())
        );
        assert_eq!(
            p.answer,
            AnswerVerdict::Answers(AnswerSet::from_strs(["stanford"]))
        );
        assert_eq!(p.top_score, Some(1.0));
    }

    #[test]
    fn missing_gold_below_threshold_is_nk() {
        let mut parts = toy_parts();
        parts.relations.retain(|r| r.id != "works_at");
        parts.facts.retain(|f| f.relation != "works_at");
        let kb = KnowledgeBase::from_parts(parts).unwrap();
        let pool = vec![cand("(JOIN (R located_in) stanford)", Source::Retrieved)];
        let p = decide(
            "q1",
            Q,
            pool,
            &oracle(),
            Some(&Threshold::fixed(0.5)),
            &kb,
            Mode::Unanswerability,
        )
        .unwrap();
        assert_eq!(
            (p.logical_form, p.answer),
            (LfVerdict::NoKnowledge, AnswerVerdict::NoAnswer)
        );
        let empty = decide("q1", Q, vec![], &oracle(), None, &kb, Mode::Unanswerability).unwrap();
        assert!(empty.logical_form.is_nk());
    }

    #[test]
    fn missing_fact_gives_form_with_na() {
        let mut parts = toy_parts();
        parts.facts.retain(|f| f.relation != "works_at");
        let kb = KnowledgeBase::from_parts(parts).unwrap();
        let pool = vec![cand(GOLD, Source::Constructed)];
        let p = decide(
            "q1",
            Q,
            pool,
            &oracle(),
            Some(&Threshold::fixed(0.5)),
            &kb,
            Mode::Unanswerability,
        )
        .unwrap();
        assert!(!p.logical_form.is_nk());
        assert!(p.answer.is_na());
    }

    #[test]
    fn egc_skips_empty_results() {
        let kb = toy_kb();
        let mut top = cand("(JOIN (R works_at) palo_alto)", Source::Constructed);
        top.score = Some(2.0);
        let mut second = cand(GOLD, Source::Both);
        second.score = Some(1.0);
        let ranked = vec![top, second];
        let egc = decide_ranked("q", &ranked, None, &kb, Mode::Egc);
        assert_eq!(
            egc.answer,
            AnswerVerdict::Answers(AnswerSet::from_strs(["stanford"]))
        );
        let plain = decide_ranked("q", &ranked, None, &kb, Mode::TopRanked);
        assert!(plain.answer.is_na());
    }

    #[test]
    fn prediction_json_roundtrip() {
        let kb = toy_kb();
        let p = decide(
            "q1",
            Q,
            vec![cand(GOLD, Source::Both)],
            &oracle(),
            None,
            &kb,
            Mode::Unanswerability,
        )
        .unwrap();
        let mut p = p;
        p.trace = Some(Trace {
            linked: vec!["c_manning".into()],
            n_retrieved: 3,
            n_constructed: 1,
            gold_in_pool: Some(true),
            recall_stage: None,
        });
        assert_eq!(Prediction::from_json_line(&p.to_json_line()).unwrap(), p);
        let failed = Prediction::failed("q2", Component::Retriever, "boom");
        assert_eq!(
            Prediction::from_json_line(&failed.to_json_line()).unwrap(),
            failed
        );
        let mut inf = Prediction::nk("q3", Some(f64::NEG_INFINITY), 1);
        inf.top_score = Some(f64::INFINITY);
        assert_eq!(
            Prediction::from_json_line(&inf.to_json_line()).unwrap(),
            inf
        );
    }
}
