//! Path-traversal candidates: realized 1- and 2-hop paths from the linked
//! entities, turned into logical forms and ranked.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::executor::{check_validity, denote};
use crate::kb::KnowledgeBase;
use crate::linker::LinkedEntities;
use crate::scorer::{Item, ItemFlags, Scorer, ScorerError};
use crate::sexpr::{canonical_key, canonicalize, print_literal, RelRef, SExpr};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Retrieved,
    Constructed,
    Both,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Retrieved => "retrieved",
            Source::Constructed => "constructed",
            Source::Both => "both",
        }
    }

    pub fn flags(self) -> ItemFlags {
        ItemFlags {
            retrieved: matches!(self, Source::Retrieved | Source::Both),
            constructed: matches!(self, Source::Constructed | Source::Both),
        }
    }

    pub fn merge(self, other: Source) -> Source {
        if self == other {
            self
        } else {
            Source::Both
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A canonical logical form that passed the typing check on the KB it was
/// built against.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateLogicalForm {
    pub expr: SExpr,
    /// Canonical printed form; identity for dedup and tie-breaks.
    pub key: String,
    pub source: Source,
    pub score: Option<f64>,
}

impl CandidateLogicalForm {
    /// Canonicalizes `expr`; the caller vouches for validity.
    pub fn new(expr: &SExpr, source: Source) -> Self {
        let expr = canonicalize(expr);
        let key = expr.to_string();
        CandidateLogicalForm {
            expr,
            key,
            source,
            score: None,
        }
    }
}

/// Orders by descending score, then canonical print.
pub fn rank_order(a: &CandidateLogicalForm, b: &CandidateLogicalForm) -> std::cmp::Ordering {
    let sa = a.score.unwrap_or(f64::NEG_INFINITY);
    let sb = b.score.unwrap_or(f64::NEG_INFINITY);
    sb.total_cmp(&sa).then_with(|| a.key.cmp(&b.key))
}

/// Traversal direction of one hop: along a fact (subject to object) or against it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Step {
    pub relation: String,
    pub direction: Direction,
}

impl Step {
    fn new(relation: &str, direction: Direction) -> Self {
        Step {
            relation: relation.to_string(),
            direction,
        }
    }

    /// Following a fact forward is `(JOIN (R r) x)`; against it, `(JOIN r x)`.
    fn rel_ref(&self) -> RelRef {
        match self.direction {
            Direction::Forward => RelRef::Inverse(self.relation.clone()),
            Direction::Inverse => RelRef::Forward(self.relation.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KbPath {
    pub anchor: String,
    pub steps: Vec<Step>,
    /// A second linked entity constraining the same terminal in one hop.
    pub second: Option<(String, Step)>,
}

impl KbPath {
    /// The path's join chain (conjoined with the second anchor's hop, if any).
    pub fn chain(&self) -> SExpr {
        let single = |anchor: &str, steps: &[Step]| {
            steps.iter().fold(SExpr::entity(anchor), |acc, s| {
                SExpr::join(s.rel_ref(), acc)
            })
        };
        let main = single(&self.anchor, &self.steps);
        match &self.second {
            Some((e, step)) => SExpr::and(main, single(e, std::slice::from_ref(step))),
            None => main,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrieverConfig {
    pub top_k: usize,
    pub max_paths: usize,
    pub max_hops: usize,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            top_k: 10,
            max_paths: 2000,
            max_hops: 2,
        }
    }
}

/// Realized one-hop moves from a node: step → reached values.
fn hops_from(kb: &KnowledgeBase, node: &str) -> BTreeMap<Step, BTreeSet<Value>> {
    let mut out: BTreeMap<Step, BTreeSet<Value>> = BTreeMap::new();
    for f in kb.facts_from(node) {
        out.entry(Step::new(&f.relation, Direction::Forward))
            .or_default()
            .insert(f.object.clone());
    }
    for f in kb.facts_to(&Value::Entity(node.to_string())) {
        out.entry(Step::new(&f.relation, Direction::Inverse))
            .or_default()
            .insert(Value::Entity(f.subject.clone()));
    }
    out
}

/// All realized paths of at most `max_hops` (1 or 2) from each linked
/// entity; for exactly two linked entities, also one-hop pairs meeting at a
/// shared node. Sorted, then truncated to `max_paths`.
pub fn enumerate_paths(
    kb: &KnowledgeBase,
    linked: &LinkedEntities,
    max_hops: usize,
    max_paths: usize,
) -> Vec<KbPath> {
    let anchors = linked.entity_ids();
    let mut paths: BTreeSet<KbPath> = BTreeSet::new();
    let mut first_hops: BTreeMap<&str, BTreeMap<Step, BTreeSet<Value>>> = BTreeMap::new();
    for anchor in &anchors {
        if kb.entity(anchor).is_none() || max_hops == 0 {
            continue;
        }
        let hops = hops_from(kb, anchor);
        for (step, reached) in &hops {
            paths.insert(KbPath {
                anchor: anchor.clone(),
                steps: vec![step.clone()],
                second: None,
            });
            if max_hops < 2 {
                continue;
            }
            // intermediate nodes must be entities
            for mid in reached.iter().filter_map(Value::as_entity) {
                for next in hops_from(kb, mid).into_keys() {
                    paths.insert(KbPath {
                        anchor: anchor.clone(),
                        steps: vec![step.clone(), next],
                        second: None,
                    });
                }
            }
        }
        first_hops.insert(anchor, hops);
    }
    if let [a, b] = anchors.as_slice() {
        if let (Some(ha), Some(hb)) = (first_hops.get(a.as_str()), first_hops.get(b.as_str())) {
            for (sa, ra) in ha {
                for (sb, rb) in hb {
                    if !ra.is_disjoint(rb) {
                        paths.insert(KbPath {
                            anchor: a.clone(),
                            steps: vec![sa.clone()],
                            second: Some((b.clone(), sb.clone())),
                        });
                    }
                }
            }
        }
    }
    paths.into_iter().take(max_paths).collect()
}

/// Each path yields its chain, `(AND t chain)` for every type of the chain's
/// entity answers, and `COUNT` of each; ill-typed forms are dropped.
pub fn paths_to_logical_forms(paths: &[KbPath], kb: &KnowledgeBase) -> Vec<CandidateLogicalForm> {
    let mut out: BTreeMap<String, CandidateLogicalForm> = BTreeMap::new();
    for path in paths {
        let chain = path.chain();
        let types: BTreeSet<&String> = denote(&chain, kb)
            .iter()
            .filter_map(Value::as_entity)
            .filter_map(|e| kb.entity(e))
            .flat_map(|e| &e.types)
            .collect();
        let mut forms = vec![chain.clone()];
        forms.extend(
            types
                .into_iter()
                .map(|t| SExpr::and(SExpr::class(t), chain.clone())),
        );
        let counted: Vec<SExpr> = forms.iter().cloned().map(SExpr::count).collect();
        forms.extend(counted);
        for form in forms {
            if !check_validity(&form, kb).valid {
                continue;
            }
            let cand = CandidateLogicalForm::new(&form, Source::Retrieved);
            out.entry(cand.key.clone()).or_insert(cand);
        }
    }
    out.into_values().collect()
}

/// Printed form with ids replaced by their labels.
pub fn lf_surface_text(expr: &SExpr, kb: &KnowledgeBase) -> String {
    let rel = |r: &str| kb.relation(r).map_or(r.to_string(), |d| d.label.clone());
    match expr {
        SExpr::Class(t) => kb.type_def(t).map_or(t.clone(), |d| d.label.clone()),
        SExpr::Entity(e) => kb.entity(e).map_or(e.clone(), |d| d.label.clone()),
        SExpr::Literal(lit) => print_literal(lit),
        SExpr::Join(r, arg) => {
            let r_text = match r {
                RelRef::Forward(id) => rel(id),
                RelRef::Inverse(id) => format!("(R {})", rel(id)),
            };
            format!("(JOIN {r_text} {})", lf_surface_text(arg, kb))
        }
        SExpr::And(a, b) => format!(
            "(AND {} {})",
            lf_surface_text(a, kb),
            lf_surface_text(b, kb)
        ),
        SExpr::Count(inner) => format!("(COUNT {})", lf_surface_text(inner, kb)),
        SExpr::ArgMin(inner, r) => format!("(ARGMIN {} {})", lf_surface_text(inner, kb), rel(r)),
        SExpr::ArgMax(inner, r) => format!("(ARGMAX {} {})", lf_surface_text(inner, kb), rel(r)),
        SExpr::Cmp(op, r, n) => format!("({} {} {n})", op.as_str(), rel(r)),
    }
}

/// Scores every candidate on (question, surface text) and keeps the top `k`
/// (ties by canonical print).
pub fn rank_candidates(
    question: &str,
    candidates: Vec<CandidateLogicalForm>,
    scorer: &dyn Scorer,
    kb: &KnowledgeBase,
    k: usize,
) -> Result<Vec<CandidateLogicalForm>, ScorerError> {
    let mut scored = candidates
        .into_iter()
        .map(|mut c| {
            let text = lf_surface_text(&c.expr, kb);
            let item = Item {
                text: &text,
                key: &c.key,
                flags: c.source.flags(),
            };
            c.score = Some(scorer.score(question, &item)?);
            Ok(c)
        })
        .collect::<Result<Vec<_>, ScorerError>>()?;
    scored.sort_by(rank_order);
    scored.truncate(k);
    Ok(scored)
}

pub fn rank_retrieved(
    question: &str,
    candidates: Vec<CandidateLogicalForm>,
    scorer: &dyn Scorer,
    kb: &KnowledgeBase,
    k: usize,
) -> Result<Vec<CandidateLogicalForm>, ScorerError> {
    rank_candidates(question, candidates, scorer, kb, k)
}

/// Enumerate, convert and rank in one go.
pub fn retrieve(
    question: &str,
    kb: &KnowledgeBase,
    linked: &LinkedEntities,
    scorer: &dyn Scorer,
    config: &RetrieverConfig,
) -> Result<Vec<CandidateLogicalForm>, ScorerError> {
    let paths = enumerate_paths(kb, linked, config.max_hops, config.max_paths);
    let forms = paths_to_logical_forms(&paths, kb);
    rank_retrieved(question, forms, scorer, kb, config.top_k)
}

/// Canonical keys of every unranked retrieved form; used for coverage checks.
pub fn retrievable_keys(
    kb: &KnowledgeBase,
    linked: &LinkedEntities,
    config: &RetrieverConfig,
) -> BTreeSet<String> {
    let paths = enumerate_paths(kb, linked, config.max_hops, config.max_paths);
    paths_to_logical_forms(&paths, kb)
        .into_iter()
        .map(|c| c.key)
        .collect()
}

/// Whether `expr` is among the retrievable forms.
pub fn is_retrievable(
    expr: &SExpr,
    kb: &KnowledgeBase,
    linked: &LinkedEntities,
    config: &RetrieverConfig,
) -> bool {
    retrievable_keys(kb, linked, config).contains(&canonical_key(expr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{toy_kb, toy_parts};
    use crate::scorer::OracleScorer;
    use crate::sexpr::parse_sexpr;

    fn keys(c: &[CandidateLogicalForm]) -> Vec<&str> {
        c.iter().map(|c| c.key.as_str()).collect()
    }

    fn step(r: &str, d: Direction) -> Step {
        Step::new(r, d)
    }

    #[test]
    fn toy_paths_from_c_manning() {
        let kb = toy_kb();
        let paths = enumerate_paths(&kb, &LinkedEntities::from_ids(["c_manning"]), 2, 2000);
        // works_at leads to stanford; from stanford: located_in forward, works_at back.
        let expected: BTreeSet<KbPath> = [
            vec![step("works_at", Direction::Forward)],
            vec![
                step("works_at", Direction::Forward),
                step("located_in", Direction::Forward),
            ],
            vec![
                step("works_at", Direction::Forward),
                step("works_at", Direction::Inverse),
            ],
        ]
        .into_iter()
        .map(|steps| KbPath {
            anchor: "c_manning".into(),
            steps,
            second: None,
        })
        .collect();
        assert_eq!(paths.into_iter().collect::<BTreeSet<_>>(), expected);
    }

    #[test]
    fn no_links_no_paths() {
        assert!(enumerate_paths(&toy_kb(), &LinkedEntities::default(), 2, 2000).is_empty());
        assert!(paths_to_logical_forms(&[], &toy_kb()).is_empty());
    }

    #[test]
    fn deleted_fact_breaks_all_paths() {
        let mut parts = toy_parts();
        parts.facts.retain(|f| f.relation != "works_at");
        let kb = KnowledgeBase::from_parts(parts).unwrap();
        assert!(enumerate_paths(&kb, &LinkedEntities::from_ids(["c_manning"]), 2, 2000).is_empty());
    }

    #[test]
    fn one_hop_forms() {
        let kb = toy_kb();
        let path = KbPath {
            anchor: "c_manning".into(),
            steps: vec![step("works_at", Direction::Forward)],
            second: None,
        };
        let forms = paths_to_logical_forms(&[path], &kb);
        let expected: BTreeSet<String> = [
            "(JOIN (R works_at) c_manning)",
            "(AND (JOIN (R works_at) c_manning) university)",
            "(COUNT (JOIN (R works_at) c_manning))",
            "(COUNT (AND (JOIN (R works_at) c_manning) university))",
        ]
        .iter()
        .map(|s| canonical_key(&parse_sexpr(s).unwrap()))
        .collect();
        assert_eq!(
            forms.iter().map(|c| c.key.clone()).collect::<BTreeSet<_>>(),
            expected
        );
        assert!(forms.iter().all(|c| c.source == Source::Retrieved));
    }

    #[test]
    fn inverse_hop_uses_plain_join() {
        let kb = toy_kb();
        let path = KbPath {
            anchor: "stanford".into(),
            steps: vec![step("works_at", Direction::Inverse)],
            second: None,
        };
        let forms = paths_to_logical_forms(&[path], &kb);
        assert!(keys(&forms).contains(&"(JOIN works_at stanford)"));
        assert!(keys(&forms).contains(&"(AND (JOIN works_at stanford) researcher)"));
    }

    #[test]
    fn retrieved_forms_are_realized() {
        let kb = toy_kb();
        let linked = LinkedEntities::from_ids(["c_manning", "palo_alto"]);
        let paths = enumerate_paths(&kb, &linked, 2, 2000);
        assert!(paths.iter().any(|p| p.second.is_some()));
        for c in paths_to_logical_forms(&paths, &kb) {
            assert!(!denote(&c.expr, &kb).is_empty(), "{}", c.key);
        }
    }

    #[test]
    fn cap_truncates_deterministically() {
        let kb = toy_kb();
        let linked = LinkedEntities::from_ids(["c_manning"]);
        let all = enumerate_paths(&kb, &linked, 2, 2000);
        assert_eq!(enumerate_paths(&kb, &linked, 2, 2), all[..2].to_vec());
    }

    #[test]
    fn surface_text_uses_labels() {
        let kb = toy_kb();
        let e = parse_sexpr("(AND university (JOIN (R works_at) c_manning))").unwrap();
        assert_eq!(
            lf_surface_text(&e, &kb),
            "(AND university (JOIN (R works at) C. Manning))"
        );
    }

    #[test]
    fn ranking_keeps_top_k_with_oracle_first() {
        let kb = toy_kb();
        let mut forms = paths_to_logical_forms(
            &enumerate_paths(&kb, &LinkedEntities::from_ids(["c_manning"]), 2, 2000),
            &kb,
        );
        assert!(forms.len() >= 4);
        let gold =
            canonical_key(&parse_sexpr("(AND university (JOIN (R works_at) c_manning))").unwrap());
        let mut oracle = OracleScorer::new();
        oracle.register("q", gold.clone());
        let ranked = rank_retrieved("q", forms.clone(), &oracle, &kb, 10).unwrap();
        assert_eq!(ranked[0].key, gold);
        assert_eq!(ranked[0].score, Some(1.0));

        while forms.len() < 15 {
            let mut extra = forms[0].clone();
            extra.key = format!("{}#{}", extra.key, forms.len());
            forms.push(extra);
        }
        assert_eq!(
            rank_retrieved("q", forms, &oracle, &kb, 10).unwrap().len(),
            10
        );
        assert!(rank_retrieved("q", vec![], &oracle, &kb, 10)
            .unwrap()
            .is_empty());
    }
}
