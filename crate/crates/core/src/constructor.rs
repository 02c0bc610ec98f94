//! Sketch-filling candidates: rank sketch shapes, retrieve schema elements,
//! and ground every type-valid combination.

use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use crate::executor::infer;
use crate::kb::KnowledgeBase;
use crate::linker::LinkedEntities;
use crate::retriever::{CandidateLogicalForm, Source};
use crate::scorer::{extract_numbers, Item, Scorer, ScorerError};
use crate::sexpr::{RelRef, SExpr, Sketch, SketchInventory, SketchLiteral};

/// Ranked sketches, descending score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SketchBeam {
    pub entries: Vec<(Sketch, f64)>,
}

impl SketchBeam {
    pub fn single(sketch: Sketch) -> Self {
        SketchBeam {
            entries: vec![(sketch, 1.0)],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sketches(&self) -> impl Iterator<Item = &Sketch> {
        self.entries.iter().map(|(s, _)| s)
    }
}

/// Ranked schema elements, descending score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchemaCandidates {
    pub types: Vec<(String, f64)>,
    pub relations: Vec<(String, f64)>,
}

impl SchemaCandidates {
    /// Unscored candidates, e.g. for oracle-complete schema sets.
    pub fn from_ids<S: AsRef<str>>(
        types: impl IntoIterator<Item = S>,
        relations: impl IntoIterator<Item = S>,
    ) -> Self {
        SchemaCandidates {
            types: types
                .into_iter()
                .map(|t| (t.as_ref().to_string(), 0.0))
                .collect(),
            relations: relations
                .into_iter()
                .map(|r| (r.as_ref().to_string(), 0.0))
                .collect(),
        }
    }

    pub fn has_type(&self, id: &str) -> bool {
        self.types.iter().any(|(t, _)| t == id)
    }

    pub fn has_relation(&self, id: &str) -> bool {
        self.relations.iter().any(|(r, _)| r == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstructorConfig {
    pub beam: usize,
    pub schema_top_k: usize,
    pub max_groundings: usize,
    /// When false, groundings skip the typing check (the integrator ablation).
    pub check_types: bool,
}

impl Default for ConstructorConfig {
    fn default() -> Self {
        ConstructorConfig {
            beam: 10,
            schema_top_k: 10,
            max_groundings: 5000,
            check_types: true,
        }
    }
}

fn sort_scored<T: Ord>(items: &mut [(T, f64)]) {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Scores every inventory entry, keeps the top `beam`, and fills `NUM` slots
/// with the question's numbers left to right; unfillable sketches drop out.
pub fn generate_sketches(
    question: &str,
    inventory: &SketchInventory,
    ranker: &dyn Scorer,
    beam: usize,
) -> Result<SketchBeam, ScorerError> {
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(inventory.len());
    for (i, entry) in inventory.entries().iter().enumerate() {
        let s = ranker.score(question, &Item::new(&entry.key, &entry.key))?;
        scored.push((i, s));
    }
    let entries = inventory.entries();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| entries[a.0].key.cmp(&entries[b.0].key))
    });
    let numbers = extract_numbers(question);
    let entries = scored
        .into_iter()
        .take(beam)
        .filter_map(|(i, s)| entries[i].sketch.fill_numbers(&numbers).map(|sk| (sk, s)))
        .collect();
    Ok(SketchBeam { entries })
}

/// Scores every type and relation on its label; top `k` each, ties by id.
pub fn retrieve_schema(
    question: &str,
    kb: &KnowledgeBase,
    type_scorer: &dyn Scorer,
    relation_scorer: &dyn Scorer,
    k: usize,
) -> Result<SchemaCandidates, ScorerError> {
    let mut types = kb
        .types()
        .map(|t| {
            Ok((
                t.id.clone(),
                type_scorer.score(question, &Item::new(&t.label, &t.id))?,
            ))
        })
        .collect::<Result<Vec<_>, ScorerError>>()?;
    let mut relations = kb
        .relations()
        .map(|r| {
            Ok((
                r.id.clone(),
                relation_scorer.score(question, &Item::new(&r.label, &r.id))?,
            ))
        })
        .collect::<Result<Vec<_>, ScorerError>>()?;
    sort_scored(&mut types);
    sort_scored(&mut relations);
    types.truncate(k);
    relations.truncate(k);
    Ok(SchemaCandidates { types, relations })
}

struct Grounder<'a> {
    kb: &'a KnowledgeBase,
    types: Vec<String>,
    relations: Vec<String>,
    entities: Vec<String>,
    check: bool,
    cap: usize,
    memo: HashMap<Sketch, Rc<Vec<SExpr>>>,
}

impl Grounder<'_> {
    fn keep(&self, e: &SExpr) -> bool {
        !self.check || infer(e, self.kb, "root").is_ok()
    }

    fn push(&self, out: &mut Vec<SExpr>, e: SExpr) {
        if self.keep(&e) {
            out.push(e);
        }
    }

    /// All (valid, when checking) groundings of a sub-sketch, in
    /// lexicographic slot-assignment order.
    fn ground(&mut self, sketch: &Sketch) -> Rc<Vec<SExpr>> {
        if let Some(hit) = self.memo.get(sketch) {
            return Rc::clone(hit);
        }
        let mut out: Vec<SExpr> = Vec::new();
        match sketch {
            Sketch::TypeSlot => out.extend(self.types.iter().map(|t| SExpr::class(t))),
            Sketch::EntitySlot => out.extend(self.entities.iter().map(|e| SExpr::entity(e))),
            Sketch::Literal(SketchLiteral::Value(l)) => out.push(SExpr::Literal(l.clone())),
            Sketch::Literal(SketchLiteral::NumberSlot)
            | Sketch::Cmp(_, SketchLiteral::NumberSlot) => {}
            Sketch::Cmp(op, SketchLiteral::Value(l)) => {
                if let Some(n) = l.as_number() {
                    for r in &self.relations {
                        out.push(SExpr::Cmp(*op, r.clone(), n.clone()));
                    }
                }
            }
            Sketch::Join { inverse, arg } => {
                let args = self.ground(arg);
                'outer: for r in &self.relations {
                    let rel = if *inverse {
                        RelRef::Inverse(r.clone())
                    } else {
                        RelRef::Forward(r.clone())
                    };
                    for a in args.iter() {
                        self.push(&mut out, SExpr::join(rel.clone(), a.clone()));
                        if out.len() >= self.cap {
                            break 'outer;
                        }
                    }
                }
            }
            Sketch::And(a, b) => {
                let left = self.ground(a);
                let right = self.ground(b);
                'outer: for x in left.iter() {
                    for y in right.iter() {
                        self.push(&mut out, SExpr::and(x.clone(), y.clone()));
                        if out.len() >= self.cap {
                            break 'outer;
                        }
                    }
                }
            }
            Sketch::Count(inner) => {
                out.extend(self.ground(inner).iter().cloned().map(SExpr::count));
            }
            Sketch::ArgMin(inner) | Sketch::ArgMax(inner) => {
                let inners = self.ground(inner);
                'outer: for x in inners.iter() {
                    for r in &self.relations {
                        let e = match sketch {
                            Sketch::ArgMin(_) => SExpr::ArgMin(Box::new(x.clone()), r.clone()),
                            _ => SExpr::ArgMax(Box::new(x.clone()), r.clone()),
                        };
                        self.push(&mut out, e);
                        if out.len() >= self.cap {
                            break 'outer;
                        }
                    }
                }
            }
        }
        out.retain(|e| self.keep(e));
        let out = Rc::new(out);
        self.memo.insert(sketch.clone(), Rc::clone(&out));
        out
    }
}

/// Grounds each sketch with every combination of candidate types, relations
/// and linked entities; keeps type-valid groundings (unless the check is
/// disabled), canonicalized and deduplicated, at most `max_groundings`.
/// Order: sketch rank, then lexicographic assignment.
pub fn integrate(
    sketches: &SketchBeam,
    schema: &SchemaCandidates,
    linked: &LinkedEntities,
    kb: &KnowledgeBase,
    config: &ConstructorConfig,
) -> Vec<CandidateLogicalForm> {
    let sorted = |items: &mut Vec<String>| {
        items.sort();
        items.dedup();
    };
    let mut types: Vec<String> = schema.types.iter().map(|(t, _)| t.clone()).collect();
    let mut relations: Vec<String> = schema.relations.iter().map(|(r, _)| r.clone()).collect();
    let mut entities = linked.entity_ids();
    sorted(&mut types);
    sorted(&mut relations);
    sorted(&mut entities);
    let mut grounder = Grounder {
        kb,
        types,
        relations,
        entities,
        check: config.check_types,
        cap: config.max_groundings,
        memo: HashMap::new(),
    };

    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::new();
    'sketches: for sketch in sketches.sketches() {
        for expr in grounder.ground(sketch).iter() {
            if out.len() >= config.max_groundings {
                break 'sketches;
            }
            let cand = CandidateLogicalForm::new(expr, Source::Constructed);
            if seen.insert(cand.key.clone()) {
                out.push(cand);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::check_validity;
    use crate::kb::{toy_kb, toy_parts};
    use crate::scorer::{LinearScorer, OracleScorer};
    use crate::sexpr::{build_sketch_inventory, canonical_key, parse_sexpr, parse_sketch};

    fn running_sketch() -> Sketch {
        parse_sketch("(AND TYPE (JOIN (R REL) ENT))").unwrap()
    }

    fn keys(c: &[CandidateLogicalForm]) -> Vec<&str> {
        c.iter().map(|c| c.key.as_str()).collect()
    }

    fn inventory(lfs: &[&str]) -> SketchInventory {
        let exprs: Vec<SExpr> = lfs.iter().map(|s| parse_sexpr(s).unwrap()).collect();
        build_sketch_inventory(&exprs).unwrap()
    }

    #[test]
    fn count_cue_ranks_count_sketch_first() {
        let inv = inventory(&[
            "(AND university (JOIN located_in palo_alto))",
            "(AND university (JOIN located_in palo_alto))",
            "(COUNT (AND university (JOIN located_in palo_alto)))",
        ]);
        let beam = generate_sketches(
            "how many universities are in palo alto",
            &inv,
            &LinearScorer::baseline(),
            10,
        )
        .unwrap();
        assert!(beam.entries[0].0.has_count());
        assert_eq!(beam.len(), 2);
    }

    #[test]
    fn small_inventory_fits_in_beam_and_oracle_leads() {
        let inv = inventory(&[
            "(AND university (JOIN (R works_at) c_manning))",
            "(COUNT university)",
            "(JOIN located_in stanford)",
        ]);
        let mut oracle = OracleScorer::new();
        oracle.register("q", "(JOIN REL ENT)");
        let beam = generate_sketches("q", &inv, &oracle, 10).unwrap();
        assert_eq!(beam.len(), 3);
        assert_eq!(beam.entries[0].0.to_string(), "(JOIN REL ENT)");
    }

    #[test]
    fn number_slots_filled_or_dropped() {
        let inv = inventory(&["(AND city (gt population 100))", "(COUNT city)"]);
        let beam = generate_sketches(
            "cities with more than 2500 people",
            &inv,
            &OracleScorer::new(),
            10,
        )
        .unwrap();
        let printed: Vec<String> = beam.sketches().map(|s| s.to_string()).collect();
        assert!(
            printed.contains(&"(AND TYPE (gt REL 2500))".to_string()),
            "{printed:?}"
        );
        let beam =
            generate_sketches("cities with many people", &inv, &OracleScorer::new(), 10).unwrap();
        assert_eq!(beam.len(), 1);
    }

    #[test]
    fn schema_retrieval_by_label_overlap() {
        let kb = toy_kb();
        let s = LinearScorer::baseline();
        let schema =
            retrieve_schema("which university does c. manning work at", &kb, &s, &s, 10).unwrap();
        assert_eq!(schema.types[0].0, "university");
        assert_eq!(schema.types.len(), 3);
        assert_eq!(schema.relations.len(), 2);
        let top1 =
            retrieve_schema("which university does c. manning work at", &kb, &s, &s, 1).unwrap();
        assert_eq!(top1.types.len(), 1);
    }

    #[test]
    fn deleted_relation_is_not_retrieved() {
        let mut parts = toy_parts();
        parts.relations.retain(|r| r.id != "works_at");
        parts.facts.retain(|f| f.relation != "works_at");
        let kb = KnowledgeBase::from_parts(parts).unwrap();
        let s = LinearScorer::baseline();
        let schema =
            retrieve_schema("which university does c. manning work at", &kb, &s, &s, 10).unwrap();
        assert!(!schema.has_relation("works_at"));
    }

    #[test]
    fn running_example_has_one_valid_grounding() {
        let kb = toy_kb();
        let schema = SchemaCandidates::from_ids(["university", "city"], ["works_at", "located_in"]);
        let out = integrate(
            &SketchBeam::single(running_sketch()),
            &schema,
            &LinkedEntities::from_ids(["c_manning"]),
            &kb,
            &ConstructorConfig::default(),
        );
        let gold =
            canonical_key(&parse_sexpr("(AND university (JOIN (R works_at) c_manning))").unwrap());
        assert_eq!(keys(&out), [gold.as_str()]);
        assert_eq!(out[0].source, Source::Constructed);
    }

    #[test]
    fn no_entities_no_groundings() {
        let kb = toy_kb();
        let schema = SchemaCandidates::from_ids(["university"], ["works_at"]);
        let out = integrate(
            &SketchBeam::single(running_sketch()),
            &schema,
            &LinkedEntities::default(),
            &kb,
            &ConstructorConfig::default(),
        );
        assert!(out.is_empty());
    }

    #[test]
    fn grounding_ignores_facts() {
        let mut parts = toy_parts();
        parts.facts.retain(|f| f.relation != "works_at");
        let reduced = KnowledgeBase::from_parts(parts).unwrap();
        let schema = SchemaCandidates::from_ids(["university", "city"], ["works_at", "located_in"]);
        let run = |kb: &KnowledgeBase| {
            integrate(
                &SketchBeam::single(running_sketch()),
                &schema,
                &LinkedEntities::from_ids(["c_manning"]),
                kb,
                &ConstructorConfig::default(),
            )
        };
        assert_eq!(run(&reduced), run(&toy_kb()));
    }

    #[test]
    fn unchecked_mode_keeps_ill_typed_groundings() {
        let kb = toy_kb();
        let schema = SchemaCandidates::from_ids(["university", "city"], ["works_at", "located_in"]);
        let cfg = ConstructorConfig {
            check_types: false,
            ..ConstructorConfig::default()
        };
        let out = integrate(
            &SketchBeam::single(running_sketch()),
            &schema,
            &LinkedEntities::from_ids(["c_manning"]),
            &kb,
            &cfg,
        );
        assert_eq!(out.len(), 4);
        assert_eq!(
            out.iter()
                .filter(|c| check_validity(&c.expr, &kb).valid)
                .count(),
            1
        );
        let capped = integrate(
            &SketchBeam::single(running_sketch()),
            &schema,
            &LinkedEntities::from_ids(["c_manning"]),
            &kb,
            &ConstructorConfig {
                max_groundings: 2,
                ..cfg
            },
        );
        assert_eq!(capped.len(), 2);
    }
}
