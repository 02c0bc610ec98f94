//! Seeded generators: random KBs and logical forms for property checks, and a
//! templated question set with gold annotations for end-to-end runs.
//!
//! Every label is a distinct pseudo-word, so entity mentions in generated
//! questions link unambiguously and never collide with schema labels.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{Generalization, QAExample};
use crate::executor::{check_validity, execute};
use crate::kb::{
    Deletion, EntityDef, Fact, KbParts, KnowledgeBase, PerturbationPlan, Range, RelationDef,
    TypeDef,
};
use crate::scorer::OracleScorer;
use crate::sexpr::{canonical_key, canonicalize, extract_sketch, CmpOp, RelRef, SExpr};
use crate::value::{Literal, LiteralKind, Number, Value};

const ONSETS: [&str; 14] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Hands out pseudo-words (consonant-vowel syllables) never seen before.
#[derive(Debug, Default)]
pub struct WordSource {
    used: BTreeSet<String>,
}

impl WordSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fresh(&mut self, rng: &mut impl Rng, syllables: usize) -> String {
        loop {
            let word: String = (0..syllables)
                .map(|_| {
                    format!(
                        "{}{}",
                        ONSETS.choose(rng).unwrap(),
                        VOWELS.choose(rng).unwrap()
                    )
                })
                .collect();
            if self.used.insert(word.clone()) {
                return word;
            }
        }
    }
}

fn decimal(rng: &mut impl Rng, lo: i64, hi: i64) -> Number {
    let whole = rng.gen_range(lo..=hi);
    if rng.gen_bool(0.25) {
        format!("{whole}.5").parse().expect("decimal literal")
    } else {
        Number::from_integer(whole)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RandomKbConfig {
    pub max_entities: usize,
    pub max_types: usize,
    pub max_relations: usize,
    /// Chance that a domain instance gets any fact for a given relation.
    pub density: f64,
}

impl Default for RandomKbConfig {
    fn default() -> Self {
        RandomKbConfig {
            max_entities: 30,
            max_types: 4,
            max_relations: 6,
            density: 0.4,
        }
    }
}

/// A small KB with multi-typed entities and entity-, number- and
/// string-valued relations.
pub fn random_kb(rng: &mut impl Rng, config: &RandomKbConfig) -> KnowledgeBase {
    let mut words = WordSource::new();
    let n_types = rng.gen_range(2..=config.max_types.max(2));
    let types: Vec<TypeDef> = (0..n_types)
        .map(|i| TypeDef {
            id: format!("c{i}"),
            label: words.fresh(rng, 2),
        })
        .collect();
    let n_entities = rng.gen_range(4..=config.max_entities.max(4));
    let entities: Vec<EntityDef> = (0..n_entities)
        .map(|i| {
            let mut ts = BTreeSet::from([types.choose(rng).unwrap().id.clone()]);
            if rng.gen_bool(0.3) {
                ts.insert(types.choose(rng).unwrap().id.clone());
            }
            EntityDef {
                id: format!("e{i}"),
                label: words.fresh(rng, 3),
                types: ts,
                aliases: Vec::new(),
            }
        })
        .collect();

    let mut relations = Vec::new();
    let n_rel = rng.gen_range(2..=config.max_relations.max(2));
    for i in 0..n_rel {
        relations.push(RelationDef {
            id: format!("r{i}"),
            label: words.fresh(rng, 2),
            domain: types.choose(rng).unwrap().id.clone(),
            range: Range::Type(types.choose(rng).unwrap().id.clone()),
        });
    }
    for i in 0..rng.gen_range(1..=2) {
        relations.push(RelationDef {
            id: format!("n{i}"),
            label: words.fresh(rng, 2),
            domain: types.choose(rng).unwrap().id.clone(),
            range: Range::Literal(LiteralKind::Number),
        });
    }
    if rng.gen_bool(0.5) {
        relations.push(RelationDef {
            id: "s0".into(),
            label: words.fresh(rng, 2),
            domain: types.choose(rng).unwrap().id.clone(),
            range: Range::Literal(LiteralKind::String),
        });
    }

    let instances =
        |t: &str| -> Vec<&EntityDef> { entities.iter().filter(|e| e.types.contains(t)).collect() };
    let mut facts = BTreeSet::new();
    for rel in &relations {
        let objects = rel
            .range
            .as_type()
            .map(&instances)
            .unwrap_or_default();
        for subject in instances(&rel.domain) {
            if !rng.gen_bool(config.density) {
                continue;
            }
            for _ in 0..rng.gen_range(1..=2) {
                let object = match &rel.range {
                    Range::Type(_) => match objects.choose(rng) {
                        Some(o) => Value::Entity(o.id.clone()),
                        None => continue,
                    },
                    Range::Literal(LiteralKind::Number) => {
                        Value::Literal(Literal::Number(decimal(rng, -3, 12)))
                    }
                    Range::Literal(LiteralKind::String) => Value::Literal(Literal::Text(
                        ["red", "blue", "green"].choose(rng).unwrap().to_string(),
                    )),
                };
                facts.insert(Fact::new(&subject.id, &rel.id, object));
            }
        }
    }
    let parts = KbParts {
        types,
        relations,
        entities,
        facts: facts.into_iter().collect(),
    };
    KnowledgeBase::from_parts(parts).expect("generated KB satisfies integrity")
}

/// Random valid logical form of depth at most `max_depth` (at least 2).
///
/// Entity leaves appear only as JOIN arguments and class leaves never do,
/// so every generated form survives a print/parse round trip.
pub fn random_valid_sexpr(rng: &mut impl Rng, kb: &KnowledgeBase, max_depth: usize) -> SExpr {
    let max_depth = max_depth.max(2);
    for _ in 0..256 {
        let candidate = if rng.gen_bool(0.15) {
            SetGen { kb }
                .set(rng, max_depth - 1)
                .map(|(e, _)| SExpr::count(e))
        } else if rng.gen_bool(0.1) {
            SetGen { kb }.literal_projection(rng, max_depth)
        } else {
            SetGen { kb }.set(rng, max_depth).map(|(e, _)| e)
        };
        if let Some(expr) = candidate {
            // bare classes are cheap to hit; keep only a few of them
            let trivial = expr.depth() == 1 && !rng.gen_bool(0.1);
            if !trivial && expr.depth() <= max_depth && check_validity(&expr, kb).valid {
                return expr;
            }
        }
    }
    SExpr::class(&kb.types().next().expect("KB has a type").id)
}

struct SetGen<'a> {
    kb: &'a KnowledgeBase,
}

impl SetGen<'_> {
    fn numeric_relations(&self) -> Vec<&RelationDef> {
        self.kb
            .relations()
            .filter(|r| r.range == Range::Literal(LiteralKind::Number))
            .collect()
    }

    /// Literal-valued projection `(JOIN (R r) x)`.
    fn literal_projection(&self, rng: &mut impl Rng, depth: usize) -> Option<SExpr> {
        let rels: Vec<&RelationDef> = self
            .kb
            .relations()
            .filter(|r| r.range.as_type().is_none())
            .collect();
        let rel = rels.choose(rng)?;
        let arg = self.typed_arg(rng, depth - 1, &rel.domain)?;
        Some(SExpr::join(RelRef::Inverse(rel.id.clone()), arg))
    }

    /// A JOIN argument whose kind includes `ty`: an entity leaf or a set.
    fn typed_arg(&self, rng: &mut impl Rng, depth: usize, ty: &str) -> Option<SExpr> {
        if depth <= 1 || rng.gen_bool(0.5) {
            let ids: Vec<&String> = self.kb.instances_of(ty).collect();
            return ids.choose(rng).map(|e| SExpr::entity(e));
        }
        for _ in 0..8 {
            if let Some((e, types)) = self.set(rng, depth) {
                if types.contains(ty) && !matches!(e, SExpr::Class(_)) {
                    return Some(e);
                }
            }
        }
        None
    }

    fn set(&self, rng: &mut impl Rng, depth: usize) -> Option<(SExpr, BTreeSet<String>)> {
        let kb = self.kb;
        if depth <= 1 || rng.gen_bool(0.2) {
            let types: Vec<&TypeDef> = kb.types().collect();
            let t = types.choose(rng)?;
            return Some((SExpr::class(&t.id), BTreeSet::from([t.id.clone()])));
        }
        match rng.gen_range(0..6) {
            0 => {
                let rels: Vec<&RelationDef> = kb
                    .relations()
                    .filter(|r| r.range.as_type().is_some())
                    .collect();
                let rel = rels.choose(rng)?;
                let arg = self.typed_arg(rng, depth - 1, &rel.domain)?;
                let range = rel.range.as_type()?.to_string();
                Some((
                    SExpr::join(RelRef::Inverse(rel.id.clone()), arg),
                    BTreeSet::from([range]),
                ))
            }
            1 => {
                let rels: Vec<&RelationDef> = kb.relations().collect();
                let rel = rels.choose(rng)?;
                let arg = match &rel.range {
                    Range::Type(t) => self.typed_arg(rng, depth - 1, t)?,
                    Range::Literal(_) => SExpr::Literal(self.existing_literal(rng, &rel.id)?),
                };
                Some((
                    SExpr::join(RelRef::Forward(rel.id.clone()), arg),
                    BTreeSet::from([rel.domain.clone()]),
                ))
            }
            2 | 3 => {
                let (a, ta) = self.set(rng, depth - 1)?;
                let (b, tb) = self.set(rng, depth - 1)?;
                let both: BTreeSet<String> = ta.intersection(&tb).cloned().collect();
                (!both.is_empty()).then(|| (SExpr::and(a, b), both))
            }
            4 => {
                let rels = self.numeric_relations();
                let rel = rels.choose(rng)?;
                let (inner, types) = self.set(rng, depth - 1)?;
                if !types.contains(&rel.domain) {
                    return None;
                }
                let e = if rng.gen_bool(0.5) {
                    SExpr::ArgMax(Box::new(inner), rel.id.clone())
                } else {
                    SExpr::ArgMin(Box::new(inner), rel.id.clone())
                };
                Some((e, BTreeSet::from([rel.domain.clone()])))
            }
            _ => {
                let rels = self.numeric_relations();
                let rel = rels.choose(rng)?;
                let op = *CmpOp::ALL.choose(rng).unwrap();
                let value = match self.existing_literal(rng, &rel.id) {
                    Some(Literal::Number(n)) if rng.gen_bool(0.7) => n,
                    _ => decimal(rng, -3, 12),
                };
                Some((
                    SExpr::Cmp(op, rel.id.clone(), value),
                    BTreeSet::from([rel.domain.clone()]),
                ))
            }
        }
    }

    fn existing_literal(&self, rng: &mut impl Rng, relation: &str) -> Option<Literal> {
        let values: Vec<&Literal> = self
            .kb
            .facts_with(relation)
            .filter_map(|f| match &f.object {
                Value::Literal(l) => Some(l),
                Value::Entity(_) => None,
            })
            .collect();
        values.choose(rng).map(|l| (*l).clone())
    }
}

/// Random, not necessarily valid, logical form over made-up identifiers.
/// Obeys the positional atom rule so that printing and parsing agree.
pub fn random_sexpr(rng: &mut impl Rng, max_depth: usize) -> SExpr {
    fn atom(rng: &mut impl Rng, prefix: &str) -> String {
        let names = ["a", "b_c", "m.0x", "ns:rel", "x-1", "Q42"];
        format!("{prefix}{}", names.choose(rng).unwrap())
    }
    fn literal(rng: &mut impl Rng) -> Literal {
        if rng.gen_bool(0.7) {
            Literal::Number(decimal(rng, -50, 50))
        } else {
            let texts = ["", "two words", "quote \" inside", "back\\slash", "(paren)"];
            Literal::Text(texts.choose(rng).unwrap().to_string())
        }
    }
    fn set(rng: &mut impl Rng, depth: usize) -> SExpr {
        if depth <= 1 {
            return if rng.gen_bool(0.8) {
                SExpr::Class(atom(rng, "t."))
            } else {
                SExpr::Literal(literal(rng))
            };
        }
        match rng.gen_range(0..7) {
            0 => SExpr::Class(atom(rng, "t.")),
            1 => {
                let rel = if rng.gen_bool(0.5) {
                    RelRef::Forward(atom(rng, "r."))
                } else {
                    RelRef::Inverse(atom(rng, "r."))
                };
                let arg = match rng.gen_range(0..3) {
                    0 => SExpr::Entity(atom(rng, "e.")),
                    1 => SExpr::Literal(literal(rng)),
                    _ => {
                        let inner = set(rng, depth - 1);
                        if matches!(inner, SExpr::Class(_)) {
                            SExpr::Entity(atom(rng, "e."))
                        } else {
                            inner
                        }
                    }
                };
                SExpr::join(rel, arg)
            }
            2 | 3 => SExpr::and(set(rng, depth - 1), set(rng, depth - 1)),
            4 => SExpr::count(set(rng, depth - 1)),
            5 => {
                let inner = Box::new(set(rng, depth - 1));
                if rng.gen_bool(0.5) {
                    SExpr::ArgMax(inner, atom(rng, "n."))
                } else {
                    SExpr::ArgMin(inner, atom(rng, "n."))
                }
            }
            _ => SExpr::Cmp(
                *CmpOp::ALL.choose(rng).unwrap(),
                atom(rng, "n."),
                decimal(rng, -50, 50),
            ),
        }
    }
    set(rng, max_depth.max(1))
}

// ---------------------------------------------------------------------------
// Templated question sets

#[derive(Debug, Clone, Copy)]
pub struct WorldConfig {
    pub types: usize,
    pub entities_per_type: usize,
    pub entity_relations: usize,
    pub numeric_relations: usize,
    /// Chance that a domain instance has a fact for a given relation.
    pub density: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            types: 5,
            entities_per_type: 8,
            entity_relations: 9,
            numeric_relations: 3,
            density: 0.45,
        }
    }
}

/// Single-typed entities; every numeric relation is total over its domain so
/// superlatives and comparatives have well-defined answers.
pub fn world_kb(rng: &mut impl Rng, config: &WorldConfig) -> KnowledgeBase {
    let mut words = WordSource::new();
    let types: Vec<TypeDef> = (0..config.types.max(1))
        .map(|i| TypeDef {
            id: format!("type_{i:02}"),
            label: words.fresh(rng, 2),
        })
        .collect();
    let mut entities = Vec::new();
    for t in &types {
        for _ in 0..config.entities_per_type.max(1) {
            entities.push(EntityDef {
                id: format!("ent_{:03}", entities.len()),
                label: words.fresh(rng, 3),
                types: BTreeSet::from([t.id.clone()]),
                aliases: Vec::new(),
            });
        }
    }
    let mut relations = Vec::new();
    for i in 0..config.entity_relations {
        relations.push(RelationDef {
            id: format!("rel_{i:02}"),
            label: words.fresh(rng, 2),
            domain: types.choose(rng).unwrap().id.clone(),
            range: Range::Type(types.choose(rng).unwrap().id.clone()),
        });
    }
    for i in 0..config.numeric_relations {
        relations.push(RelationDef {
            id: format!("num_{i:02}"),
            label: words.fresh(rng, 2),
            domain: types.choose(rng).unwrap().id.clone(),
            range: Range::Literal(LiteralKind::Number),
        });
    }
    let instances = |t: &str| -> Vec<String> {
        entities
            .iter()
            .filter(|e| e.types.contains(t))
            .map(|e| e.id.clone())
            .collect()
    };
    let mut facts = BTreeSet::new();
    for rel in &relations {
        let subjects = instances(&rel.domain);
        match &rel.range {
            Range::Type(t) => {
                let objects = instances(t);
                for s in &subjects {
                    if !rng.gen_bool(config.density) {
                        continue;
                    }
                    let k = rng.gen_range(1..=2);
                    for o in objects.choose_multiple(rng, k) {
                        facts.insert(Fact::entity(s, &rel.id, o));
                    }
                }
            }
            Range::Literal(_) => {
                for s in &subjects {
                    let v = Number::from_integer(rng.gen_range(1..=99));
                    facts.insert(Fact::new(s, &rel.id, Value::Literal(Literal::Number(v))));
                }
            }
        }
    }
    let parts = KbParts {
        types,
        relations,
        entities,
        facts: facts.into_iter().collect(),
    };
    KnowledgeBase::from_parts(parts).expect("generated KB satisfies integrity")
}

/// Logical-form templates of the generated questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Shape {
    /// `(AND t (JOIN (R r) e))`
    Objects,
    /// `(AND t (JOIN r e))`
    Subjects,
    /// `(AND t (JOIN (R r2) (JOIN (R r1) e)))`
    TwoHop,
    /// `(COUNT (AND t (JOIN r e)))`
    Count,
    /// `(ARGMAX (AND t (JOIN r e)) n)` or ARGMIN
    Superlative,
    /// `(AND t (op n N))`
    Comparative,
    /// `(AND t (AND (JOIN r1 e1) (JOIN r2 e2)))`
    Conjunction,
}

impl Shape {
    pub const ALL: [Shape; 7] = [
        Shape::Objects,
        Shape::Subjects,
        Shape::TwoHop,
        Shape::Count,
        Shape::Superlative,
        Shape::Comparative,
        Shape::Conjunction,
    ];
}

struct Templater<'a> {
    kb: &'a KnowledgeBase,
    entity_facts: Vec<&'a Fact>,
}

impl<'a> Templater<'a> {
    fn new(kb: &'a KnowledgeBase) -> Self {
        let entity_facts = kb
            .facts()
            .iter()
            .filter(|f| f.object.as_entity().is_some())
            .collect();
        Templater { kb, entity_facts }
    }

    fn label<'b>(&'b self, id: &'b str) -> &'b str {
        if let Some(e) = self.kb.entity(id) {
            &e.label
        } else if let Some(r) = self.kb.relation(id) {
            &r.label
        } else {
            self.kb.type_def(id).map_or(id, |t| t.label.as_str())
        }
    }

    fn range_type(&self, rel: &str) -> String {
        self.kb
            .relation(rel)
            .and_then(|r| r.range.as_type())
            .unwrap_or_default()
            .to_string()
    }

    fn domain(&self, rel: &str) -> String {
        self.kb
            .relation(rel)
            .map(|r| r.domain.clone())
            .unwrap_or_default()
    }

    fn generate(&self, rng: &mut impl Rng, shape: Shape) -> Option<(SExpr, String)> {
        let fact = *self.entity_facts.choose(rng)?;
        let (s, r) = (fact.subject.as_str(), fact.relation.as_str());
        let o = fact.object.as_entity()?;
        let inv = |r: &str, x: SExpr| SExpr::join(RelRef::Inverse(r.to_string()), x);
        let fwd = |r: &str, x: SExpr| SExpr::join(RelRef::Forward(r.to_string()), x);
        let l = |id: &str| self.label(id).to_string();
        match shape {
            Shape::Objects => {
                let t = self.range_type(r);
                let lf = SExpr::and(SExpr::class(&t), inv(r, SExpr::entity(s)));
                Some((lf, format!("which {} is the {} of {}", l(&t), l(r), l(s))))
            }
            Shape::Subjects => {
                let t = self.domain(r);
                let lf = SExpr::and(SExpr::class(&t), fwd(r, SExpr::entity(o)));
                Some((lf, format!("which {} has {} {}", l(&t), l(r), l(o))))
            }
            Shape::TwoHop => {
                let next: Vec<&Fact> = self
                    .kb
                    .facts_from(o)
                    .filter(|f| f.object.as_entity().is_some())
                    .collect();
                let second = next.choose(rng)?;
                let r2 = second.relation.as_str();
                let t = self.range_type(r2);
                let lf = SExpr::and(SExpr::class(&t), inv(r2, inv(r, SExpr::entity(s))));
                Some((
                    lf,
                    format!(
                        "which {} is the {} of the {} of {}",
                        l(&t),
                        l(r2),
                        l(r),
                        l(s)
                    ),
                ))
            }
            Shape::Count => {
                let t = self.domain(r);
                let lf = SExpr::count(SExpr::and(SExpr::class(&t), fwd(r, SExpr::entity(o))));
                Some((lf, format!("how many {} have {} {}", l(&t), l(r), l(o))))
            }
            Shape::Superlative => {
                let t = self.domain(r);
                let numeric: Vec<&RelationDef> = self
                    .kb
                    .relations()
                    .filter(|n| n.domain == t && n.range == Range::Literal(LiteralKind::Number))
                    .collect();
                let n = numeric.choose(rng)?;
                let inner = SExpr::and(SExpr::class(&t), fwd(r, SExpr::entity(o)));
                let (lf, word) = if rng.gen_bool(0.5) {
                    (SExpr::ArgMax(Box::new(inner), n.id.clone()), "largest")
                } else {
                    (SExpr::ArgMin(Box::new(inner), n.id.clone()), "smallest")
                };
                Some((
                    lf,
                    format!(
                        "which {} with {} {} has the {word} {}",
                        l(&t),
                        l(r),
                        l(o),
                        n.label
                    ),
                ))
            }
            Shape::Comparative => {
                let numeric: Vec<&RelationDef> = self
                    .kb
                    .relations()
                    .filter(|n| n.range == Range::Literal(LiteralKind::Number))
                    .collect();
                let n = numeric.choose(rng)?;
                let values: Vec<&Number> = self
                    .kb
                    .facts_with(&n.id)
                    .filter_map(|f| f.object.as_number())
                    .collect();
                let v = (*values.choose(rng)?).clone();
                let (op, phrase) = *[
                    (CmpOp::Gt, "greater than"),
                    (CmpOp::Lt, "less than"),
                    (CmpOp::Ge, "at least"),
                    (CmpOp::Le, "at most"),
                ]
                .choose(rng)
                .unwrap();
                let t = n.domain.clone();
                let lf = SExpr::and(SExpr::class(&t), SExpr::Cmp(op, n.id.clone(), v.clone()));
                Some((lf, format!("which {} has {} {phrase} {v}", l(&t), n.label)))
            }
            Shape::Conjunction => {
                let t = self.domain(r);
                let others: Vec<&Fact> = self
                    .kb
                    .facts_from(s)
                    .filter(|f| f.object.as_entity().is_some_and(|x| x != o))
                    .collect();
                let other = others.choose(rng)?;
                let (r2, o2) = (other.relation.as_str(), other.object.as_entity()?);
                let lf = SExpr::and(
                    SExpr::class(&t),
                    SExpr::and(fwd(r, SExpr::entity(o)), fwd(r2, SExpr::entity(o2))),
                );
                Some((
                    lf,
                    format!(
                        "which {} has {} {} and {} {}",
                        l(&t),
                        l(r),
                        l(o),
                        l(r2),
                        l(o2)
                    ),
                ))
            }
        }
    }
}

/// Up to `n` answerable questions with distinct canonical golds, cycling
/// through `shapes`. Generation stops early if the KB cannot supply more.
pub fn generate_questions(
    rng: &mut impl Rng,
    kb: &KnowledgeBase,
    n: usize,
    shapes: &[Shape],
    qid_prefix: &str,
) -> Vec<QAExample> {
    let templater = Templater::new(kb);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < n && attempts < n * 200 && !shapes.is_empty() {
        let shape = shapes[attempts % shapes.len()];
        attempts += 1;
        let Some((lf, question)) = templater.generate(rng, shape) else {
            continue;
        };
        let lf = canonicalize(&lf);
        let Ok(answers) = execute(&lf, kb) else {
            continue;
        };
        if answers.is_empty() || !seen.insert(canonical_key(&lf)) || seen.contains(&question) {
            continue;
        }
        seen.insert(question.clone());
        let qid = format!("{qid_prefix}{:04}", out.len());
        out.push(QAExample::answerable(&qid, &question, lf, answers));
    }
    out
}

/// Generated KB plus question set.
#[derive(Debug, Clone)]
pub struct World {
    pub kb: KnowledgeBase,
    pub examples: Vec<QAExample>,
}

pub fn world(rng: &mut impl Rng, config: &WorldConfig, questions: usize) -> World {
    let kb = world_kb(rng, config);
    let examples = generate_questions(rng, &kb, questions, &Shape::ALL, "q");
    World { kb, examples }
}

/// [`world`] from a seed, with the default shape of KB.
pub fn seeded_world(seed: u64, questions: usize) -> World {
    use rand::SeedableRng;
    world(
        &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        &WorldConfig::default(),
        questions,
    )
}

/// Labels held-out questions relative to a training split: zero-shot if a
/// schema element never occurs in training golds, compositional if every
/// element occurs but not this sketch with this element set, iid otherwise.
pub fn label_generalization(train: &[QAExample], test: &mut [QAExample]) {
    let signature = |lf: &SExpr| {
        let mut schema: Vec<String> = lf
            .classes()
            .into_iter()
            .chain(lf.relations())
            .map(str::to_string)
            .collect();
        schema.sort();
        schema.dedup();
        (extract_sketch(lf).key(), schema)
    };
    let mut seen_elements = BTreeSet::new();
    let mut seen_signatures = BTreeSet::new();
    for lf in train.iter().filter_map(|e| e.gold_lf.form()) {
        let sig = signature(lf);
        seen_elements.extend(sig.1.iter().cloned());
        seen_signatures.insert(sig);
    }
    for ex in test.iter_mut() {
        let Some(lf) = ex.gold_lf.form() else {
            continue;
        };
        let sig = signature(lf);
        ex.generalization = Some(if !sig.1.iter().all(|s| seen_elements.contains(s)) {
            Generalization::ZeroShot
        } else if seen_signatures.contains(&sig) {
            Generalization::Iid
        } else {
            Generalization::Compositional
        });
    }
}

// ---------------------------------------------------------------------------
// Oracles and perturbation plans

/// One oracle per scored stage, keyed on the gold annotations.
#[derive(Debug, Default)]
pub struct Oracles {
    pub retriever: OracleScorer,
    pub sketch: OracleScorer,
    pub types: OracleScorer,
    pub relations: OracleScorer,
    pub discriminator: OracleScorer,
}

/// Registers each gold form (and its sketch and schema elements) under its
/// question. NK-gold questions register nothing, so every item scores 0.
pub fn oracles(examples: &[QAExample]) -> Oracles {
    let mut o = Oracles::default();
    for ex in examples {
        let Some(lf) = ex.gold_lf.form() else {
            continue;
        };
        let key = canonical_key(lf);
        o.retriever.register(&ex.question, key.clone());
        o.discriminator.register(&ex.question, key);
        o.sketch.register(&ex.question, extract_sketch(lf).key());
        for t in lf.classes() {
            o.types.register(&ex.question, t);
        }
        for r in lf.relations() {
            o.relations.register(&ex.question, r);
        }
    }
    o
}

/// Facts realizing each entity-anchored JOIN of `lf`, i.e. the first hop of
/// every answer path leaving a mentioned entity.
pub fn anchored_facts(lf: &SExpr, kb: &KnowledgeBase) -> BTreeSet<Fact> {
    let mut out = BTreeSet::new();
    lf.walk(&mut |node| {
        if let SExpr::Join(rel, arg) = node {
            if let SExpr::Entity(e) = arg.as_ref() {
                match rel {
                    RelRef::Inverse(r) => {
                        out.extend(kb.facts_from(e).filter(|f| &f.relation == r).cloned())
                    }
                    RelRef::Forward(r) => out.extend(
                        kb.facts_to(&Value::Entity(e.clone()))
                            .filter(|f| &f.relation == r)
                            .cloned(),
                    ),
                }
            }
        }
    });
    out
}

/// Fact deletions that cut every answer path of up to `n` questions. Counting
/// questions are skipped: an empty count is still the answer `0`.
pub fn fact_gap_plan(kb: &KnowledgeBase, examples: &[QAExample], n: usize) -> PerturbationPlan {
    let mut facts = BTreeSet::new();
    let mut chosen = 0;
    for ex in examples {
        if chosen == n {
            break;
        }
        let Some(lf) = ex.gold_lf.form() else {
            continue;
        };
        if lf.has_count() || lf.entities().is_empty() {
            continue;
        }
        facts.extend(anchored_facts(lf, kb));
        chosen += 1;
    }
    PerturbationPlan {
        deletions: facts.into_iter().map(Deletion::Fact).collect(),
        seed: 0,
    }
}

/// Relation deletions, most-used first, until at least `n` golds mention a
/// deleted relation.
pub fn schema_gap_plan(examples: &[QAExample], n: usize) -> PerturbationPlan {
    let mut usage: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        for r in ex
            .gold_lf
            .form()
            .map(|lf| lf.relations())
            .unwrap_or_default()
        {
            usage.entry(r.to_string()).or_default().insert(i);
        }
    }
    let mut ranked: Vec<(String, BTreeSet<usize>)> = usage.into_iter().collect();
    ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(&b.0)));
    let mut hit = BTreeSet::new();
    let mut deletions = Vec::new();
    for (rel, qs) in ranked {
        if hit.len() >= n {
            break;
        }
        hit.extend(qs);
        deletions.push(Deletion::Relation(rel));
    }
    PerturbationPlan { deletions, seed: 0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Category;
    use crate::kb::perturb_kb;
    use crate::sexpr::{parse_sexpr, print_sexpr};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_kbs_are_small_and_forms_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let kb = random_kb(&mut rng, &RandomKbConfig::default());
            assert!(kb.counts().entities <= 30);
            for _ in 0..10 {
                let e = random_valid_sexpr(&mut rng, &kb, 4);
                assert!(e.depth() <= 4);
                assert!(check_validity(&e, &kb).valid, "{e}");
                assert_eq!(parse_sexpr(&print_sexpr(&e)).unwrap(), e);
            }
        }
    }

    #[test]
    fn random_syntax_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let e = random_sexpr(&mut rng, 4);
            assert_eq!(parse_sexpr(&print_sexpr(&e)).unwrap(), e, "{e}");
        }
    }

    #[test]
    fn world_questions_are_answerable_and_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = world(&mut rng, &WorldConfig::default(), 120);
        assert_eq!(w.examples.len(), 120);
        let keys: BTreeSet<String> = w.examples.iter().map(|e| e.gold_lf.key()).collect();
        assert_eq!(keys.len(), 120);
        for ex in &w.examples {
            ex.check().unwrap();
            let lf = ex.gold_lf.form().unwrap();
            assert_eq!(&canonicalize(lf), lf);
            for e in lf.entities() {
                assert!(ex.question.contains(&w.kb.entity(e).unwrap().label));
            }
        }
        let shapes: BTreeSet<bool> = w
            .examples
            .iter()
            .map(|e| e.gold_lf.form().unwrap().has_count())
            .collect();
        assert_eq!(shapes.len(), 2);
    }

    #[test]
    fn gap_plans_produce_the_intended_categories() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = world(&mut rng, &WorldConfig::default(), 150);
        let plan = fact_gap_plan(&w.kb, &w.examples, 30);
        let (_, relabeled) = perturb_kb(&w.kb, &w.examples, &plan).unwrap();
        let missing = relabeled
            .examples
            .iter()
            .filter(|e| e.category == Category::MissingFact)
            .count();
        assert!(missing >= 30, "{missing}");

        let plan = schema_gap_plan(&w.examples, 30);
        let (_, relabeled) = perturb_kb(&w.kb, &w.examples, &plan).unwrap();
        let nk = relabeled
            .examples
            .iter()
            .filter(|e| e.category == Category::MissingRelation)
            .count();
        assert!(nk >= 30, "{nk}");
    }

    #[test]
    fn generalization_labels() {
        let kb = crate::kb::toy_kb();
        let ex = |lf: &str| {
            let lf = parse_sexpr(lf).unwrap();
            let answers = execute(&lf, &kb).unwrap();
            QAExample::answerable("q", "q", lf, answers)
        };
        let train = vec![ex("(AND university (JOIN (R works_at) c_manning))")];
        let mut test = vec![
            ex("(AND university (JOIN (R works_at) c_manning))"),
            ex("(JOIN (R works_at) c_manning)"),
            ex("(JOIN (R located_in) stanford)"),
        ];
        label_generalization(&train, &mut test);
        let labels: Vec<_> = test.iter().map(|e| e.generalization.unwrap()).collect();
        assert_eq!(
            labels,
            [
                Generalization::Iid,
                Generalization::Compositional,
                Generalization::ZeroShot
            ]
        );
    }
}
