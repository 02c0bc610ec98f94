//! Knowledge base store: schema (types, relations) and data (entities, facts).
//!
//! A [`KnowledgeBase`] is only ever built from [`KbParts`] that pass
//! [`validate_parts`]; it is immutable afterwards. Perturbation produces a new
//! value.

mod io;
mod perturb;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{Literal, LiteralKind, Value};

pub use io::{load_kb, load_kb_parts, write_kb, KbIoError};
pub use perturb::{
    perturb_kb, Deletion, PerturbError, PerturbationPlan, PlanParseError, RelabeledDataset,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDef {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Range {
    Type(String),
    Literal(LiteralKind),
}

impl Range {
    pub fn as_type(&self) -> Option<&str> {
        match self {
            Range::Type(t) => Some(t),
            Range::Literal(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationDef {
    pub id: String,
    pub label: String,
    pub domain: String,
    pub range: Range,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityDef {
    pub id: String,
    pub label: String,
    pub types: BTreeSet<String>,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fact {
    pub subject: String,
    pub relation: String,
    #[serde(with = "object_serde")]
    pub object: Value,
}

impl Fact {
    pub fn new(subject: &str, relation: &str, object: Value) -> Self {
        Fact {
            subject: subject.to_string(),
            relation: relation.to_string(),
            object,
        }
    }

    pub fn entity(subject: &str, relation: &str, object: &str) -> Self {
        Fact::new(subject, relation, Value::Entity(object.to_string()))
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.subject,
            self.relation,
            object_to_field(&self.object)
        )
    }
}

/// `facts.tsv` object column: an entity id or a tagged literal.
pub fn object_to_field(object: &Value) -> String {
    match object {
        Value::Entity(id) => id.clone(),
        Value::Literal(lit) => lit.to_tagged(),
    }
}

pub fn object_from_field(field: &str) -> Result<Value, String> {
    match Literal::from_tagged(field) {
        Some(Ok(lit)) => Ok(Value::Literal(lit)),
        Some(Err(e)) => Err(e.to_string()),
        None if field.is_empty() => Err("empty object".to_string()),
        None => Ok(Value::Entity(field.to_string())),
    }
}

mod object_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::value::Value;

    pub fn serialize<S: Serializer>(v: &Value, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::object_to_field(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Value, D::Error> {
        let raw = String::deserialize(d)?;
        super::object_from_field(&raw).map_err(serde::de::Error::custom)
    }
}

/// Unvalidated KB contents, in file order. Duplicates and dangling references
/// are representable here so they can be reported.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KbParts {
    pub types: Vec<TypeDef>,
    pub relations: Vec<RelationDef>,
    pub entities: Vec<EntityDef>,
    pub facts: Vec<Fact>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId { kind: &'static str },
    EmptyLabel { kind: &'static str, id: String },
    DuplicateId { kind: &'static str, id: String },
    UnknownDomain { relation: String, domain: String },
    UnknownRange { relation: String, range: String },
    EntityWithoutTypes { entity: String },
    UnknownEntityType { entity: String, type_id: String },
    DanglingSubject { fact: Fact },
    UnknownRelation { fact: Fact },
    SubjectTypeMismatch { fact: Fact, domain: String },
    DanglingObject { fact: Fact },
    ObjectKindMismatch { fact: Fact, expected: String },
    DuplicateFact { fact: Fact },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId { kind } => write!(f, "{kind} with empty id"),
            Violation::EmptyLabel { kind, id } => write!(f, "{kind} `{id}` has an empty label"),
            Violation::DuplicateId { kind, id } => write!(f, "duplicate {kind} id `{id}`"),
            Violation::UnknownDomain { relation, domain } => {
                write!(
                    f,
                    "relation `{relation}` has unknown domain type `{domain}`"
                )
            }
            Violation::UnknownRange { relation, range } => {
                write!(f, "relation `{relation}` has unknown range type `{range}`")
            }
            Violation::EntityWithoutTypes { entity } => {
                write!(f, "entity `{entity}` has no types")
            }
            Violation::UnknownEntityType { entity, type_id } => {
                write!(f, "entity `{entity}` has unknown type `{type_id}`")
            }
            Violation::DanglingSubject { fact } => write!(f, "fact {fact}: unknown subject"),
            Violation::UnknownRelation { fact } => write!(f, "fact {fact}: unknown relation"),
            Violation::SubjectTypeMismatch { fact, domain } => {
                write!(f, "fact {fact}: subject lacks domain type `{domain}`")
            }
            Violation::DanglingObject { fact } => write!(f, "fact {fact}: unknown object entity"),
            Violation::ObjectKindMismatch { fact, expected } => {
                write!(f, "fact {fact}: object does not match range `{expected}`")
            }
            Violation::DuplicateFact { fact } => write!(f, "duplicate fact {fact}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("integrity error: {0}")]
pub struct IntegrityError(pub Violation);

/// Checks every referential-integrity invariant and lists all violations.
pub fn validate_parts(parts: &KbParts) -> ValidationReport {
    let mut violations = Vec::new();

    let mut type_ids = HashSet::new();
    for t in &parts.types {
        if t.id.is_empty() {
            violations.push(Violation::EmptyId { kind: "type" });
        } else if !type_ids.insert(t.id.as_str()) {
            violations.push(Violation::DuplicateId {
                kind: "type",
                id: t.id.clone(),
            });
        }
        if t.label.is_empty() {
            violations.push(Violation::EmptyLabel {
                kind: "type",
                id: t.id.clone(),
            });
        }
    }

    let mut relations: BTreeMap<&str, &RelationDef> = BTreeMap::new();
    for r in &parts.relations {
        if r.id.is_empty() {
            violations.push(Violation::EmptyId { kind: "relation" });
        } else if relations.insert(r.id.as_str(), r).is_some() {
            violations.push(Violation::DuplicateId {
                kind: "relation",
                id: r.id.clone(),
            });
        }
        if r.label.is_empty() {
            violations.push(Violation::EmptyLabel {
                kind: "relation",
                id: r.id.clone(),
            });
        }
        if !type_ids.contains(r.domain.as_str()) {
            violations.push(Violation::UnknownDomain {
                relation: r.id.clone(),
                domain: r.domain.clone(),
            });
        }
        if let Range::Type(t) = &r.range {
            if !type_ids.contains(t.as_str()) {
                violations.push(Violation::UnknownRange {
                    relation: r.id.clone(),
                    range: t.clone(),
                });
            }
        }
    }

    let mut entities: BTreeMap<&str, &EntityDef> = BTreeMap::new();
    for e in &parts.entities {
        if e.id.is_empty() {
            violations.push(Violation::EmptyId { kind: "entity" });
        } else if entities.insert(e.id.as_str(), e).is_some() {
            violations.push(Violation::DuplicateId {
                kind: "entity",
                id: e.id.clone(),
            });
        }
        if e.label.is_empty() {
            violations.push(Violation::EmptyLabel {
                kind: "entity",
                id: e.id.clone(),
            });
        }
        if e.types.is_empty() {
            violations.push(Violation::EntityWithoutTypes {
                entity: e.id.clone(),
            });
        }
        for t in &e.types {
            if !type_ids.contains(t.as_str()) {
                violations.push(Violation::UnknownEntityType {
                    entity: e.id.clone(),
                    type_id: t.clone(),
                });
            }
        }
    }

    let mut seen_facts = HashSet::new();
    for fact in &parts.facts {
        if !seen_facts.insert(fact) {
            violations.push(Violation::DuplicateFact { fact: fact.clone() });
            continue;
        }
        let subject = entities.get(fact.subject.as_str());
        if subject.is_none() {
            violations.push(Violation::DanglingSubject { fact: fact.clone() });
        }
        let Some(relation) = relations.get(fact.relation.as_str()) else {
            violations.push(Violation::UnknownRelation { fact: fact.clone() });
            continue;
        };
        if let Some(subject) = subject {
            if !subject.types.contains(&relation.domain) {
                violations.push(Violation::SubjectTypeMismatch {
                    fact: fact.clone(),
                    domain: relation.domain.clone(),
                });
            }
        }
        match (&fact.object, &relation.range) {
            (Value::Entity(id), Range::Type(t)) => match entities.get(id.as_str()) {
                None => violations.push(Violation::DanglingObject { fact: fact.clone() }),
                Some(obj) if !obj.types.contains(t) => {
                    violations.push(Violation::ObjectKindMismatch {
                        fact: fact.clone(),
                        expected: t.clone(),
                    })
                }
                Some(_) => {}
            },
            (Value::Literal(lit), Range::Literal(kind)) if lit.kind() == *kind => {}
            (Value::Entity(id), Range::Literal(_)) if !entities.contains_key(id.as_str()) => {
                violations.push(Violation::DanglingObject { fact: fact.clone() })
            }
            (_, range) => violations.push(Violation::ObjectKindMismatch {
                fact: fact.clone(),
                expected: match range {
                    Range::Type(t) => t.clone(),
                    Range::Literal(k) => format!("{k}:"),
                },
            }),
        }
    }

    ValidationReport { violations }
}

/// Validated, indexed, immutable knowledge base.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    types: BTreeMap<String, TypeDef>,
    relations: BTreeMap<String, RelationDef>,
    entities: BTreeMap<String, EntityDef>,
    facts: Vec<Fact>,
    by_subject: BTreeMap<String, Vec<usize>>,
    by_object: BTreeMap<Value, Vec<usize>>,
    by_relation: BTreeMap<String, Vec<usize>>,
    instances: BTreeMap<String, BTreeSet<String>>,
}

impl KnowledgeBase {
    pub fn from_parts(parts: KbParts) -> Result<Self, IntegrityError> {
        let report = validate_parts(&parts);
        if let Some(first) = report.violations.into_iter().next() {
            return Err(IntegrityError(first));
        }
        let KbParts {
            types,
            relations,
            entities,
            mut facts,
        } = parts;
        facts.sort();

        let mut by_subject: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_object: BTreeMap<Value, Vec<usize>> = BTreeMap::new();
        let mut by_relation: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, f) in facts.iter().enumerate() {
            by_subject.entry(f.subject.clone()).or_default().push(i);
            by_object.entry(f.object.clone()).or_default().push(i);
            by_relation.entry(f.relation.clone()).or_default().push(i);
        }
        let mut instances: BTreeMap<String, BTreeSet<String>> = types
            .iter()
            .map(|t| (t.id.clone(), BTreeSet::new()))
            .collect();
        for e in &entities {
            for t in &e.types {
                instances.entry(t.clone()).or_default().insert(e.id.clone());
            }
        }

        Ok(KnowledgeBase {
            types: types.into_iter().map(|t| (t.id.clone(), t)).collect(),
            relations: relations.into_iter().map(|r| (r.id.clone(), r)).collect(),
            entities: entities.into_iter().map(|e| (e.id.clone(), e)).collect(),
            facts,
            by_subject,
            by_object,
            by_relation,
            instances,
        })
    }

    pub fn to_parts(&self) -> KbParts {
        KbParts {
            types: self.types.values().cloned().collect(),
            relations: self.relations.values().cloned().collect(),
            entities: self.entities.values().cloned().collect(),
            facts: self.facts.clone(),
        }
    }

    /// Re-checks the invariants; always clean for a constructed KB.
    pub fn validate(&self) -> ValidationReport {
        validate_parts(&self.to_parts())
    }

    pub fn type_def(&self, id: &str) -> Option<&TypeDef> {
        self.types.get(id)
    }

    pub fn relation(&self, id: &str) -> Option<&RelationDef> {
        self.relations.get(id)
    }

    pub fn entity(&self, id: &str) -> Option<&EntityDef> {
        self.entities.get(id)
    }

    pub fn types(&self) -> impl Iterator<Item = &TypeDef> {
        self.types.values()
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationDef> {
        self.relations.values()
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityDef> {
        self.entities.values()
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn has_fact(&self, fact: &Fact) -> bool {
        self.facts.binary_search(fact).is_ok()
    }

    pub fn facts_from<'a>(&'a self, subject: &str) -> impl Iterator<Item = &'a Fact> + 'a {
        self.by_subject
            .get(subject)
            .into_iter()
            .flatten()
            .map(move |&i| &self.facts[i])
    }

    pub fn facts_to<'a>(&'a self, object: &Value) -> impl Iterator<Item = &'a Fact> + 'a {
        self.by_object
            .get(object)
            .into_iter()
            .flatten()
            .map(move |&i| &self.facts[i])
    }

    pub fn facts_with<'a>(&'a self, relation: &str) -> impl Iterator<Item = &'a Fact> + 'a {
        self.by_relation
            .get(relation)
            .into_iter()
            .flatten()
            .map(move |&i| &self.facts[i])
    }

    /// Entities whose type set contains `type_id`.
    pub fn instances_of(&self, type_id: &str) -> impl Iterator<Item = &String> {
        self.instances.get(type_id).into_iter().flatten()
    }

    /// Number of facts mentioning the entity as subject or object.
    pub fn degree(&self, entity: &str) -> usize {
        let as_subject = self.by_subject.get(entity).map_or(0, Vec::len);
        let as_object = self
            .by_object
            .get(&Value::Entity(entity.to_string()))
            .map_or(0, Vec::len);
        as_subject + as_object
    }

    pub fn counts(&self) -> KbCounts {
        KbCounts {
            types: self.types.len(),
            relations: self.relations.len(),
            entities: self.entities.len(),
            facts: self.facts.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KbCounts {
    pub types: usize,
    pub relations: usize,
    pub entities: usize,
    pub facts: usize,
}

/// The running example: researcher/university/city with two facts.
pub fn toy_parts() -> KbParts {
    let ty = |id: &str| TypeDef {
        id: id.into(),
        label: id.into(),
    };
    let ent = |id: &str, label: &str, t: &str| EntityDef {
        id: id.into(),
        label: label.into(),
        types: BTreeSet::from([t.to_string()]),
        aliases: Vec::new(),
    };
    KbParts {
        types: vec![ty("researcher"), ty("university"), ty("city")],
        relations: vec![
            RelationDef {
                id: "works_at".into(),
                label: "works at".into(),
                domain: "researcher".into(),
                range: Range::Type("university".into()),
            },
            RelationDef {
                id: "located_in".into(),
                label: "located in".into(),
                domain: "university".into(),
                range: Range::Type("city".into()),
            },
        ],
        entities: vec![
            ent("c_manning", "C. Manning", "researcher"),
            ent("stanford", "Stanford", "university"),
            ent("palo_alto", "Palo Alto", "city"),
        ],
        facts: vec![
            Fact::entity("c_manning", "works_at", "stanford"),
            Fact::entity("stanford", "located_in", "palo_alto"),
        ],
    }
}

pub fn toy_kb() -> KnowledgeBase {
    KnowledgeBase::from_parts(toy_parts()).expect("toy KB is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_counts() {
        let kb = toy_kb();
        assert_eq!(
            kb.counts(),
            KbCounts {
                types: 3,
                relations: 2,
                entities: 3,
                facts: 2
            }
        );
        assert!(kb.validate().is_clean());
    }

    #[test]
    fn indexes_match_facts() {
        let kb = toy_kb();
        assert_eq!(kb.facts_from("c_manning").count(), 1);
        assert_eq!(kb.facts_to(&Value::Entity("stanford".into())).count(), 1);
        assert_eq!(kb.facts_with("located_in").count(), 1);
        assert_eq!(kb.degree("stanford"), 2);
        assert_eq!(kb.instances_of("city").collect::<Vec<_>>(), ["palo_alto"]);
    }

    #[test]
    fn dangling_subject_is_one_violation() {
        let mut parts = toy_parts();
        parts.entities.retain(|e| e.id != "palo_alto");
        parts.facts.retain(|f| f.relation != "located_in");
        parts
            .facts
            .push(Fact::entity("ghost", "works_at", "stanford"));
        let report = validate_parts(&parts);
        assert_eq!(report.violations.len(), 1, "{:?}", report.violations);
        assert!(matches!(
            report.violations[0],
            Violation::DanglingSubject { .. }
        ));
    }

    #[test]
    fn duplicate_entity_is_one_violation() {
        let mut parts = toy_parts();
        let dup = parts.entities[1].clone();
        parts.entities.push(dup);
        let report = validate_parts(&parts);
        assert_eq!(
            report.violations,
            vec![Violation::DuplicateId {
                kind: "entity",
                id: "stanford".into()
            }]
        );
    }

    #[test]
    fn domain_mismatch_is_rejected_naming_the_fact() {
        let mut parts = toy_parts();
        parts
            .facts
            .push(Fact::entity("palo_alto", "works_at", "stanford"));
        let err = KnowledgeBase::from_parts(parts).unwrap_err();
        assert!(
            err.to_string().contains("(palo_alto, works_at, stanford)"),
            "{err}"
        );
    }

    #[test]
    fn literal_kind_is_checked() {
        let mut parts = toy_parts();
        parts.relations.push(RelationDef {
            id: "founded".into(),
            label: "founded".into(),
            domain: "university".into(),
            range: Range::Literal(LiteralKind::Number),
        });
        parts.facts.push(Fact::new(
            "stanford",
            "founded",
            Value::Literal(Literal::Text("long ago".into())),
        ));
        let report = validate_parts(&parts);
        assert!(matches!(
            report.violations[..],
            [Violation::ObjectKindMismatch { .. }]
        ));
    }
}
