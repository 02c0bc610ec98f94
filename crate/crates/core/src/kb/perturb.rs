//! KB reduction by deleting schema and data elements, with dataset relabeling.

use std::collections::BTreeSet;

use serde_json::Value as Json;
use thiserror::Error;

use super::{object_from_field, object_to_field, Fact, IntegrityError, KbParts, KnowledgeBase};
use crate::dataset::{AnswerVerdict, Category, LfVerdict, QAExample};
use crate::executor::{check_validity, execute};
use crate::sexpr::SExpr;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Deletion {
    Type(String),
    Relation(String),
    Entity(String),
    Fact(Fact),
}

impl Deletion {
    pub fn to_json_line(&self) -> String {
        let (kind, target) = match self {
            Deletion::Type(id) => ("type", Json::String(id.clone())),
            Deletion::Relation(id) => ("relation", Json::String(id.clone())),
            Deletion::Entity(id) => ("entity", Json::String(id.clone())),
            Deletion::Fact(f) => (
                "fact",
                Json::Array(vec![
                    Json::String(f.subject.clone()),
                    Json::String(f.relation.clone()),
                    Json::String(object_to_field(&f.object)),
                ]),
            ),
        };
        serde_json::json!({ "kind": kind, "target": target }).to_string()
    }

    pub fn from_json_line(line: &str) -> Result<Self, String> {
        let v: Json = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let kind = v
            .get("kind")
            .and_then(Json::as_str)
            .ok_or("missing string field `kind`")?;
        let target = v.get("target").ok_or("missing field `target`")?;
        let id = || {
            target
                .as_str()
                .map(String::from)
                .ok_or_else(|| format!("`{kind}` target must be a string"))
        };
        match kind {
            "type" => Ok(Deletion::Type(id()?)),
            "relation" => Ok(Deletion::Relation(id()?)),
            "entity" => Ok(Deletion::Entity(id()?)),
            "fact" => {
                let parts: Vec<&str> = target
                    .as_array()
                    .map(|a| a.iter().filter_map(Json::as_str).collect())
                    .unwrap_or_default();
                let [s, r, o] = parts[..] else {
                    return Err("fact target must be [subject, relation, object]".into());
                };
                Ok(Deletion::Fact(Fact::new(s, r, object_from_field(o)?)))
            }
            other => Err(format!("unknown deletion kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PerturbationPlan {
    pub deletions: Vec<Deletion>,
    /// Reserved for sampled plans; explicit plans do not consume it.
    pub seed: u64,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("plan line {line}: {message}")]
pub struct PlanParseError {
    pub line: usize,
    pub message: String,
}

impl PerturbationPlan {
    pub fn from_jsonl(text: &str, seed: u64) -> Result<Self, PlanParseError> {
        let deletions = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|(i, l)| {
                Deletion::from_json_line(l).map_err(|message| PlanParseError {
                    line: i + 1,
                    message,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(PerturbationPlan { deletions, seed })
    }

    pub fn to_jsonl(&self) -> String {
        self.deletions
            .iter()
            .map(|d| d.to_json_line() + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelabeledDataset {
    pub examples: Vec<QAExample>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PerturbError {
    #[error("plan target does not exist in the KB: {0:?}")]
    MissingTarget(Deletion),
    #[error("example `{qid}` is not answerable on the source KB")]
    NotAnswerable { qid: String },
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
}

/// Everything removed by a plan once cascades are applied.
#[derive(Debug, Default)]
struct Removed {
    types: BTreeSet<String>,
    relations: BTreeSet<String>,
    /// Relations removed only because their domain or range type went away.
    cascaded_relations: BTreeSet<String>,
    entities: BTreeSet<String>,
}

pub fn perturb_kb(
    kb: &KnowledgeBase,
    dataset: &[QAExample],
    plan: &PerturbationPlan,
) -> Result<(KnowledgeBase, RelabeledDataset), PerturbError> {
    for d in &plan.deletions {
        let exists = match d {
            Deletion::Type(id) => kb.type_def(id).is_some(),
            Deletion::Relation(id) => kb.relation(id).is_some(),
            Deletion::Entity(id) => kb.entity(id).is_some(),
            Deletion::Fact(f) => kb.has_fact(f),
        };
        if !exists {
            return Err(PerturbError::MissingTarget(d.clone()));
        }
    }

    let mut originals = Vec::with_capacity(dataset.len());
    for ex in dataset {
        let answer = ex
            .gold_lf
            .form()
            .and_then(|lf| execute(lf, kb).ok())
            .filter(|a| !a.is_empty())
            .ok_or_else(|| PerturbError::NotAnswerable {
                qid: ex.qid.clone(),
            })?;
        originals.push(answer);
    }

    let explicit_facts: BTreeSet<&Fact> = plan
        .deletions
        .iter()
        .filter_map(|d| match d {
            Deletion::Fact(f) => Some(f),
            _ => None,
        })
        .collect();

    let mut removed = Removed::default();
    for d in &plan.deletions {
        match d {
            Deletion::Type(id) => {
                removed.types.insert(id.clone());
            }
            Deletion::Relation(id) => {
                removed.relations.insert(id.clone());
            }
            Deletion::Entity(id) => {
                removed.entities.insert(id.clone());
            }
            Deletion::Fact(_) => {}
        }
    }

    let mut parts = kb.to_parts();
    parts.types.retain(|t| !removed.types.contains(&t.id));
    for r in &parts.relations {
        let touches_type = removed.types.contains(&r.domain)
            || r.range.as_type().is_some_and(|t| removed.types.contains(t));
        if touches_type && !removed.relations.contains(&r.id) {
            removed.cascaded_relations.insert(r.id.clone());
        }
    }
    parts.relations.retain(|r| {
        !removed.relations.contains(&r.id) && !removed.cascaded_relations.contains(&r.id)
    });
    for e in &mut parts.entities {
        e.types.retain(|t| !removed.types.contains(t));
        if e.types.is_empty() {
            removed.entities.insert(e.id.clone());
        }
    }
    parts.entities.retain(|e| !removed.entities.contains(&e.id));
    let relation_ids: BTreeSet<&str> = parts.relations.iter().map(|r| r.id.as_str()).collect();
    let entity_ids: BTreeSet<&str> = parts.entities.iter().map(|e| e.id.as_str()).collect();
    let kept_facts: Vec<Fact> = parts
        .facts
        .iter()
        .filter(|f| {
            !explicit_facts.contains(f)
                && relation_ids.contains(f.relation.as_str())
                && entity_ids.contains(f.subject.as_str())
                && f.object
                    .as_entity()
                    .is_none_or(|o| entity_ids.contains(o))
        })
        .cloned()
        .collect();
    parts.facts = kept_facts;
    let reduced = KnowledgeBase::from_parts(parts)?;

    // Same KB with only the explicitly deleted facts removed; separates
    // fact-caused emptiness from entity-caused emptiness.
    let facts_only = if explicit_facts.is_empty() {
        None
    } else {
        let mut p: KbParts = kb.to_parts();
        p.facts.retain(|f| !explicit_facts.contains(f));
        Some(KnowledgeBase::from_parts(p)?)
    };

    let examples = dataset
        .iter()
        .zip(originals)
        .map(|(ex, original)| {
            let lf = ex.gold_lf.form().expect("checked answerable above");
            let mut out = ex.clone();
            out.gold_answer_ideal = Some(original);
            if let Some(category) = schema_category(lf, &removed) {
                out.gold_lf = LfVerdict::NoKnowledge;
                out.gold_answer = AnswerVerdict::NoAnswer;
                out.category = category;
                return out;
            }
            if !check_validity(lf, &reduced).valid {
                out.gold_lf = LfVerdict::NoKnowledge;
                out.gold_answer = AnswerVerdict::NoAnswer;
                out.category = Category::MissingType;
                return out;
            }
            let answer = execute(lf, &reduced).expect("valid on reduced KB");
            if answer.is_empty() {
                let still_answerable_without_entity_loss = facts_only
                    .as_ref()
                    .is_none_or(|k| execute(lf, k).is_ok_and(|a| !a.is_empty()));
                out.category = if still_answerable_without_entity_loss {
                    Category::MissingOtherEntity
                } else {
                    Category::MissingFact
                };
                out.gold_answer = AnswerVerdict::NoAnswer;
            } else {
                out.category = Category::Answerable;
                out.gold_answer = AnswerVerdict::Answers(answer);
            }
            out
        })
        .collect();

    Ok((reduced, RelabeledDataset { examples }))
}

fn schema_category(lf: &SExpr, removed: &Removed) -> Option<Category> {
    if lf.classes().iter().any(|c| removed.types.contains(*c))
        || lf
            .relations()
            .iter()
            .any(|r| removed.cascaded_relations.contains(*r))
    {
        return Some(Category::MissingType);
    }
    if lf
        .relations()
        .iter()
        .any(|r| removed.relations.contains(*r))
    {
        return Some(Category::MissingRelation);
    }
    if lf.entities().iter().any(|e| removed.entities.contains(*e)) {
        return Some(Category::MissingMentionEntity);
    }
    None
}
