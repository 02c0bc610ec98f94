//! Set-semantics evaluation and schema-level type checking of logical forms.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{KnowledgeBase, Range};
use crate::sexpr::{RelRef, SExpr};
use crate::value::{Literal, LiteralKind, Number, Value};

/// Answers in canonical string form (entity ids, minimal decimals, raw text).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerSet(pub BTreeSet<String>);

impl AnswerSet {
    pub fn from_values<'a>(values: impl IntoIterator<Item = &'a Value>) -> Self {
        AnswerSet(values.into_iter().map(Value::canonical).collect())
    }

    pub fn from_strs<S: AsRef<str>>(items: impl IntoIterator<Item = S>) -> Self {
        AnswerSet(items.into_iter().map(|s| s.as_ref().to_string()).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.0.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResultKind {
    Entities(BTreeSet<String>),
    Literal(LiteralKind),
    Count,
}

impl fmt::Display for ResultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResultKind::Entities(types) => {
                let types: Vec<&str> = types.iter().map(String::as_str).collect();
                write!(f, "{{{}}}", types.join(", "))
            }
            ResultKind::Literal(k) => write!(f, "{k} literal"),
            ResultKind::Count => f.write_str("count"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypingFailure {
    /// Child indices from the root, e.g. `root/1/0`.
    pub path: String,
    pub rule: String,
}

impl fmt::Display for TypingFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at {}: {}", self.path, self.rule)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypingResult {
    pub valid: bool,
    pub kind: Option<ResultKind>,
    pub failure: Option<TypingFailure>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("logical form is not valid for this KB: {0}")]
    Invalid(TypingFailure),
}

/// Bottom-up type inference over the schema and entity type sets.
pub fn check_validity(expr: &SExpr, kb: &KnowledgeBase) -> TypingResult {
    match infer(expr, kb, "root") {
        Ok(kind) => TypingResult {
            valid: true,
            kind: Some(kind),
            failure: None,
        },
        Err(failure) => TypingResult {
            valid: false,
            kind: None,
            failure: Some(failure),
        },
    }
}

/// Kind of a (sub)expression, or why it is ill-typed.
pub fn infer(expr: &SExpr, kb: &KnowledgeBase, path: &str) -> Result<ResultKind, TypingFailure> {
    let fail = |rule: String| TypingFailure {
        path: path.to_string(),
        rule,
    };
    let child = |i: usize| format!("{path}/{i}");
    match expr {
        SExpr::Class(t) => kb
            .type_def(t)
            .map(|_| ResultKind::Entities(BTreeSet::from([t.clone()])))
            .ok_or_else(|| fail(format!("unknown type `{t}`"))),
        SExpr::Entity(e) => kb
            .entity(e)
            .map(|def| ResultKind::Entities(def.types.clone()))
            .ok_or_else(|| fail(format!("unknown entity `{e}`"))),
        SExpr::Literal(lit) => Ok(ResultKind::Literal(lit.kind())),
        SExpr::Join(rel, arg) => {
            let def = kb
                .relation(rel.id())
                .ok_or_else(|| fail(format!("unknown relation `{}`", rel.id())))?;
            let arg_kind = infer(arg, kb, &child(1))?;
            match rel {
                RelRef::Forward(r) => {
                    let ok = match (&def.range, &arg_kind) {
                        (Range::Type(t), ResultKind::Entities(types)) => types.contains(t),
                        (Range::Literal(k), ResultKind::Literal(ak)) => k == ak,
                        _ => false,
                    };
                    if !ok {
                        return Err(fail(format!(
                            "JOIN {r}: argument kind {arg_kind} does not match range {}",
                            range_name(&def.range)
                        )));
                    }
                    Ok(ResultKind::Entities(BTreeSet::from([def.domain.clone()])))
                }
                RelRef::Inverse(r) => {
                    let ok = matches!(&arg_kind, ResultKind::Entities(types) if types.contains(&def.domain));
                    if !ok {
                        return Err(fail(format!(
                            "JOIN (R {r}): argument kind {arg_kind} lacks domain `{}`",
                            def.domain
                        )));
                    }
                    Ok(match &def.range {
                        Range::Type(t) => ResultKind::Entities(BTreeSet::from([t.clone()])),
                        Range::Literal(k) => ResultKind::Literal(*k),
                    })
                }
            }
        }
        SExpr::And(a, b) => {
            let ka = infer(a, kb, &child(1))?;
            let kb_ = infer(b, kb, &child(2))?;
            match (ka, kb_) {
                (ResultKind::Entities(x), ResultKind::Entities(y)) => {
                    let both: BTreeSet<String> = x.intersection(&y).cloned().collect();
                    if both.is_empty() {
                        Err(fail("AND: operand types have an empty intersection".into()))
                    } else {
                        Ok(ResultKind::Entities(both))
                    }
                }
                (x, y) => Err(fail(format!(
                    "AND: operands must be entity sets, found {x} and {y}"
                ))),
            }
        }
        SExpr::Count(inner) => {
            infer(inner, kb, &child(1))?;
            Ok(ResultKind::Count)
        }
        SExpr::ArgMin(inner, r) | SExpr::ArgMax(inner, r) => {
            let def = kb
                .relation(r)
                .ok_or_else(|| fail(format!("unknown relation `{r}`")))?;
            let kind = infer(inner, kb, &child(1))?;
            let ResultKind::Entities(types) = kind else {
                return Err(fail(format!("superlative over non-entity kind {kind}")));
            };
            if !types.contains(&def.domain) {
                return Err(fail(format!(
                    "superlative: operand lacks domain `{}` of `{r}`",
                    def.domain
                )));
            }
            if def.range != Range::Literal(LiteralKind::Number) {
                return Err(fail(format!("superlative: `{r}` is not number-valued")));
            }
            Ok(ResultKind::Entities(BTreeSet::from([def.domain.clone()])))
        }
        SExpr::Cmp(op, r, _) => {
            let def = kb
                .relation(r)
                .ok_or_else(|| fail(format!("unknown relation `{r}`")))?;
            if def.range != Range::Literal(LiteralKind::Number) {
                return Err(fail(format!("{}: `{r}` is not number-valued", op.as_str())));
            }
            Ok(ResultKind::Entities(BTreeSet::from([def.domain.clone()])))
        }
    }
}

fn range_name(range: &Range) -> String {
    match range {
        Range::Type(t) => format!("`{t}`"),
        Range::Literal(k) => format!("{k} literal"),
    }
}

/// Executes a logical form after checking it is valid for `kb`.
pub fn execute(expr: &SExpr, kb: &KnowledgeBase) -> Result<AnswerSet, ExecError> {
    let typing = check_validity(expr, kb);
    if let Some(failure) = typing.failure {
        return Err(ExecError::Invalid(failure));
    }
    Ok(AnswerSet::from_values(&denote(expr, kb)))
}

/// Denotation without the validity check. Unknown identifiers denote the
/// empty set; ill-typed combinations fall out of the set operations.
pub fn denote(expr: &SExpr, kb: &KnowledgeBase) -> BTreeSet<Value> {
    match expr {
        SExpr::Class(t) => kb.instances_of(t).cloned().map(Value::Entity).collect(),
        SExpr::Entity(e) => {
            if kb.entity(e).is_some() {
                BTreeSet::from([Value::Entity(e.clone())])
            } else {
                BTreeSet::new()
            }
        }
        SExpr::Literal(lit) => BTreeSet::from([Value::Literal(lit.clone())]),
        SExpr::Join(RelRef::Forward(r), arg) => {
            let mut out = BTreeSet::new();
            for y in denote(arg, kb) {
                for f in kb.facts_to(&y).filter(|f| &f.relation == r) {
                    out.insert(Value::Entity(f.subject.clone()));
                }
            }
            out
        }
        SExpr::Join(RelRef::Inverse(r), arg) => {
            let mut out = BTreeSet::new();
            for x in denote(arg, kb) {
                let Some(x) = x.as_entity() else { continue };
                for f in kb.facts_from(x).filter(|f| &f.relation == r) {
                    out.insert(f.object.clone());
                }
            }
            out
        }
        SExpr::And(a, b) => {
            let left = denote(a, kb);
            if left.is_empty() {
                return left;
            }
            let right = denote(b, kb);
            left.intersection(&right).cloned().collect()
        }
        SExpr::Count(inner) => BTreeSet::from([Value::Literal(Literal::Number(
            Number::from_usize(denote(inner, kb).len()),
        ))]),
        SExpr::ArgMin(inner, r) => extremum(&denote(inner, kb), r, kb, false),
        SExpr::ArgMax(inner, r) => extremum(&denote(inner, kb), r, kb, true),
        SExpr::Cmp(op, r, v) => kb
            .facts_with(r)
            .filter(|f| f.object.as_number().is_some_and(|w| op.holds(w, v)))
            .map(|f| Value::Entity(f.subject.clone()))
            .collect(),
    }
}

fn extremum(
    items: &BTreeSet<Value>,
    r: &str,
    kb: &KnowledgeBase,
    maximize: bool,
) -> BTreeSet<Value> {
    let mut best: Option<Number> = None;
    let mut winners = BTreeSet::new();
    for item in items {
        let Some(id) = item.as_entity() else { continue };
        let own = kb
            .facts_from(id)
            .filter(|f| f.relation == r)
            .filter_map(|f| f.object.as_number())
            .cloned();
        let own = if maximize { own.max() } else { own.min() };
        let Some(own) = own else { continue };
        let better = match &best {
            None => true,
            Some(b) => {
                if maximize {
                    own > *b
                } else {
                    own < *b
                }
            }
        };
        if better {
            best = Some(own);
            winners.clear();
            winners.insert(item.clone());
        } else if best.as_ref() == Some(&own) {
            winners.insert(item.clone());
        }
    }
    winners
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{toy_kb, toy_parts, EntityDef, Fact, KbParts, RelationDef, TypeDef};
    use crate::sexpr::parse_sexpr;

    fn lf(text: &str) -> SExpr {
        parse_sexpr(text).unwrap()
    }

    #[test]
    fn running_example_executes() {
        let kb = toy_kb();
        let answer = execute(&lf("(AND university (JOIN (R works_at) c_manning))"), &kb).unwrap();
        assert_eq!(answer, AnswerSet::from_strs(["stanford"]));
    }

    #[test]
    fn broken_path_executes_empty() {
        let mut parts = toy_parts();
        parts.facts.retain(|f| f.relation != "works_at");
        let kb = KnowledgeBase::from_parts(parts).unwrap();
        let answer = execute(&lf("(AND university (JOIN (R works_at) c_manning))"), &kb).unwrap();
        assert!(answer.is_empty());
    }

    #[test]
    fn count_of_empty_type_is_zero() {
        let mut parts = toy_parts();
        parts.types.push(TypeDef {
            id: "lab".into(),
            label: "lab".into(),
        });
        let kb = KnowledgeBase::from_parts(parts).unwrap();
        assert_eq!(
            execute(&lf("(COUNT lab)"), &kb).unwrap(),
            AnswerSet::from_strs(["0"])
        );
    }

    #[test]
    fn typing_running_example() {
        let t = check_validity(
            &lf("(AND university (JOIN (R works_at) c_manning))"),
            &toy_kb(),
        );
        assert!(t.valid);
        assert_eq!(
            t.kind,
            Some(ResultKind::Entities(BTreeSet::from([
                "university".to_string()
            ])))
        );
    }

    #[test]
    fn typing_failures() {
        let kb = toy_kb();
        let t = check_validity(&lf("(AND city university)"), &kb);
        assert!(!t.valid);
        assert!(t.failure.unwrap().rule.contains("empty intersection"));

        let t = check_validity(&lf("(JOIN works_at palo_alto)"), &kb);
        assert!(!t.valid);
        assert!(t.kind.is_none());

        let t = check_validity(&lf("(AND university (JOIN (R works_at) nobody))"), &kb);
        assert_eq!(t.failure.unwrap().path, "root/2/1");
        assert!(execute(&lf("(COUNT nothing)"), &kb).is_err());
    }

    fn numeric_kb() -> KnowledgeBase {
        let mut parts: KbParts = toy_parts();
        parts.relations.push(RelationDef {
            id: "founded".into(),
            label: "founded".into(),
            domain: "university".into(),
            range: Range::Literal(LiteralKind::Number),
        });
        for (id, _) in [("mit", ()), ("cmu", ()), ("ucl", ())] {
            parts.entities.push(EntityDef {
                id: id.into(),
                label: id.into(),
                types: BTreeSet::from(["university".to_string()]),
                aliases: vec![],
            });
        }
        for (id, year) in [
            ("stanford", "1885"),
            ("mit", "1861"),
            ("cmu", "1900"),
            ("ucl", "1826"),
            ("ucl", "1900"),
        ] {
            parts.facts.push(Fact::new(
                id,
                "founded",
                Value::Literal(Literal::Number(year.parse().unwrap())),
            ));
        }
        KnowledgeBase::from_parts(parts).unwrap()
    }

    #[test]
    fn superlatives_keep_ties() {
        let kb = numeric_kb();
        // ucl's own maximum is 1900, tying cmu.
        let max = execute(&lf("(ARGMAX university founded)"), &kb).unwrap();
        assert_eq!(max, AnswerSet::from_strs(["cmu", "ucl"]));
        let min = execute(&lf("(ARGMIN university founded)"), &kb).unwrap();
        assert_eq!(min, AnswerSet::from_strs(["ucl"]));
    }

    #[test]
    fn superlative_over_attribute_free_set_is_empty() {
        let kb = numeric_kb();
        let t = check_validity(&lf("(ARGMAX (JOIN works_at palo_alto) founded)"), &kb);
        assert!(!t.valid);
        // {palo_alto} has no `founded` facts.
        let empty = denote(&lf("(ARGMAX (JOIN (R located_in) stanford) founded)"), &kb);
        assert!(empty.is_empty());
    }

    #[test]
    fn comparatives_use_exact_decimals() {
        let kb = numeric_kb();
        let ge = execute(&lf("(ge founded 1885.0)"), &kb).unwrap();
        assert_eq!(ge, AnswerSet::from_strs(["cmu", "stanford", "ucl"]));
        let lt = execute(&lf("(lt founded 1861)"), &kb).unwrap();
        assert_eq!(lt, AnswerSet::from_strs(["ucl"]));
        let inverse = execute(&lf("(JOIN (R founded) stanford)"), &kb).unwrap();
        assert_eq!(inverse, AnswerSet::from_strs(["1885"]));
        let by_literal = execute(&lf("(JOIN founded 1900)"), &kb).unwrap();
        assert_eq!(by_literal, AnswerSet::from_strs(["cmu", "ucl"]));
    }
}
