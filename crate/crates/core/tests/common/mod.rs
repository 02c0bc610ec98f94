//! Test-only helpers shared by the integration targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use kbqa_core::executor::AnswerSet;
use kbqa_core::kb::KnowledgeBase;
use kbqa_core::sexpr::{CmpOp, RelRef, SExpr};
use kbqa_core::value::{Literal, Number, Value};

/// Reference semantics written as set comprehensions over the raw fact
/// list; deliberately shares no code with the executor beyond value types.
pub fn brute_force(expr: &SExpr, kb: &KnowledgeBase) -> AnswerSet {
    AnswerSet::from_values(&eval(expr, kb))
}

fn eval(expr: &SExpr, kb: &KnowledgeBase) -> BTreeSet<Value> {
    let facts = kb.facts();
    match expr {
        SExpr::Class(t) => kb
            .entities()
            .filter(|e| e.types.iter().any(|x| x == t))
            .map(|e| Value::Entity(e.id.clone()))
            .collect(),
        SExpr::Entity(id) => kb
            .entities()
            .filter(|e| &e.id == id)
            .map(|e| Value::Entity(e.id.clone()))
            .collect(),
        SExpr::Literal(l) => [Value::Literal(l.clone())].into_iter().collect(),
        SExpr::Join(RelRef::Forward(r), arg) => {
            let xs = eval(arg, kb);
            facts
                .iter()
                .filter(|f| &f.relation == r && xs.contains(&f.object))
                .map(|f| Value::Entity(f.subject.clone()))
                .collect()
        }
        SExpr::Join(RelRef::Inverse(r), arg) => {
            let xs = eval(arg, kb);
            facts
                .iter()
                .filter(|f| &f.relation == r && xs.contains(&Value::Entity(f.subject.clone())))
                .map(|f| f.object.clone())
                .collect()
        }
        SExpr::And(a, b) => {
            let (xa, xb) = (eval(a, kb), eval(b, kb));
            xa.into_iter().filter(|v| xb.contains(v)).collect()
        }
        SExpr::Count(inner) => {
            let n = eval(inner, kb).len();
            [Value::Literal(Literal::Number(Number::from_integer(
                n as i64,
            )))]
            .into_iter()
            .collect()
        }
        SExpr::ArgMax(inner, r) => extreme(&eval(inner, kb), r, kb, true),
        SExpr::ArgMin(inner, r) => extreme(&eval(inner, kb), r, kb, false),
        SExpr::Cmp(op, r, v) => facts
            .iter()
            .filter(|f| &f.relation == r)
            .filter(|f| match &f.object {
                Value::Literal(Literal::Number(w)) => match op {
                    CmpOp::Lt => w < v,
                    CmpOp::Le => w <= v,
                    CmpOp::Gt => w > v,
                    CmpOp::Ge => w >= v,
                },
                _ => false,
            })
            .map(|f| Value::Entity(f.subject.clone()))
            .collect(),
    }
}

/// Members whose own best value equals the best over all members.
fn extreme(xs: &BTreeSet<Value>, r: &str, kb: &KnowledgeBase, max: bool) -> BTreeSet<Value> {
    let own = |x: &Value| -> Vec<Number> {
        kb.facts()
            .iter()
            .filter(|f| f.relation == r && Value::Entity(f.subject.clone()) == *x)
            .filter_map(|f| match &f.object {
                Value::Literal(Literal::Number(n)) => Some(n.clone()),
                _ => None,
            })
            .collect()
    };
    let pick = |vals: Vec<Number>| {
        if max {
            vals.into_iter().max()
        } else {
            vals.into_iter().min()
        }
    };
    let best_per: Vec<(Value, Number)> = xs
        .iter()
        .filter_map(|x| pick(own(x)).map(|n| (x.clone(), n)))
        .collect();
    let Some(best) = pick(best_per.iter().map(|(_, n)| n.clone()).collect()) else {
        return BTreeSet::new();
    };
    best_per
        .into_iter()
        .filter(|(_, n)| *n == best)
        .map(|(x, _)| x)
        .collect()
}
