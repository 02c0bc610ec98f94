//! Sketches: logical forms with KB identifiers replaced by typed slots.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{
    missing_operand, print_literal, tokenize, CmpOp, Cursor, ParseError, SExpr, Token, TokenKind,
};
use crate::value::{Literal, Number};

const TYPE_SLOT: &str = "TYPE";
const ENTITY_SLOT: &str = "ENT";
const RELATION_SLOT: &str = "REL";
const NUMBER_SLOT: &str = "NUM";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SketchLiteral {
    Value(Literal),
    /// Filled from the question at generation time.
    NumberSlot,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sketch {
    TypeSlot,
    EntitySlot,
    Literal(SketchLiteral),
    Join { inverse: bool, arg: Box<Sketch> },
    And(Box<Sketch>, Box<Sketch>),
    Count(Box<Sketch>),
    ArgMin(Box<Sketch>),
    ArgMax(Box<Sketch>),
    Cmp(CmpOp, SketchLiteral),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SlotCounts {
    pub types: usize,
    pub relations: usize,
    pub entities: usize,
}

impl Sketch {
    pub fn slot_counts(&self) -> SlotCounts {
        let mut counts = SlotCounts::default();
        self.count_into(&mut counts);
        counts
    }

    fn count_into(&self, c: &mut SlotCounts) {
        match self {
            Sketch::TypeSlot => c.types += 1,
            Sketch::EntitySlot => c.entities += 1,
            Sketch::Literal(_) => {}
            Sketch::Join { arg, .. } => {
                c.relations += 1;
                arg.count_into(c);
            }
            Sketch::And(a, b) => {
                a.count_into(c);
                b.count_into(c);
            }
            Sketch::Count(e) => e.count_into(c),
            Sketch::ArgMin(e) | Sketch::ArgMax(e) => {
                e.count_into(c);
                c.relations += 1;
            }
            Sketch::Cmp(..) => c.relations += 1,
        }
    }

    pub fn number_slots(&self) -> usize {
        match self {
            Sketch::TypeSlot | Sketch::EntitySlot => 0,
            Sketch::Literal(l) | Sketch::Cmp(_, l) => usize::from(*l == SketchLiteral::NumberSlot),
            Sketch::Join { arg: e, .. }
            | Sketch::Count(e)
            | Sketch::ArgMin(e)
            | Sketch::ArgMax(e) => e.number_slots(),
            Sketch::And(a, b) => a.number_slots() + b.number_slots(),
        }
    }

    /// Replaces number literals with `NUM` slots.
    pub fn abstract_literals(&self) -> Sketch {
        let lit = |l: &SketchLiteral| match l {
            SketchLiteral::Value(Literal::Number(_)) => SketchLiteral::NumberSlot,
            other => other.clone(),
        };
        match self {
            Sketch::TypeSlot | Sketch::EntitySlot => self.clone(),
            Sketch::Literal(l) => Sketch::Literal(lit(l)),
            Sketch::Join { inverse, arg } => Sketch::Join {
                inverse: *inverse,
                arg: Box::new(arg.abstract_literals()),
            },
            Sketch::And(a, b) => Sketch::And(
                Box::new(a.abstract_literals()),
                Box::new(b.abstract_literals()),
            ),
            Sketch::Count(e) => Sketch::Count(Box::new(e.abstract_literals())),
            Sketch::ArgMin(e) => Sketch::ArgMin(Box::new(e.abstract_literals())),
            Sketch::ArgMax(e) => Sketch::ArgMax(Box::new(e.abstract_literals())),
            Sketch::Cmp(op, l) => Sketch::Cmp(*op, lit(l)),
        }
    }

    /// Inventory key: printed form with number literals abstracted.
    pub fn key(&self) -> String {
        self.abstract_literals().to_string()
    }

    /// Fills `NUM` slots left to right (pre-order). `None` if there are
    /// fewer numbers than slots.
    pub fn fill_numbers(&self, numbers: &[Number]) -> Option<Sketch> {
        let mut iter = numbers.iter();
        self.fill_with(&mut iter)
    }

    fn fill_with<'a>(&self, numbers: &mut impl Iterator<Item = &'a Number>) -> Option<Sketch> {
        let mut lit = |l: &SketchLiteral| -> Option<SketchLiteral> {
            match l {
                SketchLiteral::NumberSlot => numbers
                    .next()
                    .map(|n| SketchLiteral::Value(Literal::Number(n.clone()))),
                other => Some(other.clone()),
            }
        };
        Some(match self {
            Sketch::TypeSlot | Sketch::EntitySlot => self.clone(),
            Sketch::Literal(l) => Sketch::Literal(lit(l)?),
            Sketch::Cmp(op, l) => Sketch::Cmp(*op, lit(l)?),
            Sketch::Join { inverse, arg } => Sketch::Join {
                inverse: *inverse,
                arg: Box::new(arg.fill_with(numbers)?),
            },
            Sketch::And(a, b) => {
                let a = a.fill_with(numbers)?;
                let b = b.fill_with(numbers)?;
                Sketch::And(Box::new(a), Box::new(b))
            }
            Sketch::Count(e) => Sketch::Count(Box::new(e.fill_with(numbers)?)),
            Sketch::ArgMin(e) => Sketch::ArgMin(Box::new(e.fill_with(numbers)?)),
            Sketch::ArgMax(e) => Sketch::ArgMax(Box::new(e.fill_with(numbers)?)),
        })
    }

    pub fn has_count(&self) -> bool {
        match self {
            Sketch::Count(_) => true,
            Sketch::TypeSlot | Sketch::EntitySlot | Sketch::Literal(_) | Sketch::Cmp(..) => false,
            Sketch::Join { arg: e, .. } | Sketch::ArgMin(e) | Sketch::ArgMax(e) => e.has_count(),
            Sketch::And(a, b) => a.has_count() || b.has_count(),
        }
    }
}

fn print_sketch_literal(l: &SketchLiteral) -> String {
    match l {
        SketchLiteral::Value(lit) => print_literal(lit),
        SketchLiteral::NumberSlot => NUMBER_SLOT.to_string(),
    }
}

impl fmt::Display for Sketch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sketch::TypeSlot => f.write_str(TYPE_SLOT),
            Sketch::EntitySlot => f.write_str(ENTITY_SLOT),
            Sketch::Literal(l) => f.write_str(&print_sketch_literal(l)),
            Sketch::Join {
                inverse: false,
                arg,
            } => write!(f, "(JOIN {RELATION_SLOT} {arg})"),
            Sketch::Join { inverse: true, arg } => write!(f, "(JOIN (R {RELATION_SLOT}) {arg})"),
            Sketch::And(a, b) => write!(f, "(AND {a} {b})"),
            Sketch::Count(e) => write!(f, "(COUNT {e})"),
            Sketch::ArgMin(e) => write!(f, "(ARGMIN {e} {RELATION_SLOT})"),
            Sketch::ArgMax(e) => write!(f, "(ARGMAX {e} {RELATION_SLOT})"),
            Sketch::Cmp(op, l) => {
                write!(
                    f,
                    "({} {RELATION_SLOT} {})",
                    op.as_str(),
                    print_sketch_literal(l)
                )
            }
        }
    }
}

/// Abstracts every KB identifier of a logical form into a slot.
pub fn extract_sketch(expr: &SExpr) -> Sketch {
    match expr {
        SExpr::Class(_) => Sketch::TypeSlot,
        SExpr::Entity(_) => Sketch::EntitySlot,
        SExpr::Literal(l) => Sketch::Literal(SketchLiteral::Value(l.clone())),
        SExpr::Join(r, arg) => Sketch::Join {
            inverse: r.is_inverse(),
            arg: Box::new(extract_sketch(arg)),
        },
        SExpr::And(a, b) => Sketch::And(Box::new(extract_sketch(a)), Box::new(extract_sketch(b))),
        SExpr::Count(e) => Sketch::Count(Box::new(extract_sketch(e))),
        SExpr::ArgMin(e, _) => Sketch::ArgMin(Box::new(extract_sketch(e))),
        SExpr::ArgMax(e, _) => Sketch::ArgMax(Box::new(extract_sketch(e))),
        SExpr::Cmp(op, _, v) => Sketch::Cmp(*op, SketchLiteral::Value(Literal::Number(v.clone()))),
    }
}

/// Parses the printed form of a sketch (`TYPE`, `ENT`, `REL`, `NUM` slots).
pub fn parse_sketch(text: &str) -> Result<Sketch, ParseError> {
    let mut c = Cursor::new(tokenize(text)?, text.len());
    let sketch = parse_node(&mut c)?;
    c.finish()?;
    Ok(sketch)
}

fn parse_node(c: &mut Cursor) -> Result<Sketch, ParseError> {
    let Some(tok) = c.next() else {
        return Err(c.syntax("unexpected end of input, expected a sketch"));
    };
    match tok.kind {
        TokenKind::Close => Err(ParseError::Syntax {
            pos: tok.pos,
            message: "unexpected `)`".into(),
        }),
        TokenKind::Quoted(s) => Ok(Sketch::Literal(SketchLiteral::Value(Literal::Text(s)))),
        TokenKind::Atom(a) => match a.as_str() {
            TYPE_SLOT => Ok(Sketch::TypeSlot),
            ENTITY_SLOT => Ok(Sketch::EntitySlot),
            NUMBER_SLOT => Ok(Sketch::Literal(SketchLiteral::NumberSlot)),
            _ if Number::looks_numeric(&a) => Ok(Sketch::Literal(SketchLiteral::Value(
                Literal::Number(a.parse().expect("numeric token")),
            ))),
            _ => Err(ParseError::Syntax {
                pos: tok.pos,
                message: format!("concrete identifier `{a}` in a sketch"),
            }),
        },
        TokenKind::Open => {
            let open = tok.pos;
            let head = match c.next() {
                Some(Token {
                    kind: TokenKind::Atom(a),
                    ..
                }) => a,
                _ => {
                    return Err(ParseError::Syntax {
                        pos: open,
                        message: "expected a function name after `(`".into(),
                    })
                }
            };
            parse_sketch_application(c, &head, open)
        }
    }
}

fn operand(c: &mut Cursor, head: &str, open: usize) -> Result<Sketch, ParseError> {
    if c.at_close() {
        return Err(missing_operand(head, open, "an operand"));
    }
    parse_node(c)
}

fn expect_rel_slot(c: &mut Cursor, head: &str, open: usize) -> Result<(), ParseError> {
    let pos = c.pos();
    let atom = c.expect_atom(head, open, "a relation slot")?;
    if atom == RELATION_SLOT {
        Ok(())
    } else {
        Err(ParseError::Syntax {
            pos,
            message: format!("expected `{RELATION_SLOT}`, found `{atom}`"),
        })
    }
}

fn parse_sketch_application(c: &mut Cursor, head: &str, open: usize) -> Result<Sketch, ParseError> {
    match head {
        "AND" => {
            let mut operands = vec![operand(c, head, open)?];
            while !c.at_close() {
                if c.peek().is_none() {
                    return Err(c.syntax("unexpected end of input, expected `)`"));
                }
                operands.push(parse_node(c)?);
            }
            c.next();
            if operands.len() < 2 {
                return Err(ParseError::Arity {
                    pos: open,
                    function: "AND".into(),
                    message: "needs at least two operands".into(),
                });
            }
            let mut acc = operands.pop().expect("two operands");
            while let Some(next) = operands.pop() {
                acc = Sketch::And(Box::new(next), Box::new(acc));
            }
            Ok(acc)
        }
        "JOIN" => {
            let inverse = match c.peek() {
                Some(TokenKind::Open) => {
                    let inner_open = c.next().map_or(open, |t| t.pos);
                    match c.next() {
                        Some(Token {
                            kind: TokenKind::Atom(a),
                            ..
                        }) if a == "R" => {}
                        _ => {
                            return Err(ParseError::Syntax {
                                pos: inner_open,
                                message: "expected `(R REL)`".into(),
                            })
                        }
                    }
                    expect_rel_slot(c, "R", inner_open)?;
                    c.expect_close("R", inner_open, "one relation")?;
                    true
                }
                _ => {
                    expect_rel_slot(c, head, open)?;
                    false
                }
            };
            let arg = operand(c, head, open)?;
            c.expect_close(head, open, "a relation and one argument")?;
            Ok(Sketch::Join {
                inverse,
                arg: Box::new(arg),
            })
        }
        "COUNT" => {
            let inner = operand(c, head, open)?;
            c.expect_close(head, open, "one argument")?;
            Ok(Sketch::Count(Box::new(inner)))
        }
        "ARGMIN" | "ARGMAX" => {
            let inner = Box::new(operand(c, head, open)?);
            expect_rel_slot(c, head, open)?;
            c.expect_close(head, open, "an expression and a relation")?;
            Ok(if head == "ARGMIN" {
                Sketch::ArgMin(inner)
            } else {
                Sketch::ArgMax(inner)
            })
        }
        other => {
            let Some(op) = CmpOp::ALL.into_iter().find(|op| op.as_str() == other) else {
                return Err(ParseError::UnknownFunction {
                    pos: open,
                    name: other.into(),
                });
            };
            expect_rel_slot(c, head, open)?;
            let pos = c.pos();
            let value = c.expect_atom(head, open, "a number")?;
            let lit = if value == NUMBER_SLOT {
                SketchLiteral::NumberSlot
            } else {
                let n: Number = value.parse().map_err(|_| ParseError::Syntax {
                    pos,
                    message: format!("`{other}` needs a number, found `{value}`"),
                })?;
                SketchLiteral::Value(Literal::Number(n))
            };
            c.expect_close(head, open, "a relation and a number")?;
            Ok(Sketch::Cmp(op, lit))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InventoryEntry {
    pub key: String,
    /// Parsed from `key`; number literals are `NUM` slots.
    pub sketch: Sketch,
    pub frequency: usize,
}

/// Finite set of sketch shapes observed in training data, most frequent first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchInventory {
    entries: Vec<InventoryEntry>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum InventoryError {
    #[error("cannot build a sketch inventory from zero logical forms")]
    Empty,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

impl SketchInventory {
    pub fn entries(&self) -> &[InventoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.key == key)
    }

    /// One `frequency<TAB>key` line per entry.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\n", e.frequency, e.key))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self, InventoryError> {
        let mut counts = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |message: String| InventoryError::Malformed {
                line: idx + 1,
                message,
            };
            let (freq, key) = line
                .split_once('\t')
                .ok_or_else(|| malformed("expected `frequency<TAB>sketch`".into()))?;
            let freq: usize = freq
                .parse()
                .map_err(|_| malformed(format!("bad frequency `{freq}`")))?;
            if freq == 0 {
                return Err(malformed("frequency must be at least 1".into()));
            }
            let sketch = parse_sketch(key).map_err(|e| malformed(e.to_string()))?;
            if sketch.key() != key {
                return Err(malformed(format!("`{key}` is not in key form")));
            }
            if counts.insert(key.to_string(), (sketch, freq)).is_some() {
                return Err(malformed(format!("duplicate key `{key}`")));
            }
        }
        if counts.is_empty() {
            return Err(InventoryError::Empty);
        }
        Ok(Self::from_counts(counts))
    }

    fn from_counts(counts: BTreeMap<String, (Sketch, usize)>) -> Self {
        let mut entries: Vec<InventoryEntry> = counts
            .into_iter()
            .map(|(key, (sketch, frequency))| InventoryEntry {
                key,
                sketch,
                frequency,
            })
            .collect();
        entries.sort_by(|a, b| {
            b.frequency
                .cmp(&a.frequency)
                .then_with(|| a.key.cmp(&b.key))
        });
        SketchInventory { entries }
    }
}

pub fn build_sketch_inventory<'a>(
    train_lfs: impl IntoIterator<Item = &'a SExpr>,
) -> Result<SketchInventory, InventoryError> {
    let mut counts: BTreeMap<String, (Sketch, usize)> = BTreeMap::new();
    for lf in train_lfs {
        let abstracted = extract_sketch(lf).abstract_literals();
        let key = abstracted.to_string();
        counts.entry(key).or_insert((abstracted, 0)).1 += 1;
    }
    if counts.is_empty() {
        return Err(InventoryError::Empty);
    }
    Ok(SketchInventory::from_counts(counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::parse_sexpr;

    fn sk(lf: &str) -> Sketch {
        extract_sketch(&parse_sexpr(lf).unwrap())
    }

    #[test]
    fn running_example_sketch() {
        let s = sk("(AND university (JOIN (R works_at) c_manning))");
        assert_eq!(s.to_string(), "(AND TYPE (JOIN (R REL) ENT))");
        assert_eq!(
            s.slot_counts(),
            SlotCounts {
                types: 1,
                relations: 1,
                entities: 1
            }
        );
    }

    #[test]
    fn count_sketch_without_type() {
        let s = sk("(COUNT (JOIN works_at stanford))");
        assert_eq!(s.to_string(), "(COUNT (JOIN REL ENT))");
        assert_eq!(
            s.slot_counts(),
            SlotCounts {
                types: 0,
                relations: 1,
                entities: 1
            }
        );
    }

    #[test]
    fn comparative_keeps_literal() {
        let s = sk("(ge founded_year 1900)");
        assert_eq!(s.to_string(), "(ge REL 1900)");
        assert_eq!(
            s.slot_counts(),
            SlotCounts {
                types: 0,
                relations: 1,
                entities: 0
            }
        );
        assert_eq!(s.key(), "(ge REL NUM)");
    }

    #[test]
    fn sketch_parse_roundtrip() {
        for text in [
            "(AND TYPE (JOIN (R REL) ENT))",
            "(ARGMAX (AND TYPE (JOIN REL ENT)) REL)",
            "(AND TYPE (lt REL NUM))",
            "(COUNT (JOIN REL \"x y\"))",
            "(JOIN REL 12.5)",
        ] {
            assert_eq!(parse_sketch(text).unwrap().to_string(), text);
        }
        assert!(parse_sketch("(AND university TYPE)").is_err());
        assert!(parse_sketch("(JOIN works_at ENT)").is_err());
    }

    #[test]
    fn fill_numbers_left_to_right() {
        let s = parse_sketch("(AND (ge REL NUM) (lt REL NUM))").unwrap();
        let filled = s
            .fill_numbers(&[Number::from_integer(3), Number::from_integer(7)])
            .unwrap();
        assert_eq!(filled.to_string(), "(AND (ge REL 3) (lt REL 7))");
        assert!(s.fill_numbers(&[Number::from_integer(3)]).is_none());
    }

    #[test]
    fn inventory_counts_shapes() {
        let lfs: Vec<SExpr> = [
            "(AND university (JOIN (R works_at) a))",
            "(AND city (JOIN (R located_in) b))",
            "(AND person (JOIN (R lives_in) c))",
            "(COUNT (JOIN works_at stanford))",
        ]
        .iter()
        .map(|t| parse_sexpr(t).unwrap())
        .collect();
        let inv = build_sketch_inventory(&lfs).unwrap();
        let freqs: Vec<usize> = inv.entries().iter().map(|e| e.frequency).collect();
        assert_eq!(freqs, [3, 1]);
        assert_eq!(inv.entries()[0].key, "(AND TYPE (JOIN (R REL) ENT))");
        assert_eq!(freqs.iter().sum::<usize>(), lfs.len());
    }

    #[test]
    fn inventory_edge_cases() {
        let one = parse_sexpr("(COUNT university)").unwrap();
        let inv = build_sketch_inventory([&one]).unwrap();
        assert_eq!(inv.len(), 1);
        assert_eq!(inv.entries()[0].frequency, 1);

        let dups = vec![one.clone(), one.clone(), one];
        let inv = build_sketch_inventory(&dups).unwrap();
        assert_eq!(inv.len(), 1);
        assert_eq!(inv.entries()[0].frequency, 3);

        assert_eq!(
            build_sketch_inventory(&[]).unwrap_err(),
            InventoryError::Empty
        );
    }

    #[test]
    fn literal_keys_are_abstracted() {
        let lfs: Vec<SExpr> = [
            "(AND city (ge population 1000))",
            "(AND town (ge population 5))",
        ]
        .iter()
        .map(|t| parse_sexpr(t).unwrap())
        .collect();
        let inv = build_sketch_inventory(&lfs).unwrap();
        assert_eq!(inv.len(), 1);
        assert_eq!(inv.entries()[0].key, "(AND TYPE (ge REL NUM))");
        let back = SketchInventory::from_text(&inv.to_text()).unwrap();
        assert_eq!(back, inv);
    }
}
