//! S-expression logical forms.
//!
//! Grammar (tokens are whitespace-delimited, parentheses self-delimiting):
//!
//! ```text
//! expr   := class | entity | literal
//!         | "(" "AND" expr expr+ ")"
//!         | "(" "JOIN" relref expr ")"
//!         | "(" "COUNT" expr ")"
//!         | "(" ("ARGMIN" | "ARGMAX") expr relation ")"
//!         | "(" ("lt" | "le" | "gt" | "ge") relation number ")"
//! relref := relation | "(" "R" relation ")"
//! ```
//!
//! A bare identifier in the argument position of `JOIN` is an entity;
//! anywhere else it is a class. Tokens of the form `-?digits(.digits)?` are
//! number literals and `"..."` is a string literal (`\"` and `\\` escape).
//! `AND` with more than two operands is right-nested.

mod sketch;

use std::fmt;

use thiserror::Error;

use crate::value::{Literal, Number};

pub use sketch::{
    build_sketch_inventory, extract_sketch, parse_sketch, InventoryEntry, InventoryError, Sketch,
    SketchInventory, SketchLiteral, SlotCounts,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 4] = [CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];

    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Lt => "lt",
            CmpOp::Le => "le",
            CmpOp::Gt => "gt",
            CmpOp::Ge => "ge",
        }
    }

    fn from_token(tok: &str) -> Option<Self> {
        CmpOp::ALL.into_iter().find(|op| op.as_str() == tok)
    }

    pub fn holds(self, lhs: &Number, rhs: &Number) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelRef {
    Forward(String),
    Inverse(String),
}

impl RelRef {
    pub fn id(&self) -> &str {
        match self {
            RelRef::Forward(r) | RelRef::Inverse(r) => r,
        }
    }

    pub fn is_inverse(&self) -> bool {
        matches!(self, RelRef::Inverse(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SExpr {
    Class(String),
    Entity(String),
    Literal(Literal),
    Join(RelRef, Box<SExpr>),
    And(Box<SExpr>, Box<SExpr>),
    Count(Box<SExpr>),
    ArgMin(Box<SExpr>, String),
    ArgMax(Box<SExpr>, String),
    Cmp(CmpOp, String, Number),
}

impl SExpr {
    pub fn class(id: &str) -> Self {
        SExpr::Class(id.to_string())
    }

    pub fn entity(id: &str) -> Self {
        SExpr::Entity(id.to_string())
    }

    pub fn join(rel: RelRef, arg: SExpr) -> Self {
        SExpr::Join(rel, Box::new(arg))
    }

    pub fn and(lhs: SExpr, rhs: SExpr) -> Self {
        SExpr::And(Box::new(lhs), Box::new(rhs))
    }

    pub fn count(inner: SExpr) -> Self {
        SExpr::Count(Box::new(inner))
    }

    pub fn depth(&self) -> usize {
        match self {
            SExpr::Class(_) | SExpr::Entity(_) | SExpr::Literal(_) | SExpr::Cmp(..) => 1,
            SExpr::Join(_, e) | SExpr::Count(e) | SExpr::ArgMin(e, _) | SExpr::ArgMax(e, _) => {
                1 + e.depth()
            }
            SExpr::And(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Visits every node, parents before children.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a SExpr)) {
        f(self);
        match self {
            SExpr::Join(_, e) | SExpr::Count(e) | SExpr::ArgMin(e, _) | SExpr::ArgMax(e, _) => {
                e.walk(f)
            }
            SExpr::And(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            SExpr::Class(_) | SExpr::Entity(_) | SExpr::Literal(_) | SExpr::Cmp(..) => {}
        }
    }

    pub fn relations(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |node| match node {
            SExpr::Join(r, _) => out.push(r.id()),
            SExpr::ArgMin(_, r) | SExpr::ArgMax(_, r) | SExpr::Cmp(_, r, _) => out.push(r.as_str()),
            _ => {}
        });
        out
    }

    pub fn classes(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |node| {
            if let SExpr::Class(c) = node {
                out.push(c.as_str());
            }
        });
        out
    }

    pub fn entities(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |node| {
            if let SExpr::Entity(e) = node {
                out.push(e.as_str());
            }
        });
        out
    }

    pub fn has_count(&self) -> bool {
        let mut found = false;
        self.walk(&mut |node| found |= matches!(node, SExpr::Count(_)));
        found
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("arity error at byte {pos}: `{function}` {message}")]
    Arity {
        pos: usize,
        function: String,
        message: String,
    },
    #[error("unknown function `{name}` at byte {pos}")]
    UnknownFunction { pos: usize, name: String },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TokenKind {
    Open,
    Close,
    Atom(String),
    Quoted(String),
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub kind: TokenKind,
    pub pos: usize,
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, ch)) = chars.peek() {
        match ch {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                tokens.push(Token {
                    kind: TokenKind::Open,
                    pos,
                });
            }
            ')' => {
                chars.next();
                tokens.push(Token {
                    kind: TokenKind::Close,
                    pos,
                });
            }
            '"' => {
                chars.next();
                let mut body = String::new();
                let mut closed = false;
                while let Some((_, c)) = chars.next() {
                    match c {
                        '"' => {
                            closed = true;
                            break;
                        }
                        '\\' => match chars.next() {
                            Some((_, esc @ ('"' | '\\'))) => body.push(esc),
                            _ => {
                                return Err(ParseError::Syntax {
                                    pos,
                                    message: "bad escape in string literal".into(),
                                })
                            }
                        },
                        c => body.push(c),
                    }
                }
                if !closed {
                    return Err(ParseError::Syntax {
                        pos,
                        message: "unterminated string literal".into(),
                    });
                }
                tokens.push(Token {
                    kind: TokenKind::Quoted(body),
                    pos,
                });
            }
            _ => {
                let mut atom = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == '"' {
                        break;
                    }
                    atom.push(c);
                    chars.next();
                }
                tokens.push(Token {
                    kind: TokenKind::Atom(atom),
                    pos,
                });
            }
        }
    }
    Ok(tokens)
}

/// Shared recursive-descent machinery for logical forms and sketches.
pub(crate) struct Cursor {
    tokens: Vec<Token>,
    idx: usize,
    end: usize,
}

impl Cursor {
    pub fn new(tokens: Vec<Token>, text_len: usize) -> Self {
        Cursor {
            tokens,
            idx: 0,
            end: text_len,
        }
    }

    pub fn pos(&self) -> usize {
        self.tokens.get(self.idx).map_or(self.end, |t| t.pos)
    }

    pub fn peek(&self) -> Option<&TokenKind> {
        self.tokens.get(self.idx).map(|t| &t.kind)
    }

    pub fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.idx).cloned();
        self.idx += 1;
        tok
    }

    pub fn syntax(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            pos: self.pos(),
            message: message.into(),
        }
    }

    pub fn expect_close(
        &mut self,
        function: &str,
        open_pos: usize,
        what: &str,
    ) -> Result<(), ParseError> {
        match self.peek() {
            Some(TokenKind::Close) => {
                self.next();
                Ok(())
            }
            Some(_) => Err(ParseError::Arity {
                pos: open_pos,
                function: function.into(),
                message: format!("takes {what}; found extra arguments"),
            }),
            None => Err(self.syntax("unexpected end of input, expected `)`")),
        }
    }

    pub fn expect_atom(
        &mut self,
        function: &str,
        open_pos: usize,
        what: &str,
    ) -> Result<String, ParseError> {
        match self.next() {
            Some(Token {
                kind: TokenKind::Atom(a),
                ..
            }) => Ok(a),
            Some(Token {
                kind: TokenKind::Close,
                ..
            }) => Err(ParseError::Arity {
                pos: open_pos,
                function: function.into(),
                message: format!("is missing {what}"),
            }),
            Some(tok) => Err(ParseError::Syntax {
                pos: tok.pos,
                message: format!("expected {what}"),
            }),
            None => Err(self.syntax(format!("unexpected end of input, expected {what}"))),
        }
    }

    pub fn at_close(&self) -> bool {
        matches!(self.peek(), Some(TokenKind::Close))
    }

    pub fn finish(&self) -> Result<(), ParseError> {
        if self.idx < self.tokens.len() {
            Err(self.syntax("trailing input after expression"))
        } else {
            Ok(())
        }
    }
}

pub(crate) fn missing_operand(function: &str, open_pos: usize, what: &str) -> ParseError {
    ParseError::Arity {
        pos: open_pos,
        function: function.into(),
        message: format!("is missing {what}"),
    }
}

/// Parses a logical form.
pub fn parse_sexpr(text: &str) -> Result<SExpr, ParseError> {
    let mut cursor = Cursor::new(tokenize(text)?, text.len());
    let expr = parse_expr(&mut cursor, Position::Set)?;
    cursor.finish()?;
    Ok(expr)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Position {
    Set,
    JoinArg,
}

fn parse_expr(c: &mut Cursor, position: Position) -> Result<SExpr, ParseError> {
    let Some(tok) = c.next() else {
        return Err(c.syntax("unexpected end of input, expected an expression"));
    };
    match tok.kind {
        TokenKind::Close => Err(ParseError::Syntax {
            pos: tok.pos,
            message: "unexpected `)`".into(),
        }),
        TokenKind::Quoted(s) => Ok(SExpr::Literal(Literal::Text(s))),
        TokenKind::Atom(a) => Ok(atom_expr(a, position)),
        TokenKind::Open => {
            let open = tok.pos;
            let head = match c.next() {
                Some(Token {
                    kind: TokenKind::Atom(a),
                    ..
                }) => a,
                Some(t) => {
                    return Err(ParseError::Syntax {
                        pos: t.pos,
                        message: "expected a function name after `(`".into(),
                    })
                }
                None => return Err(c.syntax("unexpected end of input after `(`")),
            };
            parse_application(c, &head, open)
        }
    }
}

fn atom_expr(atom: String, position: Position) -> SExpr {
    if Number::looks_numeric(&atom) {
        // looks_numeric guarantees the parse
        return SExpr::Literal(Literal::Number(atom.parse().expect("numeric token")));
    }
    match position {
        Position::JoinArg => SExpr::Entity(atom),
        Position::Set => SExpr::Class(atom),
    }
}

fn parse_operand(
    c: &mut Cursor,
    head: &str,
    open: usize,
    position: Position,
) -> Result<SExpr, ParseError> {
    if c.at_close() {
        return Err(missing_operand(head, open, "an operand"));
    }
    parse_expr(c, position)
}

fn parse_application(c: &mut Cursor, head: &str, open: usize) -> Result<SExpr, ParseError> {
    match head {
        "AND" => {
            let mut operands = vec![parse_operand(c, head, open, Position::Set)?];
            while !c.at_close() {
                if c.peek().is_none() {
                    return Err(c.syntax("unexpected end of input, expected `)`"));
                }
                operands.push(parse_expr(c, Position::Set)?);
            }
            c.next();
            if operands.len() < 2 {
                return Err(ParseError::Arity {
                    pos: open,
                    function: "AND".into(),
                    message: "needs at least two operands".into(),
                });
            }
            Ok(nest_and(operands))
        }
        "JOIN" => {
            let rel = parse_relref(c, open)?;
            let arg = parse_operand(c, head, open, Position::JoinArg)?;
            c.expect_close(head, open, "a relation and one argument")?;
            Ok(SExpr::join(rel, arg))
        }
        "COUNT" => {
            let inner = parse_operand(c, head, open, Position::Set)?;
            c.expect_close(head, open, "one argument")?;
            Ok(SExpr::count(inner))
        }
        "ARGMIN" | "ARGMAX" => {
            let inner = parse_operand(c, head, open, Position::Set)?;
            let rel = c.expect_atom(head, open, "a relation")?;
            c.expect_close(head, open, "an expression and a relation")?;
            Ok(if head == "ARGMIN" {
                SExpr::ArgMin(Box::new(inner), rel)
            } else {
                SExpr::ArgMax(Box::new(inner), rel)
            })
        }
        "R" => Err(ParseError::Syntax {
            pos: open,
            message: "`R` is only allowed as the relation of JOIN".into(),
        }),
        other => {
            if let Some(op) = CmpOp::from_token(other) {
                let rel = c.expect_atom(head, open, "a relation")?;
                let value_pos = c.pos();
                let value = c.expect_atom(head, open, "a number")?;
                let number = value.parse().map_err(|_| ParseError::Syntax {
                    pos: value_pos,
                    message: format!("`{other}` needs a number literal, found `{value}`"),
                })?;
                c.expect_close(head, open, "a relation and a number")?;
                Ok(SExpr::Cmp(op, rel, number))
            } else {
                Err(ParseError::UnknownFunction {
                    pos: open,
                    name: other.into(),
                })
            }
        }
    }
}

fn parse_relref(c: &mut Cursor, open: usize) -> Result<RelRef, ParseError> {
    match c.peek() {
        Some(TokenKind::Open) => {
            let inner_open = c.next().map(|t| t.pos).unwrap_or(open);
            match c.next() {
                Some(Token {
                    kind: TokenKind::Atom(a),
                    ..
                }) if a == "R" => {}
                _ => {
                    return Err(ParseError::Syntax {
                        pos: inner_open,
                        message: "expected `(R relation)`".into(),
                    })
                }
            }
            let rel = c.expect_atom("R", inner_open, "a relation")?;
            c.expect_close("R", inner_open, "one relation")?;
            Ok(RelRef::Inverse(rel))
        }
        Some(TokenKind::Atom(_)) => {
            let rel = c.expect_atom("JOIN", open, "a relation")?;
            Ok(RelRef::Forward(rel))
        }
        Some(TokenKind::Close) => Err(missing_operand("JOIN", open, "a relation")),
        _ => Err(c.syntax("expected a relation")),
    }
}

pub(crate) fn nest_and(mut operands: Vec<SExpr>) -> SExpr {
    let mut acc = operands.pop().expect("non-empty operand list");
    while let Some(next) = operands.pop() {
        acc = SExpr::and(next, acc);
    }
    acc
}

pub(crate) fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for ch in text.chars() {
        if ch == '"' || ch == '\\' {
            out.push('\\');
        }
        out.push(ch);
    }
    out.push('"');
    out
}

pub(crate) fn print_literal(lit: &Literal) -> String {
    match lit {
        Literal::Number(n) => n.to_string(),
        Literal::Text(t) => quote(t),
    }
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SExpr::Class(id) | SExpr::Entity(id) => f.write_str(id),
            SExpr::Literal(lit) => f.write_str(&print_literal(lit)),
            SExpr::Join(RelRef::Forward(r), arg) => write!(f, "(JOIN {r} {arg})"),
            SExpr::Join(RelRef::Inverse(r), arg) => write!(f, "(JOIN (R {r}) {arg})"),
            SExpr::And(a, b) => write!(f, "(AND {a} {b})"),
            SExpr::Count(e) => write!(f, "(COUNT {e})"),
            SExpr::ArgMin(e, r) => write!(f, "(ARGMIN {e} {r})"),
            SExpr::ArgMax(e, r) => write!(f, "(ARGMAX {e} {r})"),
            SExpr::Cmp(op, r, v) => write!(f, "({} {r} {v})", op.as_str()),
        }
    }
}

/// Canonical surface syntax.
pub fn print_sexpr(expr: &SExpr) -> String {
    expr.to_string()
}

/// Flattens nested ANDs, orders operands by printed form and re-nests them
/// to the right.
pub fn canonicalize(expr: &SExpr) -> SExpr {
    match expr {
        SExpr::Class(_) | SExpr::Entity(_) | SExpr::Literal(_) | SExpr::Cmp(..) => expr.clone(),
        SExpr::Join(r, e) => SExpr::join(r.clone(), canonicalize(e)),
        SExpr::Count(e) => SExpr::count(canonicalize(e)),
        SExpr::ArgMin(e, r) => SExpr::ArgMin(Box::new(canonicalize(e)), r.clone()),
        SExpr::ArgMax(e, r) => SExpr::ArgMax(Box::new(canonicalize(e)), r.clone()),
        SExpr::And(..) => {
            let mut operands = Vec::new();
            flatten_and(expr, &mut operands);
            let mut keyed: Vec<(String, SExpr)> = operands
                .into_iter()
                .map(|op| {
                    let canon = canonicalize(op);
                    (canon.to_string(), canon)
                })
                .collect();
            keyed.sort_by(|a, b| a.0.cmp(&b.0));
            nest_and(keyed.into_iter().map(|(_, e)| e).collect())
        }
    }
}

fn flatten_and<'a>(expr: &'a SExpr, out: &mut Vec<&'a SExpr>) {
    match expr {
        SExpr::And(a, b) => {
            flatten_and(a, out);
            flatten_and(b, out);
        }
        other => out.push(other),
    }
}

/// Canonical printed form, used as the identity of a logical form.
pub fn canonical_key(expr: &SExpr) -> String {
    canonicalize(expr).to_string()
}
