//! Literal values and the answer-level value type.
//!
//! Numbers are exact decimals backed by big rationals so comparisons and
//! printed forms are bit-stable.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("invalid decimal literal `{0}`")]
pub struct NumberParseError(pub String);

/// An exact decimal number.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Number(BigRational);

impl Number {
    pub fn from_integer(n: i64) -> Self {
        Number(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn from_usize(n: usize) -> Self {
        Number(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn as_rational(&self) -> &BigRational {
        &self.0
    }

    /// Accepts `-?digits(.digits)?`.
    pub fn looks_numeric(token: &str) -> bool {
        let body = token.strip_prefix('-').unwrap_or(token);
        let (int, frac) = match body.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (body, None),
        };
        !int.is_empty()
            && int.bytes().all(|b| b.is_ascii_digit())
            && frac.is_none_or(|f| {
                !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit())
            })
    }
}

impl FromStr for Number {
    type Err = NumberParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if !Number::looks_numeric(s) {
            return Err(NumberParseError(s.to_string()));
        }
        let negative = s.starts_with('-');
        let body = s.trim_start_matches('-');
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        let digits: BigInt = format!("{int}{frac}")
            .parse()
            .map_err(|_| NumberParseError(s.to_string()))?;
        let scale = num_traits::pow(BigInt::from(10), frac.len());
        let mut value = BigRational::new(digits, scale);
        if negative {
            value = -value;
        }
        Ok(Number(value))
    }
}

impl fmt::Display for Number {
    /// Minimal decimal: no trailing zeros, no trailing point, `-0` never printed.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let value = &self.0;
        if value.is_zero() {
            return f.write_str("0");
        }
        let sign = if value.is_negative() { "-" } else { "" };
        let abs = value.abs();
        let mut scaled = abs.clone();
        let mut places = 0usize;
        let ten = BigRational::from_integer(BigInt::from(10));
        // Parsed decimals always terminate; the bound guards hand-built values.
        while !scaled.is_integer() && places < 64 {
            scaled *= &ten;
            places += 1;
        }
        let digits = scaled.round().to_integer().to_string();
        if places == 0 {
            return write!(f, "{sign}{digits}");
        }
        let padded = if digits.len() <= places {
            format!("{}{}", "0".repeat(places - digits.len() + 1), digits)
        } else {
            digits
        };
        let (int, frac) = padded.split_at(padded.len() - places);
        let frac = frac.trim_end_matches('0');
        if frac.is_empty() {
            write!(f, "{sign}{int}")
        } else {
            write!(f, "{sign}{int}.{frac}")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LiteralKind {
    Number,
    String,
}

impl LiteralKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LiteralKind::Number => "number",
            LiteralKind::String => "string",
        }
    }
}

impl fmt::Display for LiteralKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Literal {
    Number(Number),
    Text(String),
}

impl Literal {
    pub fn number(n: i64) -> Self {
        Literal::Number(Number::from_integer(n))
    }

    pub fn kind(&self) -> LiteralKind {
        match self {
            Literal::Number(_) => LiteralKind::Number,
            Literal::Text(_) => LiteralKind::String,
        }
    }

    pub fn as_number(&self) -> Option<&Number> {
        match self {
            Literal::Number(n) => Some(n),
            Literal::Text(_) => None,
        }
    }

    /// Canonical answer-string form: minimal decimal or the raw text.
    pub fn canonical(&self) -> String {
        match self {
            Literal::Number(n) => n.to_string(),
            Literal::Text(t) => t.clone(),
        }
    }

    /// `number:<decimal>` / `string:<text>`, as used in `facts.tsv`.
    pub fn to_tagged(&self) -> String {
        match self {
            Literal::Number(n) => format!("number:{n}"),
            Literal::Text(t) => format!("string:{t}"),
        }
    }

    pub fn from_tagged(s: &str) -> Option<Result<Literal, NumberParseError>> {
        if let Some(rest) = s.strip_prefix("number:") {
            Some(rest.parse().map(Literal::Number))
        } else {
            s.strip_prefix("string:")
                .map(|rest| Ok(Literal::Text(rest.to_string())))
        }
    }
}

/// Anything a logical form can denote: an entity or a literal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Entity(String),
    Literal(Literal),
}

impl Value {
    pub fn canonical(&self) -> String {
        match self {
            Value::Entity(id) => id.clone(),
            Value::Literal(lit) => lit.canonical(),
        }
    }

    pub fn as_entity(&self) -> Option<&str> {
        match self {
            Value::Entity(id) => Some(id),
            Value::Literal(_) => None,
        }
    }

    pub fn as_number(&self) -> Option<&Number> {
        match self {
            Value::Literal(lit) => lit.as_number(),
            Value::Entity(_) => None,
        }
    }
}
