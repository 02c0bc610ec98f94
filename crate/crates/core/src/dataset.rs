//! Questions with gold targets, and their JSON-lines format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::executor::AnswerSet;
use crate::sexpr::{canonical_key, parse_sexpr, SExpr};

/// A logical form, or NK when no valid one exists for the KB.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LfVerdict {
    Form(SExpr),
    NoKnowledge,
}

impl LfVerdict {
    pub fn form(&self) -> Option<&SExpr> {
        match self {
            LfVerdict::Form(e) => Some(e),
            LfVerdict::NoKnowledge => None,
        }
    }

    pub fn is_nk(&self) -> bool {
        matches!(self, LfVerdict::NoKnowledge)
    }

    /// Canonical printed form, or `NK`.
    pub fn key(&self) -> String {
        match self {
            LfVerdict::Form(e) => canonical_key(e),
            LfVerdict::NoKnowledge => "NK".to_string(),
        }
    }

    fn to_json(&self) -> Json {
        match self {
            LfVerdict::Form(e) => Json::String(e.to_string()),
            LfVerdict::NoKnowledge => Json::String("NK".into()),
        }
    }

    fn from_json(v: &Json) -> Result<Self, String> {
        match v {
            Json::String(s) if s == "NK" => Ok(LfVerdict::NoKnowledge),
            Json::String(s) => parse_sexpr(s)
                .map(LfVerdict::Form)
                .map_err(|e| e.to_string()),
            other => Err(format!("logical form must be a string, found {other}")),
        }
    }
}

/// An answer set, or NA.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AnswerVerdict {
    Answers(AnswerSet),
    NoAnswer,
}

impl AnswerVerdict {
    pub fn answers(&self) -> Option<&AnswerSet> {
        match self {
            AnswerVerdict::Answers(a) => Some(a),
            AnswerVerdict::NoAnswer => None,
        }
    }

    pub fn is_na(&self) -> bool {
        matches!(self, AnswerVerdict::NoAnswer)
    }

    /// Empty execution results are reported as NA.
    pub fn from_execution(answers: AnswerSet) -> Self {
        if answers.is_empty() {
            AnswerVerdict::NoAnswer
        } else {
            AnswerVerdict::Answers(answers)
        }
    }

    pub(crate) fn to_json(&self) -> Json {
        match self {
            AnswerVerdict::Answers(a) => Json::Array(a.iter().cloned().map(Json::String).collect()),
            AnswerVerdict::NoAnswer => Json::String("NA".into()),
        }
    }

    pub(crate) fn from_json(v: &Json) -> Result<Self, String> {
        match v {
            Json::String(s) if s == "NA" => Ok(AnswerVerdict::NoAnswer),
            Json::Array(items) => {
                let mut set = AnswerSet::default();
                for item in items {
                    match item {
                        Json::String(s) => {
                            set.0.insert(s.clone());
                        }
                        other => return Err(format!("answers must be strings, found {other}")),
                    }
                }
                Ok(AnswerVerdict::Answers(set))
            }
            other => Err(format!(
                "answer must be a list of strings or \"NA\", found {other}"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Answerable,
    MissingType,
    MissingRelation,
    MissingMentionEntity,
    MissingOtherEntity,
    MissingFact,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Answerable,
        Category::MissingType,
        Category::MissingRelation,
        Category::MissingMentionEntity,
        Category::MissingOtherEntity,
        Category::MissingFact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Answerable => "answerable",
            Category::MissingType => "missing-type",
            Category::MissingRelation => "missing-relation",
            Category::MissingMentionEntity => "missing-mention-entity",
            Category::MissingOtherEntity => "missing-other-entity",
            Category::MissingFact => "missing-fact",
        }
    }

    /// Schema-drop and mention-entity-drop categories have an NK gold form.
    pub fn has_nk_gold(self) -> bool {
        matches!(
            self,
            Category::MissingType | Category::MissingRelation | Category::MissingMentionEntity
        )
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generalization {
    Iid,
    Compositional,
    ZeroShot,
}

impl Generalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Generalization::Iid => "iid",
            Generalization::Compositional => "compositional",
            Generalization::ZeroShot => "zero-shot",
        }
    }
}

impl FromStr for Generalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Generalization::Iid,
            Generalization::Compositional,
            Generalization::ZeroShot,
        ]
        .into_iter()
        .find(|g| g.as_str() == s)
        .ok_or_else(|| format!("unknown generalization label `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAExample {
    pub qid: String,
    pub question: String,
    pub gold_lf: LfVerdict,
    pub gold_answer: AnswerVerdict,
    /// Answers on the complete KB, kept for lenient F1.
    pub gold_answer_ideal: Option<AnswerSet>,
    pub category: Category,
    pub generalization: Option<Generalization>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExampleError {
    #[error("qid `{qid}`: NK gold logical form requires an NA gold answer")]
    NkWithAnswer { qid: String },
    #[error("qid `{qid}`: answerable example needs a non-empty gold answer")]
    AnswerableWithoutAnswer { qid: String },
}

impl QAExample {
    pub fn answerable(qid: &str, question: &str, lf: SExpr, answer: AnswerSet) -> Self {
        QAExample {
            qid: qid.to_string(),
            question: question.to_string(),
            gold_lf: LfVerdict::Form(lf),
            gold_answer: AnswerVerdict::from_execution(answer),
            gold_answer_ideal: None,
            category: Category::Answerable,
            generalization: None,
        }
    }

    pub fn check(&self) -> Result<(), ExampleError> {
        if self.gold_lf.is_nk() && !self.gold_answer.is_na() {
            return Err(ExampleError::NkWithAnswer {
                qid: self.qid.clone(),
            });
        }
        if self.category == Category::Answerable
            && self.gold_answer.answers().is_none_or(AnswerSet::is_empty)
        {
            return Err(ExampleError::AnswerableWithoutAnswer {
                qid: self.qid.clone(),
            });
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("qid".into(), Json::String(self.qid.clone()));
        obj.insert("question".into(), Json::String(self.question.clone()));
        obj.insert("gold_lf".into(), self.gold_lf.to_json());
        obj.insert("gold_answer".into(), self.gold_answer.to_json());
        if let Some(ideal) = &self.gold_answer_ideal {
            obj.insert(
                "gold_answer_ideal".into(),
                AnswerVerdict::Answers(ideal.clone()).to_json(),
            );
        }
        obj.insert(
            "category".into(),
            Json::String(self.category.as_str().into()),
        );
        if let Some(g) = self.generalization {
            obj.insert("generalization".into(), Json::String(g.as_str().into()));
        }
        Json::Object(obj).to_string()
    }

    pub fn from_json_line(line: &str) -> Result<Self, String> {
        let v: Json = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let obj = v.as_object().ok_or("expected a JSON object")?;
        let field = |k: &str| obj.get(k).ok_or_else(|| format!("missing field `{k}`"));
        let string = |k: &str| -> Result<String, String> {
            field(k)?
                .as_str()
                .map(String::from)
                .ok_or_else(|| format!("`{k}` must be a string"))
        };
        let gold_answer_ideal = match obj.get("gold_answer_ideal") {
            None | Some(Json::Null) => None,
            Some(v) => match AnswerVerdict::from_json(v)? {
                AnswerVerdict::Answers(a) => Some(a),
                AnswerVerdict::NoAnswer => None,
            },
        };
        let generalization = match obj.get("generalization") {
            None | Some(Json::Null) => None,
            Some(Json::String(s)) => Some(s.parse()?),
            Some(other) => return Err(format!("`generalization` must be a string, found {other}")),
        };
        let example = QAExample {
            qid: string("qid")?,
            question: string("question")?,
            gold_lf: LfVerdict::from_json(field("gold_lf")?)?,
            gold_answer: AnswerVerdict::from_json(field("gold_answer")?)?,
            gold_answer_ideal,
            category: string("category")?.parse()?,
            generalization,
        };
        example.check().map_err(|e| e.to_string())?;
        Ok(example)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct JsonlError {
    pub line: usize,
    pub message: String,
}

/// Parses a JSON-lines dataset; blank lines and `#` header lines are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<QAExample>, JsonlError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            QAExample::from_json_line(l).map_err(|message| JsonlError {
                line: i + 1,
                message,
            })
        })
        .collect()
}

pub fn dataset_to_jsonl(examples: &[QAExample]) -> String {
    examples.iter().map(|e| e.to_json_line() + "\n").collect()
}
