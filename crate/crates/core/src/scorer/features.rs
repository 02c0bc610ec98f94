//! Lexical and structural features of a (question, item) pair.

use std::collections::BTreeSet;

use crate::value::Number;

pub type FeatureVector = Vec<f64>;

pub const FEATURIZER_ID: &str = "lexical-v1";
pub const FEATURE_DIM: usize = 12;

pub const F_JACCARD: usize = 0;
pub const F_ITEM_COVERED: usize = 1;
pub const F_QUESTION_COVERED: usize = 2;
pub const F_LENGTH: usize = 3;
pub const F_COUNT_MATCH: usize = 4;
pub const F_SUPERLATIVE_MATCH: usize = 5;
pub const F_COMPARATIVE_MATCH: usize = 6;
pub const F_NUMBER_MATCH: usize = 7;
pub const F_RETRIEVED: usize = 8;
pub const F_CONSTRUCTED: usize = 9;
pub const F_CONSTANT: usize = 10;
pub const F_UNCUED_OPERATOR: usize = 11;

/// Provenance of a scored item.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ItemFlags {
    pub retrieved: bool,
    pub constructed: bool,
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "at", "by", "did", "do", "does", "for", "from", "has", "have", "how",
    "in", "is", "it", "of", "on", "or", "that", "the", "to", "was", "were", "what", "when",
    "where", "which", "who", "whom", "whose", "with",
];

/// Operator and slot words of the printed logical-form and sketch syntax.
const STRUCTURE_WORDS: &[&str] = &[
    "join", "r", "count", "argmax", "argmin", "lt", "le", "gt", "ge", "type", "ent", "rel", "num",
];

const SUPERLATIVE_CUES: &[&str] = &[
    "most", "least", "largest", "smallest", "highest", "lowest", "biggest", "oldest", "youngest",
    "earliest", "latest", "maximum", "minimum", "greatest", "fewest", "longest", "shortest",
];

const COMPARATIVE_CUES: &[&str] = &[
    "more",
    "less",
    "greater",
    "fewer",
    "larger",
    "smaller",
    "higher",
    "lower",
    "before",
    "after",
    "above",
    "below",
    "over",
    "under",
    "exceeding",
    "least",
    "most",
];

/// Lowercased alphanumeric runs.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn content(tokens: &[String]) -> BTreeSet<&str> {
    tokens
        .iter()
        .map(String::as_str)
        .filter(|t| !STOPWORDS.contains(t) && !STRUCTURE_WORDS.contains(t))
        .collect()
}

/// Decimal numbers appearing as whitespace-separated tokens, in order.
pub fn extract_numbers(text: &str) -> Vec<Number> {
    text.split_whitespace()
        .filter_map(|raw| {
            let t = raw
                .trim_start_matches(|c: char| !(c.is_alphanumeric() || c == '-'))
                .trim_end_matches(|c: char| !c.is_alphanumeric());
            t.parse().ok()
        })
        .collect()
}

pub fn has_count_cue(question: &str) -> bool {
    let q = question.to_lowercase();
    q.contains("how many") || q.contains("number of")
}

pub fn has_superlative_cue(question: &str) -> bool {
    tokens(question)
        .iter()
        .any(|t| SUPERLATIVE_CUES.contains(&t.as_str()))
}

pub fn has_comparative_cue(question: &str) -> bool {
    tokens(question)
        .iter()
        .any(|t| COMPARATIVE_CUES.contains(&t.as_str()))
}

struct Operators {
    count: bool,
    superlative: bool,
    comparative: bool,
}

fn operators(item: &str) -> Operators {
    Operators {
        count: item.contains("(COUNT"),
        superlative: item.contains("(ARGMAX") || item.contains("(ARGMIN"),
        comparative: ["(lt ", "(le ", "(gt ", "(ge "]
            .iter()
            .any(|p| item.contains(p)),
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn fraction(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

pub fn featurize(question: &str, item_text: &str, flags: ItemFlags) -> FeatureVector {
    let q_tokens = tokens(question);
    let i_tokens = tokens(item_text);
    let q_all: BTreeSet<&str> = q_tokens.iter().map(String::as_str).collect();
    let i_all: BTreeSet<&str> = i_tokens.iter().map(String::as_str).collect();
    let q_content = content(&q_tokens);
    let i_content = content(&i_tokens);

    let mut f = vec![0.0; FEATURE_DIM];
    f[F_JACCARD] = fraction(
        q_all.intersection(&i_all).count(),
        q_all.union(&i_all).count(),
    );
    f[F_ITEM_COVERED] = fraction(i_content.intersection(&q_content).count(), i_content.len());
    f[F_QUESTION_COVERED] = fraction(q_content.intersection(&i_content).count(), q_content.len());
    f[F_LENGTH] = fraction(i_tokens.len(), i_tokens.len() + q_tokens.len());

    let ops = operators(item_text);
    let count_cue = has_count_cue(question);
    let sup_cue = has_superlative_cue(question);
    let cmp_cue = has_comparative_cue(question);
    f[F_COUNT_MATCH] = indicator(ops.count && count_cue);
    f[F_SUPERLATIVE_MATCH] = indicator(ops.superlative && sup_cue);
    f[F_COMPARATIVE_MATCH] = indicator(ops.comparative && cmp_cue);
    let q_numbers = extract_numbers(question);
    let i_numbers = extract_numbers(item_text);
    f[F_NUMBER_MATCH] = indicator(q_numbers.iter().any(|n| i_numbers.contains(n)));
    f[F_RETRIEVED] = indicator(flags.retrieved);
    f[F_CONSTRUCTED] = indicator(flags.constructed);
    f[F_CONSTANT] = 1.0;
    f[F_UNCUED_OPERATOR] = indicator(
        (ops.count && !count_cue) || (ops.superlative && !sup_cue) || (ops.comparative && !cmp_cue),
    );
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_text_has_unit_jaccard() {
        let q = "which university does c. manning work at";
        let f = featurize(q, q, ItemFlags::default());
        assert_eq!(f[F_JACCARD], 1.0);
        assert_eq!(f[F_ITEM_COVERED], 1.0);
        assert_eq!(f[F_QUESTION_COVERED], 1.0);
        assert_eq!(f.len(), FEATURE_DIM);
    }

    #[test]
    fn disjoint_tokens_have_zero_overlap() {
        let f = featurize("alpha beta", "gamma delta", ItemFlags::default());
        assert_eq!(f[F_JACCARD], 0.0);
        assert_eq!(f[F_ITEM_COVERED], 0.0);
        assert_eq!(f[F_QUESTION_COVERED], 0.0);
        assert_eq!(f[F_LENGTH], 0.5);
    }

    #[test]
    fn count_cue_matches_count_form() {
        let f = featurize(
            "how many universities are located in palo alto",
            "(COUNT (AND university (JOIN located in Palo Alto)))",
            ItemFlags {
                retrieved: true,
                constructed: false,
            },
        );
        assert_eq!(f[F_COUNT_MATCH], 1.0);
        assert_eq!(f[F_UNCUED_OPERATOR], 0.0);
        assert_eq!(
            (f[F_RETRIEVED], f[F_CONSTRUCTED], f[F_CONSTANT]),
            (1.0, 0.0, 1.0)
        );
        let g = featurize(
            "which university is in palo alto",
            "(COUNT TYPE)",
            ItemFlags::default(),
        );
        assert_eq!((g[F_COUNT_MATCH], g[F_UNCUED_OPERATOR]), (0.0, 1.0));
    }

    #[test]
    fn operator_and_number_cues() {
        let f = featurize(
            "which city has the largest population",
            "(ARGMAX city population)",
            ItemFlags::default(),
        );
        assert_eq!(f[F_SUPERLATIVE_MATCH], 1.0);
        let g = featurize(
            "which city has more than 1000 people",
            "(AND city (gt population 1000))",
            ItemFlags::default(),
        );
        assert_eq!((g[F_COMPARATIVE_MATCH], g[F_NUMBER_MATCH]), (1.0, 1.0));
    }

    #[test]
    fn numbers_are_extracted_in_order() {
        let n = extract_numbers("between 12.5 and 1900, not 3x");
        let printed: Vec<String> = n.iter().map(|n| n.to_string()).collect();
        assert_eq!(printed, ["12.5", "1900"]);
    }
}
