//! Entity linking: mention detection over the KB alias lexicon, candidate
//! generation, and degree-based disambiguation.

use std::collections::{BTreeMap, BTreeSet};

use crate::kb::KnowledgeBase;

/// Lowercases and collapses whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normalized alias phrase → entity ids carrying it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, BTreeSet<String>>,
    max_chars: usize,
}

impl Lexicon {
    pub fn lookup(&self, phrase: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(phrase)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Label plus declared aliases of every entity.
pub fn build_lexicon(kb: &KnowledgeBase) -> Lexicon {
    let mut entries: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for e in kb.entities() {
        for alias in std::iter::once(&e.label).chain(&e.aliases) {
            let key = normalize(alias);
            if !key.is_empty() {
                entries.entry(key).or_default().insert(e.id.clone());
            }
        }
    }
    let max_chars = entries.keys().map(|k| k.chars().count()).max().unwrap_or(0);
    Lexicon { entries, max_chars }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mention {
    /// Character offsets into the question, end exclusive.
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

/// Greedy longest-match-first, left to right, case-insensitive, on word
/// boundaries; mentions never overlap.
pub fn detect_mentions(question: &str, lexicon: &Lexicon) -> Vec<Mention> {
    let original: Vec<char> = question.chars().collect();
    // normalized chars with the original char index each one came from
    let mut norm: Vec<char> = Vec::with_capacity(original.len());
    let mut origin: Vec<usize> = Vec::with_capacity(original.len());
    for (idx, &ch) in original.iter().enumerate() {
        if ch.is_whitespace() {
            if norm.last().is_some_and(|c| *c != ' ') {
                norm.push(' ');
                origin.push(idx);
            }
            continue;
        }
        for lower in ch.to_lowercase() {
            norm.push(lower);
            origin.push(idx);
        }
    }
    if norm.last() == Some(&' ') {
        norm.pop();
        origin.pop();
    }

    let alnum = |c: char| c.is_alphanumeric();
    let left_ok = |i: usize| i == 0 || !alnum(norm[i - 1]) || !alnum(norm[i]);
    let right_ok = |j: usize| j == norm.len() || !alnum(norm[j]) || !alnum(norm[j - 1]);

    let mut mentions = Vec::new();
    let mut i = 0;
    while i < norm.len() {
        if norm[i] == ' ' || !left_ok(i) {
            i += 1;
            continue;
        }
        let longest = (i + 1..=norm.len().min(i + lexicon.max_chars))
            .rev()
            .filter(|&j| norm[j - 1] != ' ' && right_ok(j))
            .find(|&j| {
                let phrase: String = norm[i..j].iter().collect();
                lexicon.entries.contains_key(&phrase)
            });
        match longest {
            Some(j) => {
                let start = origin[i];
                let end = origin[j - 1] + 1;
                mentions.push(Mention {
                    start,
                    end,
                    surface: original[start..end].iter().collect(),
                });
                i = j;
            }
            None => i += 1,
        }
    }
    mentions
}

/// Scores a candidate entity for a mention; higher is better.
pub trait Disambiguator {
    fn score(&self, question: &str, mention: &Mention, entity: &str, kb: &KnowledgeBase) -> f64;
}

/// Prefers entities with more facts.
#[derive(Debug, Clone, Copy, Default)]
pub struct DegreeDisambiguator;

impl Disambiguator for DegreeDisambiguator {
    fn score(&self, _question: &str, _mention: &Mention, entity: &str, kb: &KnowledgeBase) -> f64 {
        kb.degree(entity) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityLink {
    pub mention: Mention,
    pub entity: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkedEntities {
    pub links: Vec<EntityLink>,
}

impl LinkedEntities {
    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Distinct linked entity ids, sorted.
    pub fn entity_ids(&self) -> Vec<String> {
        let ids: BTreeSet<&String> = self.links.iter().map(|l| &l.entity).collect();
        ids.into_iter().cloned().collect()
    }

    pub fn from_ids<S: AsRef<str>>(ids: impl IntoIterator<Item = S>) -> Self {
        LinkedEntities {
            links: ids
                .into_iter()
                .map(|id| EntityLink {
                    mention: Mention {
                        start: 0,
                        end: 0,
                        surface: String::new(),
                    },
                    entity: id.as_ref().to_string(),
                    score: 1.0,
                })
                .collect(),
        }
    }
}

pub struct EntityLinker<'a, D: Disambiguator = DegreeDisambiguator> {
    kb: &'a KnowledgeBase,
    lexicon: Lexicon,
    disambiguator: D,
    top_k_per_mention: usize,
}

impl<'a> EntityLinker<'a, DegreeDisambiguator> {
    pub fn new(kb: &'a KnowledgeBase) -> Self {
        EntityLinker {
            kb,
            lexicon: build_lexicon(kb),
            disambiguator: DegreeDisambiguator,
            top_k_per_mention: 1,
        }
    }
}

impl<'a, D: Disambiguator> EntityLinker<'a, D> {
    pub fn with_disambiguator(kb: &'a KnowledgeBase, disambiguator: D) -> Self {
        EntityLinker {
            kb,
            lexicon: build_lexicon(kb),
            disambiguator,
            top_k_per_mention: 1,
        }
    }

    pub fn top_k_per_mention(mut self, k: usize) -> Self {
        self.top_k_per_mention = k.max(1);
        self
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn link(&self, question: &str) -> LinkedEntities {
        link_entities(
            question,
            self.kb,
            &self.lexicon,
            &self.disambiguator,
            self.top_k_per_mention,
        )
    }
}

pub fn link_entities(
    question: &str,
    kb: &KnowledgeBase,
    lexicon: &Lexicon,
    disambiguator: &impl Disambiguator,
    top_k_per_mention: usize,
) -> LinkedEntities {
    let mut links = Vec::new();
    for mention in detect_mentions(question, lexicon) {
        let key = normalize(&mention.surface);
        let Some(candidates) = lexicon.lookup(&key) else {
            continue;
        };
        let mut scored: Vec<(f64, &String)> = candidates
            .iter()
            .filter(|id| kb.entity(id).is_some())
            .map(|id| (disambiguator.score(question, &mention, id, kb), id))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        for (score, id) in scored.into_iter().take(top_k_per_mention) {
            links.push(EntityLink {
                mention: mention.clone(),
                entity: id.clone(),
                score,
            });
        }
    }
    LinkedEntities { links }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{toy_kb, toy_parts, EntityDef, Fact, KbParts};

    fn entity(id: &str, label: &str, aliases: &[&str]) -> EntityDef {
        EntityDef {
            id: id.into(),
            label: label.into(),
            types: BTreeSet::from(["university".to_string()]),
            aliases: aliases.iter().map(|a| a.to_string()).collect(),
        }
    }

    #[test]
    fn toy_lexicon() {
        let lex = build_lexicon(&toy_kb());
        assert_eq!(
            lex.lookup("stanford"),
            Some(&BTreeSet::from(["stanford".to_string()]))
        );
        assert_eq!(
            lex.lookup("c. manning"),
            Some(&BTreeSet::from(["c_manning".to_string()]))
        );
    }

    #[test]
    fn shared_alias_maps_to_both() {
        let mut parts = toy_parts();
        parts
            .entities
            .push(entity("uw", "University of Washington", &["Washington"]));
        parts
            .entities
            .push(entity("wsu", "Washington State", &["washington"]));
        let kb = KnowledgeBase::from_parts(parts).unwrap();
        let lex = build_lexicon(&kb);
        assert_eq!(lex.lookup("washington").unwrap().len(), 2);
    }

    #[test]
    fn empty_kb_has_empty_lexicon() {
        let kb = KnowledgeBase::from_parts(KbParts::default()).unwrap();
        assert!(build_lexicon(&kb).is_empty());
    }

    #[test]
    fn detects_running_example_mention() {
        let lex = build_lexicon(&toy_kb());
        let q = "which university does c. manning work at";
        let m = detect_mentions(q, &lex);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].surface, "c. manning");
        assert_eq!((m[0].start, m[0].end), (22, 32));
        assert!(detect_mentions("what is the tallest mountain", &lex).is_empty());
    }

    #[test]
    fn longest_match_first_without_overlap() {
        let mut parts = toy_parts();
        parts
            .entities
            .push(entity("su", "Stanford University", &[]));
        let kb = KnowledgeBase::from_parts(parts).unwrap();
        let lex = build_lexicon(&kb);
        let m = detect_mentions("stanford university in stanford", &lex);
        let surfaces: Vec<&str> = m.iter().map(|m| m.surface.as_str()).collect();
        assert_eq!(surfaces, ["stanford university", "stanford"]);
    }

    #[test]
    fn respects_word_boundaries_and_case() {
        let lex = build_lexicon(&toy_kb());
        assert!(detect_mentions("stanfordian values", &lex).is_empty());
        let m = detect_mentions("Who is in   PALO  ALTO?", &lex);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].surface, "PALO  ALTO");
    }

    #[test]
    fn links_running_example() {
        let kb = toy_kb();
        let linked = EntityLinker::new(&kb).link("which university does c. manning work at");
        assert_eq!(linked.entity_ids(), ["c_manning"]);
        assert_eq!(linked.links[0].mention.surface, "c. manning");
    }

    #[test]
    fn deleted_mention_entity_links_nothing() {
        let mut parts = toy_parts();
        parts.entities.retain(|e| e.id != "c_manning");
        parts.facts.retain(|f| f.subject != "c_manning");
        let kb = KnowledgeBase::from_parts(parts).unwrap();
        let linked = EntityLinker::new(&kb).link("which university does c. manning work at");
        assert!(linked.is_empty());
    }

    #[test]
    fn degree_breaks_ambiguity() {
        let mut parts = toy_parts();
        parts.types.push(crate::kb::TypeDef {
            id: "x".into(),
            label: "x".into(),
        });
        parts.entities.push(entity("e1", "Springfield", &[]));
        parts.entities.push(entity("e2", "Springfield", &[]));
        for (s, o) in [("e1", "palo_alto"), ("e2", "palo_alto")] {
            parts.facts.push(Fact::entity(s, "located_in", o));
        }
        parts
            .facts
            .push(Fact::entity("e1", "located_in", "stanford_city"));
        parts.entities.push(EntityDef {
            id: "stanford_city".into(),
            label: "Stanford City".into(),
            types: BTreeSet::from(["city".to_string()]),
            aliases: vec![],
        });
        parts.entities.push(EntityDef {
            id: "res".into(),
            label: "Res".into(),
            types: BTreeSet::from(["researcher".to_string()]),
            aliases: vec![],
        });
        parts.facts.push(Fact::entity("res", "works_at", "e1"));
        // e1: 3 facts, e2: 1 fact
        let kb = KnowledgeBase::from_parts(parts).unwrap();
        assert_eq!((kb.degree("e1"), kb.degree("e2")), (3, 1));
        let linked = EntityLinker::new(&kb).link("where is springfield");
        assert_eq!(linked.entity_ids(), ["e1"]);
        let both = EntityLinker::new(&kb)
            .top_k_per_mention(2)
            .link("where is springfield");
        assert_eq!(both.entity_ids(), ["e1", "e2"]);
    }
}
