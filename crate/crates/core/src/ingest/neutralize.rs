//! Rule-based removal of concept terms from captions.
//!
//! Matching is per word token, case-insensitive. A term ending in `.` (such as
//! `mr.`) only matches when the period follows the word. Possessives match on
//! their base (`woman's` matches `woman`). Deleting a word triggers cleanup:
//! a conjunction between two deleted words goes, an article left without its
//! noun goes, `a`/`an` is re-agreed with the word that now follows, and
//! whitespace and stray punctuation are collapsed.
//!
//! Cleanup only runs when something matched, so a second pass over
//! neutralized text finds nothing and returns it unchanged.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ConceptPair;
use crate::ids::caption_id;
use crate::sampling::{PromptRecord, Role};

/// The gendered-term map shipped with the crate.
pub const GENDERED_TERMS_V1: &str = include_str!("../../data/gendered_terms.v1.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermEntry {
    pub term: String,
    /// `None` (or an empty string) deletes the term.
    #[serde(default)]
    pub replacement: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermMap {
    pub version: u32,
    pub concepts: BTreeMap<String, Vec<TermEntry>>,
}

fn word_pattern() -> Regex {
    Regex::new(r"\w+(?:['’]\w+)*").expect("valid pattern")
}

impl TermMap {
    pub fn from_json(text: &str) -> Result<Self> {
        let map: TermMap = serde_json::from_str(text)
            .map_err(|e| Error::Validation(format!("term map: {e}")))?;
        map.validate()?;
        Ok(map)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn gendered() -> Self {
        Self::from_json(GENDERED_TERMS_V1).expect("shipped term map is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let term = Regex::new(r"^\w+(?:['’]\w+)*\.?$").expect("valid pattern");
        let words = word_pattern();
        for (concept, entries) in &self.concepts {
            if entries.is_empty() {
                return Err(Error::Validation(format!("concept '{concept}' has no terms")));
            }
            let surface: Vec<String> = entries
                .iter()
                .map(|e| e.term.trim_end_matches('.').to_string())
                .collect();
            for e in entries {
                if e.term.is_empty() || e.term != e.term.to_lowercase() || !term.is_match(&e.term) {
                    return Err(Error::Validation(format!(
                        "concept '{concept}': term '{}' must be one lowercase word",
                        e.term
                    )));
                }
                if let Some(r) = &e.replacement {
                    for w in words.find_iter(r) {
                        let w = w.as_str().to_lowercase();
                        if surface.contains(&w) {
                            return Err(Error::Validation(format!(
                                "concept '{concept}': replacement '{r}' reintroduces '{w}'"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn terms(&self, concept: &str) -> Result<&[TermEntry]> {
        self.concepts
            .get(concept)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Input(format!("concept '{concept}' is not in the term map")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Kind {
    Word,
    Other,
    Deleted,
}

#[derive(Debug, Clone)]
struct Tok {
    text: String,
    kind: Kind,
}

fn tokenize(text: &str) -> Vec<Tok> {
    let mut out = Vec::new();
    let mut last = 0;
    for m in word_pattern().find_iter(text) {
        if m.start() > last {
            out.push(Tok {
                text: text[last..m.start()].to_string(),
                kind: Kind::Other,
            });
        }
        out.push(Tok {
            text: m.as_str().to_string(),
            kind: Kind::Word,
        });
        last = m.end();
    }
    if last < text.len() {
        out.push(Tok {
            text: text[last..].to_string(),
            kind: Kind::Other,
        });
    }
    out
}

fn match_case(original: &str, replacement: &str) -> String {
    let mut chars = original.chars();
    let first_upper = chars.next().is_some_and(char::is_uppercase);
    let all_upper = original.chars().count() > 1 && original.chars().all(|c| !c.is_lowercase());
    if all_upper {
        replacement.to_uppercase()
    } else if first_upper {
        let mut r = replacement.chars();
        match r.next() {
            Some(c) => c.to_uppercase().chain(r).collect(),
            None => String::new(),
        }
    } else {
        replacement.to_string()
    }
}

fn is_space(t: &Tok) -> bool {
    t.kind == Kind::Other && t.text.trim().is_empty()
}

/// Index of the next token after `i` that is not whitespace.
fn next_solid(toks: &[Tok], i: usize) -> Option<usize> {
    (i + 1..toks.len()).find(|&j| !is_space(&toks[j]))
}

fn prev_solid(toks: &[Tok], i: usize) -> Option<usize> {
    (0..i).rev().find(|&j| !is_space(&toks[j]))
}

const CONJUNCTIONS: [&str; 2] = ["and", "or"];
const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn lower_is(t: &Tok, set: &[&str]) -> bool {
    t.kind == Kind::Word && set.contains(&t.text.to_lowercase().as_str())
}

fn collapse(text: &str) -> String {
    let rules: [(&str, &str); 5] = [
        (r"\s+", " "),
        (r" ([,.;:!?])", "$1"),
        (r",(\s*,)+", ","),
        (r"^[\s,;:]+", ""),
        (r"[\s,;:]+$", ""),
    ];
    let mut out = text.to_string();
    for (pat, rep) in rules {
        out = Regex::new(pat).expect("valid pattern").replace_all(&out, rep).into_owned();
    }
    out.trim().to_string()
}

/// Apply the `concept` rules of `map` to `text`; `None` when no term matched.
pub fn neutralize_text(text: &str, map: &TermMap, concept: &str) -> Result<Option<String>> {
    let mut plain: HashMap<&str, Option<&str>> = HashMap::new();
    let mut dotted: HashMap<&str, Option<&str>> = HashMap::new();
    for e in map.terms(concept)? {
        let rep = e.replacement.as_deref().filter(|r| !r.is_empty());
        match e.term.strip_suffix('.') {
            Some(base) => dotted.insert(base, rep),
            None => plain.insert(e.term.as_str(), rep),
        };
    }

    let mut toks = tokenize(text);
    let mut touched = false;
    let mut i = 0;
    while i < toks.len() {
        if toks[i].kind != Kind::Word {
            i += 1;
            continue;
        }
        let lower = toks[i].text.to_lowercase();
        let dot_follows = toks.get(i + 1).is_some_and(|t| t.text.starts_with('.'));
        let (rep, suffix, eat_dot) = if let (true, Some(rep)) = (dot_follows, dotted.get(lower.as_str())) {
            (Some(*rep), String::new(), true)
        } else if let Some(rep) = plain.get(lower.as_str()) {
            (Some(*rep), String::new(), false)
        } else if let Some(pos) = lower.find(['\'', '’']) {
            let base = &lower[..pos];
            let suffix = toks[i].text[pos..].to_string();
            (plain.get(base).copied(), suffix, false)
        } else {
            (None, String::new(), false)
        };
        let Some(rep) = rep else {
            i += 1;
            continue;
        };
        touched = true;
        if eat_dot {
            toks[i + 1].text.remove(0);
        }
        match rep {
            Some(r) => {
                toks[i].text = format!("{}{suffix}", match_case(&toks[i].text, r));
            }
            None => {
                toks[i].text.clear();
                toks[i].kind = Kind::Deleted;
                // Keep a compound's other half readable: "woman-owned" -> "owned".
                if let Some(next) = toks.get_mut(i + 1).filter(|t| t.text.starts_with('-')) {
                    next.text.remove(0);
                } else if i > 0 && toks[i - 1].text.ends_with('-') {
                    toks[i - 1].text.pop();
                }
            }
        }
        i += 1;
    }
    if !touched {
        return Ok(None);
    }

    // A conjunction joining two deleted words has nothing left to join.
    let deleted = |toks: &[Tok], j: Option<usize>| j.is_some_and(|j| toks[j].kind == Kind::Deleted);
    for i in 0..toks.len() {
        if lower_is(&toks[i], &CONJUNCTIONS)
            && deleted(&toks, prev_solid(&toks, i))
            && deleted(&toks, next_solid(&toks, i))
        {
            toks[i].text.clear();
            toks[i].kind = Kind::Deleted;
        }
    }

    // Articles whose next word was deleted.
    for i in (0..toks.len()).rev() {
        if !lower_is(&toks[i], &ARTICLES) || !deleted(&toks, next_solid(&toks, i)) {
            continue;
        }
        let mut j = next_solid(&toks, i);
        while let Some(k) = j.filter(|&k| toks[k].kind == Kind::Deleted) {
            j = next_solid(&toks, k);
        }
        let orphan = match j {
            None => true,
            Some(k) => {
                toks[k].kind != Kind::Word
                    || lower_is(&toks[k], &CONJUNCTIONS)
                    || lower_is(&toks[k], &ARTICLES)
            }
        };
        if orphan {
            toks[i].text.clear();
            toks[i].kind = Kind::Deleted;
        } else if lower_is(&toks[i], &["a", "an"]) {
            let next = toks[j.expect("checked")].text.to_lowercase();
            let article = if next.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
            toks[i].text = match_case(&toks[i].text, article);
        }
    }

    let joined: String = toks.iter().map(|t| t.text.as_str()).collect();
    Ok(Some(collapse(&joined)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeutralizedPair {
    pub original: PromptRecord,
    pub neutralized: PromptRecord,
    pub unchanged: bool,
    pub pairing: ConceptPair,
}

/// Split a concept-bearing record into itself and its neutral counterpart.
///
/// The neutral record's id hashes its text, so captions that differ only in
/// concept terms ("a male nurse", "a female nurse") share one neutral prompt.
/// The pairing group defaults to the neutral text for the same reason.
pub fn neutralize(record: &PromptRecord, map: &TermMap, concept: &str) -> Result<NeutralizedPair> {
    let result = neutralize_text(&record.text, map, concept)?;
    let unchanged = result.is_none();
    let text = result.unwrap_or_else(|| record.text.clone());
    if text.is_empty() {
        log::warn!("neutralizing {} left an empty prompt", record.id);
    }
    let group = record.group.clone().unwrap_or_else(|| text.clone());
    let neutral_id = caption_id(&text);
    let mut neutralized = PromptRecord::new(neutral_id.clone(), text, Role::Neutral);
    neutralized.group = Some(group.clone());
    let mut original = record.clone();
    if original.role == Role::Corpus {
        original.role = Role::Concept;
    }
    original.group = Some(group.clone());
    let pairing = ConceptPair {
        with_concept: record.id.clone(),
        without_concept: neutral_id,
        group,
        concept: record.concept.clone().unwrap_or_else(|| concept.to_string()),
    };
    Ok(NeutralizedPair {
        original,
        neutralized,
        unchanged,
        pairing,
    })
}

/// Prompts and pairings for a whole corpus; neutral prompts are deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairingSet {
    pub prompts: Vec<PromptRecord>,
    pub pairs: Vec<ConceptPair>,
    pub unchanged: Vec<String>,
}

pub fn neutralize_all(records: &[PromptRecord], map: &TermMap, concept: &str) -> Result<PairingSet> {
    let mut set = PairingSet::default();
    let mut seen = std::collections::HashSet::new();
    for record in records {
        let pair = neutralize(record, map, concept)?;
        if pair.unchanged {
            set.unchanged.push(record.id.clone());
        }
        if seen.insert(pair.original.id.clone()) {
            set.prompts.push(pair.original);
        }
        if seen.insert(pair.neutralized.id.clone()) {
            set.prompts.push(pair.neutralized);
        }
        set.pairs.push(pair.pairing);
    }
    Ok(set)
}
