//! Prompt corpora: loading caption files, concept-term neutralization and
//! the external text-generation client.

pub mod neutralize;
pub mod textgen;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::caption_id;
use crate::sampling::{PromptRecord, Role};

pub use neutralize::{neutralize, neutralize_all, NeutralizedPair, PairingSet, TermEntry, TermMap};
pub use textgen::{request_generation, GenerationTemplate, TextGenService};

/// How records get their group key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum GroupRule {
    #[default]
    None,
    /// Keep the `group` field of JSON items.
    Field,
    /// First capture group of a regex applied to the caption.
    Pattern { pattern: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub source: PathBuf,
    #[serde(default = "default_role")]
    pub role: Role,
    #[serde(default)]
    pub group: GroupRule,
}

fn default_role() -> Role {
    Role::Corpus
}

impl CorpusSpec {
    pub fn new(source: impl Into<PathBuf>) -> Self {
        Self {
            source: source.into(),
            role: Role::Corpus,
            group: GroupRule::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCorpus {
    pub records: Vec<PromptRecord>,
    /// Malformed or duplicate entries that were dropped.
    pub skipped: usize,
}

#[derive(Deserialize)]
struct JsonItem {
    id: Option<String>,
    caption: String,
    group: Option<String>,
    concept: Option<String>,
}

/// Load a caption file: one caption per line, or a JSON array of
/// `{id?, caption, group?, concept?}` objects. Missing ids are derived from
/// the caption hash, so reloading gives the same ids.
pub fn load_corpus(spec: &CorpusSpec) -> Result<LoadedCorpus> {
    let path = &spec.source;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let pattern = match &spec.group {
        GroupRule::Pattern { pattern } => Some(
            Regex::new(pattern).map_err(|e| Error::Config(format!("group.pattern: {e}")))?,
        ),
        _ => None,
    };
    let looks_json = bytes.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'[');
    let (raw, mut skipped) = if looks_json {
        parse_json(path, &bytes)?
    } else {
        parse_lines(&bytes)
    };

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(raw.len());
    for item in raw {
        let caption = item.caption.trim().to_string();
        let id = item.id.unwrap_or_else(|| caption_id(&caption));
        if !seen.insert(id.clone()) {
            skipped += 1;
            continue;
        }
        let mut record = PromptRecord::new(id, caption, spec.role);
        record.concept = item.concept;
        record.group = match (&spec.group, &pattern) {
            (GroupRule::Field, _) => item.group,
            (_, Some(re)) => re
                .captures(&record.text)
                .and_then(|c| c.get(1))
                .map(|m| m.as_str().to_string()),
            _ => None,
        };
        records.push(record);
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} malformed or duplicate entries", path.display());
    }
    if records.is_empty() {
        return Err(Error::Input(format!("{}: corpus is empty", path.display())));
    }
    Ok(LoadedCorpus { records, skipped })
}

fn parse_lines(bytes: &[u8]) -> (Vec<JsonItem>, usize) {
    let mut items = Vec::new();
    let mut skipped = 0;
    for line in bytes.split(|&b| b == b'\n') {
        match std::str::from_utf8(line) {
            Ok(text) if text.trim().is_empty() => {}
            Ok(text) if text.chars().any(|c| c.is_control() && c != '\r' && c != '\t') => skipped += 1,
            Ok(text) => items.push(JsonItem {
                id: None,
                caption: text.to_string(),
                group: None,
                concept: None,
            }),
            Err(_) => skipped += 1,
        }
    }
    (items, skipped)
}

fn parse_json(path: &Path, bytes: &[u8]) -> Result<(Vec<JsonItem>, usize)> {
    let values: Vec<serde_json::Value> = serde_json::from_slice(bytes)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut items = Vec::new();
    let mut skipped = 0;
    for value in values {
        match serde_json::from_value::<JsonItem>(value) {
            Ok(item) if !item.caption.trim().is_empty() && item.id.as_deref() != Some("") => {
                items.push(item)
            }
            _ => skipped += 1,
        }
    }
    Ok((items, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents).unwrap();
        f
    }

    #[test]
    fn text_lines() {
        let f = file(b"a pie\n\na cake\r\nsoup\n");
        let c = load_corpus(&CorpusSpec::new(f.path())).unwrap();
        assert_eq!(c.records.len(), 3);
        assert_eq!(c.records[1].text, "a cake");
        assert_eq!(c.records[0].id, caption_id("a pie"));
        assert_eq!(c.records[0].role, Role::Corpus);
        assert_eq!(load_corpus(&CorpusSpec::new(f.path())).unwrap(), c);
    }

    #[test]
    fn json_ids_preserved() {
        let f = file(br#"[{"id": "x1", "caption": "a pie"}, {"id": "x2", "caption": "a cake", "group": "g"}, {"caption": 3}]"#);
        let mut spec = CorpusSpec::new(f.path());
        spec.group = GroupRule::Field;
        let c = load_corpus(&spec).unwrap();
        assert_eq!(c.records.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["x1", "x2"]);
        assert_eq!(c.records[1].group.as_deref(), Some("g"));
        assert_eq!(c.skipped, 1);
    }

    #[test]
    fn malformed_lines_counted() {
        let f = file(b"ok\n\xff\xfe\nfine\nbad\x07bell\n");
        let c = load_corpus(&CorpusSpec::new(f.path())).unwrap();
        assert_eq!(c.records.len(), 2);
        assert_eq!(c.skipped, 2);
    }

    #[test]
    fn empty_is_error() {
        let f = file(b"\n  \n");
        assert!(matches!(load_corpus(&CorpusSpec::new(f.path())), Err(Error::Input(_))));
    }

    #[test]
    fn pattern_groups() {
        let f = file(b"a photo of a male nurse\na photo of a female pilot\n");
        let mut spec = CorpusSpec::new(f.path());
        spec.group = GroupRule::Pattern {
            pattern: r"(?:male|female) (\w+)$".into(),
        };
        let c = load_corpus(&spec).unwrap();
        assert_eq!(c.records[0].group.as_deref(), Some("nurse"));
        assert_eq!(c.records[1].group.as_deref(), Some("pilot"));
    }
}
