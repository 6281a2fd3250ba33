use std::path::PathBuf;

use hspace_core::ingest::neutralize::TermMap;
use hspace_core::ingest::textgen::{GenerationTemplate, ServiceConfig, TextGenRegistry};
use hspace_core::ingest::{load_corpus, neutralize_all, request_generation, CorpusSpec};
use hspace_core::Result;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{default_out, write_json, Ran};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeutralizeConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub corpus: CorpusSpec,
    /// Term map JSON; the shipped gendered map when absent.
    #[serde(default)]
    pub terms: Option<PathBuf>,
    #[serde(default = "default_concept")]
    pub concept: String,
}

fn default_concept() -> String {
    "gender".into()
}

pub fn run_neutralize(config: &NeutralizeConfig) -> Result<Ran> {
    let map = match &config.terms {
        Some(path) => TermMap::read(path)?,
        None => TermMap::gendered(),
    };
    let corpus = load_corpus(&config.corpus)?;
    let set = neutralize_all(&corpus.records, &map, &config.concept)?;
    if !set.unchanged.is_empty() {
        log::warn!("{} captions had no {} terms", set.unchanged.len(), config.concept);
    }
    let path = config.out.join("pairing.json");
    write_json(&path, &set)?;
    let mut inputs = vec![config.corpus.source.clone()];
    inputs.extend(config.terms.clone());
    Ok(Ran {
        inputs,
        outputs: vec![path],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DraftConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub service: ServiceConfig,
    pub template: GenerationTemplate,
}

pub fn run_draft(config: &DraftConfig) -> Result<Ran> {
    let mut service_config = config.service.clone();
    if service_config.audit_dir.is_none() {
        service_config.audit_dir = Some(config.out.join("audit"));
    }
    let mut service = TextGenRegistry::with_builtins().connect(&service_config)?;
    let audit = config.out.join("audit");
    let records = request_generation(&config.template, service.as_mut(), Some(&audit))?;
    let items: Vec<_> = records
        .iter()
        .map(|r| json!({"id": r.id, "caption": r.text, "group": r.group, "concept": r.concept}))
        .collect();
    let path = config.out.join("corpus.json");
    write_json(&path, &items)?;
    Ok(Ran {
        inputs: vec![],
        outputs: vec![path, audit],
    })
}
