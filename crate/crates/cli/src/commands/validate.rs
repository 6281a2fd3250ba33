use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use hspace_core::geometry::GapDocument;
use hspace_core::sampling::Role;
use hspace_core::store::VectorArchive;
use hspace_core::validation::{
    classify_images, default_labels, list_images, outcome_report, summarize_outcomes, write_outcome_csv,
    write_results_csv, ScorerConfig, ScorerRegistry,
};
use hspace_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{default_out, ensure_dir, read_json, write_json, Ran};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub images: PathBuf,
    #[serde(default = "default_labels")]
    pub labels: Vec<String>,
    pub scorer: ScorerConfig,
    /// JSON object mapping prompt id to group.
    #[serde(default)]
    pub groups: Option<PathBuf>,
    /// Archive whose prompt records carry groups; used when `groups` is absent.
    #[serde(default)]
    pub archive: Option<PathBuf>,
    /// Gap document to join; its first concept pair gives the difference column.
    #[serde(default)]
    pub gaps: Option<PathBuf>,
    /// With `archive`, classify only images of neutral prompts.
    #[serde(default)]
    pub neutral_only: bool,
    /// Label whose fraction is reported; the second label when absent.
    #[serde(default)]
    pub report_label: Option<String>,
}

pub fn run(config: &ValidateConfig) -> Result<Ran> {
    let mut images = list_images(&config.images)?;
    if images.is_empty() {
        return Err(Error::Input(format!("images: no generated images in {}", config.images.display())));
    }
    if config.neutral_only && config.archive.is_none() {
        return Err(Error::Config("neutral_only: needs an archive to know prompt roles".into()));
    }

    let mut inputs = vec![config.images.clone()];
    let mut groups: Option<BTreeMap<String, String>> = None;
    if let Some(path) = &config.groups {
        inputs.push(path.clone());
        groups = Some(read_json(path)?);
    }
    if let Some(path) = &config.archive {
        inputs.push(path.clone());
        let archive = VectorArchive::read(path)?;
        let prompts = archive.prompts();
        if config.neutral_only {
            let neutral: BTreeSet<&str> = prompts
                .iter()
                .filter(|p| p.role == Role::Neutral)
                .map(|p| p.id.as_str())
                .collect();
            images.retain(|i| neutral.contains(i.prompt_id.as_str()));
            if images.is_empty() {
                return Err(Error::Input("images: none belong to neutral prompts".into()));
            }
        }
        if groups.is_none() {
            groups = Some(
                prompts
                    .iter()
                    .map(|p| (p.id.clone(), p.group.clone().unwrap_or_else(|| p.id.clone())))
                    .collect(),
            );
        }
    }
    let mut scorer = ScorerRegistry::with_builtins().load(&config.scorer)?;
    let results = classify_images(&images, &config.labels, scorer.as_mut())?;
    let groups = groups.unwrap_or_else(|| results.iter().map(|r| (r.prompt_id.clone(), r.prompt_id.clone())).collect());
    let outcomes = summarize_outcomes(&results, &groups, &config.labels)?;

    let mut differences = BTreeMap::new();
    if let Some(path) = &config.gaps {
        inputs.push(path.clone());
        let doc: GapDocument = read_json(path)?;
        if let Some(first) = doc.differences.first() {
            for d in doc
                .differences
                .iter()
                .filter(|d| d.concept_a == first.concept_a && d.concept_b == first.concept_b)
            {
                differences.insert(d.group.clone(), d.difference);
            }
        }
    }
    let label = config
        .report_label
        .clone()
        .unwrap_or_else(|| config.labels.get(1).cloned().unwrap_or_default());
    let report = outcome_report(&outcomes, &differences, &label)?;

    ensure_dir(&config.out)?;
    let results_csv = config.out.join("classifications.csv");
    let results_json = config.out.join("classifications.json");
    let table = config.out.join("outcome_table.csv");
    let summary = config.out.join("outcomes.json");
    write_results_csv(&results, &config.labels, &results_csv)?;
    write_json(&results_json, &results)?;
    write_outcome_csv(&report, &table)?;
    write_json(&summary, &json!({"summaries": outcomes, "report": report}))?;
    Ok(Ran {
        inputs,
        outputs: vec![results_csv, results_json, table, summary],
    })
}
