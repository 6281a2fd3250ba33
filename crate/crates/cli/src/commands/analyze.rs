use std::path::PathBuf;

use hspace_core::geometry::{
    one_to_many_rank, one_to_one_gap, write_gap_raw_csv, write_gap_summary_csv, write_ranking_csv,
    ConceptPair, GapDocument, RankingDocument,
};
use hspace_core::ingest::PairingSet;
use hspace_core::sampling::Role;
use hspace_core::store::VectorArchive;
use hspace_core::{Error, Result};
use serde::{Deserialize, Serialize};

use super::{default_out, ensure_dir, read_json, write_json, Ran};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub archive: PathBuf,
    /// A pairing set from `neutralize`, or a bare list of pairs.
    pub pairing: PathBuf,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PairingFile {
    Set(PairingSet),
    Pairs(Vec<ConceptPair>),
}

pub fn run_compare(config: &CompareConfig) -> Result<Ran> {
    let archive = VectorArchive::read(&config.archive)?;
    let pairs = match read_json::<PairingFile>(&config.pairing)? {
        PairingFile::Set(s) => s.pairs,
        PairingFile::Pairs(p) => p,
    };
    let reports = one_to_one_gap(&archive, &pairs)?;
    ensure_dir(&config.out)?;
    let raw = config.out.join("gaps_raw.csv");
    let summary = config.out.join("gaps_summary.csv");
    let json = config.out.join("gaps.json");
    write_gap_raw_csv(&reports, &raw)?;
    write_gap_summary_csv(&reports, &summary)?;
    write_json(&json, &GapDocument::new(archive.config_hash(), reports)?)?;
    Ok(Ran {
        inputs: vec![config.archive.clone(), config.pairing.clone()],
        outputs: vec![raw, summary, json],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub archive: PathBuf,
    /// Anchor prompt ids (or exact prompt texts).
    pub anchor_a: String,
    pub anchor_b: String,
    /// Prompt ids to rank; every corpus-role prompt other than the anchors when absent.
    #[serde(default)]
    pub corpus: Option<Vec<String>>,
}

fn resolve_anchor(archive: &VectorArchive, anchor: &str) -> Result<String> {
    if archive.prompt(anchor).is_some() {
        return Ok(anchor.to_string());
    }
    archive
        .prompts()
        .iter()
        .find(|p| p.text == anchor)
        .map(|p| p.id.clone())
        .ok_or_else(|| Error::Data(format!("anchor '{anchor}' is not in the archive")))
}

pub fn run_rank(config: &RankConfig) -> Result<Ran> {
    let archive = VectorArchive::read(&config.archive)?;
    let a = resolve_anchor(&archive, &config.anchor_a)?;
    let b = resolve_anchor(&archive, &config.anchor_b)?;
    let corpus: Vec<String> = match &config.corpus {
        Some(ids) => ids.clone(),
        None => {
            let tagged: Vec<String> = archive
                .prompts()
                .iter()
                .filter(|p| p.role == Role::Corpus && p.id != a && p.id != b)
                .map(|p| p.id.clone())
                .collect();
            if tagged.is_empty() {
                archive
                    .prompts()
                    .iter()
                    .filter(|p| p.id != a && p.id != b)
                    .map(|p| p.id.clone())
                    .collect()
            } else {
                tagged
            }
        }
    };
    let entries = one_to_many_rank(&archive, &corpus, &a, &b)?;
    ensure_dir(&config.out)?;
    let csv = config.out.join("ranking.csv");
    let json = config.out.join("rankings.json");
    write_ranking_csv(&entries, &csv)?;
    let doc = RankingDocument {
        anchor_a: a,
        anchor_b: b,
        config_hash: archive.config_hash().to_string(),
        entries,
    };
    write_json(&json, &doc)?;
    Ok(Ran {
        inputs: vec![config.archive.clone()],
        outputs: vec![csv, json],
    })
}
