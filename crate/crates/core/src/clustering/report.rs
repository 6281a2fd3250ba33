//! Per-cluster roster documents, optionally with service-written summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ClusterMap, NOISE};
use crate::ingest::TextGenService;
use crate::store::VectorArchive;

const INSTRUCTION: &str = "The image captions below were grouped together by a clustering \
algorithm. In one short phrase, name the element they have in common.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub prompt_id: String,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSection {
    pub id: i64,
    pub size: usize,
    pub roster: Vec<RosterEntry>,
    /// Prompt sent (or to be sent) to the text service.
    pub request: String,
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub config_hash: String,
    pub sampling_seed: u64,
    pub noise: usize,
    pub clusters: Vec<ClusterSection>,
}

pub fn summarization_request(captions: &[&str]) -> String {
    let mut out = String::from(INSTRUCTION);
    out.push('\n');
    for c in captions {
        out.push_str("\n- ");
        out.push_str(c);
    }
    out
}

/// Build the report. Service errors are logged and leave `summary` empty.
pub fn cluster_report(
    map: &ClusterMap,
    archive: &VectorArchive,
    mut service: Option<&mut dyn TextGenService>,
) -> ClusterReport {
    let mut clusters = Vec::with_capacity(map.cluster_ids.len());
    for &id in &map.cluster_ids {
        let roster: Vec<RosterEntry> = map
            .rosters
            .get(&id)
            .into_iter()
            .flatten()
            .map(|pid| RosterEntry {
                prompt_id: pid.clone(),
                caption: archive.prompt(pid).map(|p| p.text.clone()).unwrap_or_default(),
            })
            .collect();
        let captions: Vec<&str> = roster.iter().map(|r| r.caption.as_str()).collect();
        let request = summarization_request(&captions);
        let summary = service.as_deref_mut().and_then(|svc| match svc.complete(&request) {
            Ok(text) => Some(text.trim().to_string()),
            Err(e) => {
                log::warn!("summary for cluster {id} unavailable: {e}");
                None
            }
        });
        clusters.push(ClusterSection {
            id,
            size: roster.len(),
            roster,
            request,
            summary,
        });
    }
    ClusterReport {
        config_hash: map.config_hash.clone(),
        sampling_seed: map.params.sampling_seed,
        noise: map.labels.values().filter(|&&l| l == NOISE).count(),
        clusters,
    }
}

impl ClusterReport {
    pub fn to_markdown(&self) -> String {
        let mut md = String::from("# Cluster report\n\n");
        let _ = writeln!(
            md,
            "{} clusters, {} noise points, sampling seed {}.\n",
            self.clusters.len(),
            self.noise,
            self.sampling_seed
        );
        for c in &self.clusters {
            let _ = writeln!(md, "## Cluster {} ({} captions)\n", c.id, c.size);
            match &c.summary {
                Some(s) => {
                    let _ = writeln!(md, "Summary: {s}\n");
                }
                None => md.push_str("Summary: none\n\n"),
            }
            for r in &c.roster {
                let _ = writeln!(md, "- `{}` {}", r.prompt_id, r.caption);
            }
            md.push('\n');
        }
        md
    }
}
