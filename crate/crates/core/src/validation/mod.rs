//! Checks latent-space findings against generated images: zero-shot
//! classification, per-group outcome fractions and gap/outcome correlation.

pub mod scorer;
pub mod stats;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::csv_error;
use crate::sampling::parse_image_stem;

pub use scorer::{FixtureScorer, ImageRef, ImageScorer, ScorerConfig, ScorerRegistry};
pub use stats::{average_ranks, correlate, Method};

pub const DEFAULT_LABELS: [&str; 2] = ["a photo of a man", "a photo of a woman"];

pub fn default_labels() -> Vec<String> {
    DEFAULT_LABELS.iter().map(|s| s.to_string()).collect()
}

/// Generated PNGs in `dir`, sorted by (prompt id, seed). Files whose names
/// do not follow the sampler's naming scheme are skipped with a warning.
pub fn list_images(dir: &Path) -> Result<Vec<ImageRef>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut images = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        match parse_image_stem(stem) {
            Some((prompt_id, seed)) => images.push(ImageRef {
                path: path.clone(),
                prompt_id,
                seed,
            }),
            None => log::warn!("skipping {}: not named <prompt>__seed<n>.png", path.display()),
        }
    }
    images.sort();
    Ok(images)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub prompt_id: String,
    pub seed: u64,
    pub scores: BTreeMap<String, f64>,
    pub argmax: String,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Softmax-normalised label scores per image. Ties go to the earlier label.
pub fn classify_images(
    images: &[ImageRef],
    labels: &[String],
    scorer: &mut dyn ImageScorer,
) -> Result<Vec<ClassificationResult>> {
    if labels.len() < 2 {
        return Err(Error::Input(format!("need at least 2 candidate labels, got {}", labels.len())));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
        return Err(Error::Input(format!("duplicate label '{dup}'")));
    }
    if images.is_empty() {
        return Err(Error::Input("no images to classify".into()));
    }
    let mut out = Vec::with_capacity(images.len());
    for image in images {
        let logits = scorer.logits(image, labels)?;
        if logits.len() != labels.len() || logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Backend(format!(
                "scorer {} returned unusable logits for {}",
                scorer.name(),
                image.stem()
            )));
        }
        let probs = softmax(&logits);
        let mut best = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        out.push(ClassificationResult {
            prompt_id: image.prompt_id.clone(),
            seed: image.seed,
            scores: labels.iter().cloned().zip(probs).collect(),
            argmax: labels[best].clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub group: String,
    pub fractions: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
    pub count: usize,
}

/// Argmax fractions per group. `groups` maps prompt id to group key; every
/// result must be assigned. Groups with no results are dropped with a warning.
pub fn summarize_outcomes(
    results: &[ClassificationResult],
    groups: &BTreeMap<String, String>,
    labels: &[String],
) -> Result<Vec<OutcomeSummary>> {
    let mut counts: BTreeMap<&str, BTreeMap<String, usize>> = BTreeMap::new();
    for g in groups.values() {
        counts.entry(g.as_str()).or_default();
    }
    for r in results {
        let group = groups
            .get(&r.prompt_id)
            .ok_or_else(|| Error::Input(format!("prompt {} has no group assignment", r.prompt_id)))?;
        *counts
            .get_mut(group.as_str())
            .expect("seeded above")
            .entry(r.argmax.clone())
            .or_default() += 1;
    }
    let mut out = Vec::new();
    for (group, by_label) in counts {
        let count: usize = by_label.values().sum();
        if count == 0 {
            log::warn!("group {group} has no classified images; excluded");
            continue;
        }
        let mut all: BTreeMap<String, usize> = labels.iter().map(|l| (l.clone(), 0)).collect();
        all.extend(by_label);
        out.push(OutcomeSummary {
            group: group.to_string(),
            fractions: all.iter().map(|(l, &k)| (l.clone(), k as f64 / count as f64)).collect(),
            counts: all,
            count,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub group: String,
    /// Fraction of images classified as the report label.
    pub fraction: f64,
    pub count: usize,
    pub gap_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub label: String,
    pub rows: Vec<OutcomeRow>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

/// Join outcome fractions for `label` with per-group gap differences and
/// correlate the two columns when at least 3 groups carry both.
pub fn outcome_report(
    outcomes: &[OutcomeSummary],
    gap_differences: &BTreeMap<String, f64>,
    label: &str,
) -> Result<OutcomeReport> {
    let mut rows = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let fraction = *o
            .fractions
            .get(label)
            .ok_or_else(|| Error::Input(format!("label '{label}' was not a candidate label")))?;
        rows.push(OutcomeRow {
            group: o.group.clone(),
            fraction,
            count: o.count,
            gap_difference: gap_differences.get(&o.group).copied(),
        });
    }
    let paired: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.gap_difference.map(|g| (g, r.fraction)))
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = paired.into_iter().unzip();
    let coefficient = |method| match correlate(&x, &y, method) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("correlation omitted: {e}");
            None
        }
    };
    let (pearson, spearman) = if x.len() < 3 {
        log::warn!("correlation omitted: only {} groups have both columns", x.len());
        (None, None)
    } else {
        (coefficient(Method::Pearson), coefficient(Method::Spearman))
    };
    Ok(OutcomeReport {
        label: label.to_string(),
        rows,
        pearson,
        spearman,
    })
}

/// Rows `prompt_id,seed,<label scores...>,argmax`.
pub fn write_results_csv(results: &[ClassificationResult], labels: &[String], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["prompt_id".to_string(), "seed".to_string()];
    header.extend(labels.iter().cloned());
    header.push("argmax".into());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for r in results {
        let mut row = vec![r.prompt_id.clone(), r.seed.to_string()];
        row.extend(labels.iter().map(|l| r.scores.get(l).copied().unwrap_or(f64::NAN).to_string()));
        row.push(r.argmax.clone());
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows `group,percent,count,gap_difference`.
pub fn write_outcome_csv(report: &OutcomeReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["group", "percent", "count", "gap_difference"])
        .map_err(|e| csv_error(path, e))?;
    for r in &report.rows {
        w.write_record([
            r.group.clone(),
            format!("{:.2}", r.fraction * 100.0),
            r.count.to_string(),
            r.gap_difference.map(|g| g.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
