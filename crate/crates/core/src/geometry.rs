//! Cosine geometry over seed-paired h-vectors.
//!
//! Every per-seed term compares two vectors captured under the same seed.
//! Aggregates are means of per-seed distances; distances between
//! seed-averaged vectors are reported alongside but never used for ranking.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::HVector;
use crate::error::{Error, Result};
use crate::store::VectorArchive;

/// `1 - a.b / (|a| |b|)`, accumulated in f64 and clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "cosine distance over vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    finish(dot, na, nb)
}

/// f64 variant of [`cosine_distance`].
pub fn cosine_distance_f64(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "cosine distance over vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    finish(dot, na, nb)
}

fn finish(dot: f64, na: f64, nb: f64) -> Result<f64> {
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine distance of a zero-norm vector".into()));
    }
    // One sqrt of the product: sqrt(fl(n * n)) == n, so d(a, a) is exactly 0.
    let d = 1.0 - dot / (na * nb).sqrt();
    Ok(d.clamp(0.0, 2.0))
}

/// Distance between two vectors that must share a seed.
fn paired_distance(a: &HVector, b: &HVector) -> Result<f64> {
    if a.seed != b.seed {
        return Err(Error::Data(format!(
            "refusing to compare ({}, seed {}) with ({}, seed {}) across seeds",
            a.prompt_id, a.seed, b.prompt_id, b.seed
        )));
    }
    cosine_distance(a.values(), b.values())
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt(), n)
}

/// A with-concept prompt and its neutralized counterpart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptPair {
    pub with_concept: String,
    pub without_concept: String,
    pub group: String,
    pub concept: String,
}

/// Provenance of one per-seed distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTerm {
    pub with_prompt: String,
    pub without_prompt: String,
    pub with_seed: u64,
    pub without_seed: u64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub group: String,
    pub concept: String,
    /// Seed to distance; with several pairs per group the pair distances
    /// under one seed are averaged first.
    pub distances: BTreeMap<u64, f64>,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub count: usize,
    /// Cosine distance between the seed-averaged with- and without-vectors.
    #[serde(default)]
    pub averaged_vector_distance: Option<f64>,
    /// Norm of the seed-averaged difference vector.
    #[serde(default)]
    pub mean_difference_norm: f64,
    #[serde(default, skip_serializing)]
    pub terms: Vec<PairTerm>,
}

fn lookup<'a>(archive: &'a VectorArchive, prompt: &str, seed: u64) -> Result<&'a HVector> {
    archive.get(prompt, seed).ok_or_else(|| {
        Error::Data(format!("missing seed partner: no vector for (prompt {prompt}, seed {seed})"))
    })
}

fn require_prompt(archive: &VectorArchive, prompt: &str) -> Result<()> {
    if archive.prompt(prompt).is_none() {
        return Err(Error::Data(format!("prompt '{prompt}' is not in the archive")));
    }
    Ok(())
}

/// Seed-paired distances between every with-concept prompt and its
/// counterpart, aggregated per (group, concept).
pub fn one_to_one_gap(archive: &VectorArchive, pairs: &[ConceptPair]) -> Result<Vec<GapReport>> {
    if pairs.is_empty() {
        return Err(Error::Input("pairing is empty".into()));
    }
    let seeds = archive.seeds();
    if seeds.is_empty() {
        return Err(Error::Data("archive holds no vectors".into()));
    }
    let mut grouped: BTreeMap<(&str, &str), Vec<&ConceptPair>> = BTreeMap::new();
    for pair in pairs {
        require_prompt(archive, &pair.with_concept)?;
        require_prompt(archive, &pair.without_concept)?;
        grouped
            .entry((pair.group.as_str(), pair.concept.as_str()))
            .or_default()
            .push(pair);
    }

    let mut reports = Vec::with_capacity(grouped.len());
    for ((group, concept), members) in grouped {
        let mut distances = BTreeMap::new();
        let mut terms = Vec::new();
        let dim = archive.shape().map(|s| s.len()).unwrap_or(0);
        let mut with_sum = vec![0.0f64; dim];
        let mut without_sum = vec![0.0f64; dim];
        for &seed in &seeds {
            let mut at_seed = 0.0;
            for pair in &members {
                let with = lookup(archive, &pair.with_concept, seed)?;
                let without = lookup(archive, &pair.without_concept, seed)?;
                let distance = paired_distance(with, without)?;
                at_seed += distance;
                for ((ws, os), (&w, &o)) in with_sum
                    .iter_mut()
                    .zip(without_sum.iter_mut())
                    .zip(with.values().iter().zip(without.values()))
                {
                    *ws += f64::from(w);
                    *os += f64::from(o);
                }
                terms.push(PairTerm {
                    with_prompt: pair.with_concept.clone(),
                    without_prompt: pair.without_concept.clone(),
                    with_seed: with.seed,
                    without_seed: without.seed,
                    distance,
                });
            }
            distances.insert(seed, at_seed / members.len() as f64);
        }
        let (mean, std, count) = mean_std(distances.values().copied());
        let samples = (seeds.len() * members.len()) as f64;
        let mean_difference_norm = with_sum
            .iter()
            .zip(&without_sum)
            .map(|(w, o)| ((w - o) / samples).powi(2))
            .sum::<f64>()
            .sqrt();
        reports.push(GapReport {
            group: group.to_string(),
            concept: concept.to_string(),
            distances,
            mean,
            std,
            count,
            averaged_vector_distance: cosine_distance_f64(&with_sum, &without_sum).ok(),
            mean_difference_norm,
            terms,
        });
    }
    Ok(reports)
}

/// `mean(a) - mean(b)` for two reports over the same group and seeds.
pub fn gap_difference(a: &GapReport, b: &GapReport) -> Result<f64> {
    if a.group != b.group {
        return Err(Error::Input(format!(
            "gap difference across groups '{}' and '{}'",
            a.group, b.group
        )));
    }
    let sa: BTreeSet<_> = a.distances.keys().collect();
    let sb: BTreeSet<_> = b.distances.keys().collect();
    if sa != sb {
        return Err(Error::Input(format!(
            "gap difference for '{}' over different seed sets",
            a.group
        )));
    }
    Ok(a.mean - b.mean)
}

/// Per-group `mean(concept_a) - mean(concept_b)`, for groups that have both.
pub fn gap_differences(
    reports: &[GapReport],
    concept_a: &str,
    concept_b: &str,
) -> Result<BTreeMap<String, f64>> {
    let mut by_group: BTreeMap<&str, (Option<&GapReport>, Option<&GapReport>)> = BTreeMap::new();
    for r in reports {
        let slot = by_group.entry(r.group.as_str()).or_default();
        if r.concept == concept_a {
            slot.0 = Some(r);
        } else if r.concept == concept_b {
            slot.1 = Some(r);
        }
    }
    let mut out = BTreeMap::new();
    for (group, pair) in by_group {
        if let (Some(a), Some(b)) = pair {
            out.insert(group.to_string(), gap_difference(a, b)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub rank: usize,
    pub prompt_id: String,
    pub caption: String,
    pub gaps: BTreeMap<u64, f64>,
    pub mean_gap: f64,
    pub std: f64,
}

/// Rank `corpus` prompts by `d(p, anchor_a) - d(p, anchor_b)`, averaged over
/// seeds. Descending: prompts closest to `anchor_b` come first. Ties break by
/// prompt id.
pub fn one_to_many_rank(
    archive: &VectorArchive,
    corpus: &[String],
    anchor_a: &str,
    anchor_b: &str,
) -> Result<Vec<RankingEntry>> {
    if corpus.is_empty() {
        return Err(Error::Input("ranking corpus is empty".into()));
    }
    require_prompt(archive, anchor_a)?;
    require_prompt(archive, anchor_b)?;
    let seeds = archive.seeds();
    let mut anchors = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let a = archive.get(anchor_a, seed).ok_or_else(|| {
            Error::Data(format!("anchor {anchor_a} has no vector for seed {seed}"))
        })?;
        let b = archive.get(anchor_b, seed).ok_or_else(|| {
            Error::Data(format!("anchor {anchor_b} has no vector for seed {seed}"))
        })?;
        anchors.push((seed, a, b));
    }

    let mut entries = Vec::with_capacity(corpus.len());
    for prompt in corpus {
        let record = archive
            .prompt(prompt)
            .ok_or_else(|| Error::Data(format!("prompt '{prompt}' is not in the archive")))?;
        let mut gaps = BTreeMap::new();
        for &(seed, a, b) in &anchors {
            let v = lookup(archive, prompt, seed)?;
            gaps.insert(seed, paired_distance(v, a)? - paired_distance(v, b)?);
        }
        let (mean_gap, std, _) = mean_std(gaps.values().copied());
        entries.push(RankingEntry {
            rank: 0,
            prompt_id: prompt.clone(),
            caption: record.text.clone(),
            gaps,
            mean_gap,
            std,
        });
    }
    entries.sort_by(|x, y| {
        y.mean_gap
            .total_cmp(&x.mean_gap)
            .then_with(|| x.prompt_id.cmp(&y.prompt_id))
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(entries)
}

/// Stored output of a one-to-many ranking run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingDocument {
    pub anchor_a: String,
    pub anchor_b: String,
    pub config_hash: String,
    pub entries: Vec<RankingEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapDifference {
    pub group: String,
    pub concept_a: String,
    pub concept_b: String,
    pub difference: f64,
}

/// Stored output of a one-to-one gap run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapDocument {
    pub config_hash: String,
    pub reports: Vec<GapReport>,
    #[serde(default)]
    pub differences: Vec<GapDifference>,
}

impl GapDocument {
    /// Differences for every pair of concepts present, `a < b` by name.
    pub fn new(config_hash: impl Into<String>, reports: Vec<GapReport>) -> Result<Self> {
        let concepts: BTreeSet<&str> = reports.iter().map(|r| r.concept.as_str()).collect();
        let concepts: Vec<&str> = concepts.into_iter().collect();
        let mut differences = Vec::new();
        for (i, a) in concepts.iter().enumerate() {
            for b in &concepts[i + 1..] {
                for (group, difference) in gap_differences(&reports, a, b)? {
                    differences.push(GapDifference {
                        group,
                        concept_a: a.to_string(),
                        concept_b: b.to_string(),
                        difference,
                    });
                }
            }
        }
        Ok(Self {
            config_hash: config_hash.into(),
            reports,
            differences,
        })
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    }
}

/// Raw per-seed rows: `group,concept,seed,distance`.
pub fn write_gap_raw_csv(reports: &[GapReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["group", "concept", "seed", "distance"])
        .map_err(|e| csv_error(path, e))?;
    for r in reports {
        for (seed, d) in &r.distances {
            w.write_record([&r.group, &r.concept, &seed.to_string(), &d.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Aggregate rows: `group,concept,mean,std,n`.
pub fn write_gap_summary_csv(reports: &[GapReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["group", "concept", "mean", "std", "n"])
        .map_err(|e| csv_error(path, e))?;
    for r in reports {
        w.write_record([
            &r.group,
            &r.concept,
            &r.mean.to_string(),
            &r.std.to_string(),
            &r.count.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ranking rows: `rank,prompt_id,caption,mean_gap`.
pub fn write_ranking_csv(entries: &[RankingEntry], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["rank", "prompt_id", "caption", "mean_gap"])
        .map_err(|e| csv_error(path, e))?;
    for e in entries {
        w.write_record([
            &e.rank.to_string(),
            &e.prompt_id,
            &e.caption,
            &e.mean_gap.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendConfig, Shape};
    use crate::sampling::{PromptRecord, Role};
    use approx::assert_relative_eq;

    fn hv(id: &str, seed: u64, values: &[f32]) -> HVector {
        let n = values.len();
        HVector::new(values.to_vec(), Shape::new(n, 1, 1), id, seed, 0, BackendConfig::default().hash())
            .unwrap()
    }

    fn archive(vectors: Vec<HVector>) -> VectorArchive {
        let ids: BTreeSet<String> = vectors.iter().map(|h| h.prompt_id.clone()).collect();
        let prompts = ids
            .into_iter()
            .map(|id| PromptRecord::new(id.clone(), format!("text {id}"), Role::Corpus))
            .collect();
        VectorArchive::from_parts(BackendConfig::default(), prompts, vectors).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_distance(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        let d = cosine_distance(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_relative_eq!(d, 1.0 - 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(d, 0.292_893_2, epsilon = 1e-7);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Numeric(_))));
        assert!(matches!(cosine_distance(&[1.0], &[1.0, 0.0]), Err(Error::Input(_))));
    }

    #[test]
    fn identical_pairs_have_zero_gap() {
        let mut vectors = Vec::new();
        for seed in 0..3 {
            let v = [seed as f32 + 1.0, 2.0, -1.0];
            vectors.push(hv("w", seed, &v));
            vectors.push(hv("n", seed, &v));
        }
        let pair = ConceptPair {
            with_concept: "w".into(),
            without_concept: "n".into(),
            group: "pilot".into(),
            concept: "female".into(),
        };
        let reports = one_to_one_gap(&archive(vectors), &[pair]).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].mean, 0.0);
        assert_eq!(reports[0].count, 3);
        assert!(reports[0].terms.iter().all(|t| t.with_seed == t.without_seed));
    }

    #[test]
    fn empty_pairing_rejected() {
        let a = archive(vec![hv("w", 0, &[1.0])]);
        assert!(matches!(one_to_one_gap(&a, &[]), Err(Error::Input(_))));
    }

    #[test]
    fn mean_of_distances_differs_from_distance_of_means() {
        // Seed 0 and seed 1 each put the pair 90 degrees apart, but the
        // seed-averaged vectors coincide.
        let vectors = vec![
            hv("w", 0, &[1.0, 0.0]),
            hv("n", 0, &[0.0, 1.0]),
            hv("w", 1, &[0.0, 1.0]),
            hv("n", 1, &[1.0, 0.0]),
        ];
        let pair = ConceptPair {
            with_concept: "w".into(),
            without_concept: "n".into(),
            group: "g".into(),
            concept: "c".into(),
        };
        let report = &one_to_one_gap(&archive(vectors), &[pair]).unwrap()[0];
        assert_eq!(report.mean, 1.0);
        assert_relative_eq!(report.averaged_vector_distance.unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(report.mean_difference_norm, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gap_difference_arithmetic() {
        let report = |mean: f64| GapReport {
            group: "teacher".into(),
            concept: "x".into(),
            distances: BTreeMap::from([(0, mean)]),
            mean,
            std: 0.0,
            count: 1,
            averaged_vector_distance: None,
            mean_difference_norm: 0.0,
            terms: vec![],
        };
        assert_relative_eq!(gap_difference(&report(0.3), &report(0.1)).unwrap(), 0.2, epsilon = 1e-15);
        assert_eq!(gap_difference(&report(0.3), &report(0.3)).unwrap(), 0.0);
        let mut other = report(0.1);
        other.group = "pilot".into();
        assert!(matches!(gap_difference(&report(0.3), &other), Err(Error::Input(_))));
        let mut seeds = report(0.1);
        seeds.distances.insert(5, 0.1);
        assert!(gap_difference(&report(0.3), &seeds).is_err());
    }

    #[test]
    fn prompt_equal_to_anchor_b_ranks_first() {
        let vectors = vec![
            hv("a", 0, &[1.0, 0.0, 0.0]),
            hv("b", 0, &[0.0, 1.0, 0.0]),
            hv("same-as-b", 0, &[0.0, 1.0, 0.0]),
            hv("between", 0, &[1.0, 1.0, 0.0]),
        ];
        let archive = archive(vectors);
        let corpus = vec!["between".to_string(), "same-as-b".to_string()];
        let ranking = one_to_many_rank(&archive, &corpus, "a", "b").unwrap();
        assert_eq!(ranking[0].prompt_id, "same-as-b");
        assert_eq!(ranking[0].rank, 1);
        assert_eq!(ranking[0].mean_gap, 1.0);
        assert_eq!(ranking[1].rank, 2);
        assert_eq!(ranking[0].std, 0.0);
    }

    #[test]
    fn ties_break_by_prompt_id() {
        let vectors = vec![
            hv("a", 0, &[1.0, 0.0]),
            hv("b", 0, &[0.0, 1.0]),
            hv("z", 0, &[1.0, 1.0]),
            hv("m", 0, &[1.0, 1.0]),
        ];
        let ranking = one_to_many_rank(&archive(vectors), &["z".into(), "m".into()], "a", "b").unwrap();
        assert_eq!(ranking[0].prompt_id, "m");
        assert_eq!(ranking[1].prompt_id, "z");
    }

    #[test]
    fn anchor_missing_seed_is_data_error() {
        let vectors = vec![
            hv("a", 0, &[1.0, 0.0]),
            hv("b", 0, &[0.0, 1.0]),
            hv("b", 1, &[0.0, 1.0]),
            hv("p", 0, &[1.0, 1.0]),
            hv("p", 1, &[1.0, 1.0]),
        ];
        let err = one_to_many_rank(&archive(vectors), &["p".into()], "a", "b").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("seed 1"), "{err}");
    }

    #[test]
    fn csv_writers() {
        let dir = tempfile::tempdir().unwrap();
        let vectors = vec![hv("a", 0, &[1.0, 0.0]), hv("b", 0, &[0.0, 1.0]), hv("p", 0, &[1.0, 2.0])];
        let ranking = one_to_many_rank(&archive(vectors), &["p".into()], "a", "b").unwrap();
        let path = dir.path().join("r.csv");
        write_ranking_csv(&ranking, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("rank,prompt_id,caption,mean_gap\n1,p,text p,"), "{text}");
    }
}
