use std::collections::{BTreeMap, BTreeSet};

use hspace_core::backend::{BackendConfig, HVector, Shape};
use hspace_core::clustering::{
    build_cluster_map, cluster, cluster_average, embed_2d, report::cluster_report, ClusterParams,
    ClusteringRegistry, NOISE,
};
use hspace_core::ingest::textgen::ScriptedTextGen;
use hspace_core::sampling::{PromptRecord, Role};
use hspace_core::store::VectorArchive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const DIM: usize = 16;

/// Two Gaussian blobs with unit spread whose centres are 10 sigma apart.
fn blobs(per_blob: usize, seed: u64) -> Vec<(String, Vec<f32>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let mut out = Vec::new();
    for blob in 0..2 {
        for i in 0..per_blob {
            let mut v: Vec<f32> = (0..DIM).map(|_| normal.sample(&mut rng)).collect();
            // Offset along a shared axis, away from the origin so cosine geometry
            // does not matter for the averages.
            v[0] += if blob == 0 { 20.0 } else { 30.0 };
            out.push((format!("b{blob}-{i:03}"), v, blob));
        }
    }
    out
}

fn archive_of(points: &[(String, Vec<f32>, usize)]) -> VectorArchive {
    let config = BackendConfig::default();
    let hash = config.hash();
    let prompts = points
        .iter()
        .map(|(id, _, blob)| PromptRecord::new(id.clone(), format!("caption {id} of blob {blob}"), Role::Corpus))
        .collect();
    let vectors = points
        .iter()
        .map(|(id, v, _)| HVector::new(v.clone(), Shape::new(DIM, 1, 1), id.clone(), 0, 0, hash.clone()).unwrap())
        .collect();
    VectorArchive::from_parts(config, prompts, vectors).unwrap()
}

fn params(min: usize) -> ClusterParams {
    ClusterParams {
        min_cluster_size: min,
        perplexity: 10.0,
        ..ClusterParams::default()
    }
}

#[test]
fn embedding_separates_blobs() {
    let points = blobs(50, 1);
    let archive = archive_of(&points);
    let refs: Vec<&HVector> = archive.vectors().iter().collect();
    let coords = embed_2d(&refs, 30.0, 0).unwrap();
    let centroid = |blob: usize| {
        let members: Vec<[f64; 2]> = points.iter().zip(&coords).filter(|(p, _)| p.2 == blob).map(|(_, c)| *c).collect();
        let n = members.len() as f64;
        let c = [members.iter().map(|m| m[0]).sum::<f64>() / n, members.iter().map(|m| m[1]).sum::<f64>() / n];
        let spread = members.iter().map(|m| ((m[0] - c[0]).powi(2) + (m[1] - c[1]).powi(2)).sqrt()).fold(0.0, f64::max);
        (c, spread)
    };
    let (c0, s0) = centroid(0);
    let (c1, s1) = centroid(1);
    let between = ((c0[0] - c1[0]).powi(2) + (c0[1] - c1[1]).powi(2)).sqrt();
    assert!(between > 3.0 * s0.max(s1), "between {between}, spreads {s0} {s1}");
    assert!(coords.iter().all(|c| c[0].is_finite() && c[1].is_finite()));
}

#[test]
fn two_blobs_two_clusters() {
    let points = blobs(50, 2);
    let archive = archive_of(&points);
    let map = build_cluster_map(&archive, &params(10), &ClusteringRegistry::with_builtins()).unwrap();
    assert_eq!(map.cluster_ids, vec![0, 1]);
    assert_eq!(map.labels.values().filter(|&&l| l == NOISE).count(), 0);
    for (id, _, blob) in &points {
        let same: BTreeSet<i64> = points.iter().filter(|p| p.2 == *blob).map(|p| map.labels[&p.0]).collect();
        assert_eq!(same.len(), 1, "blob {blob} split ({id})");
    }
}

#[test]
fn uniform_scatter_is_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let coords: Vec<[f64; 2]> = (0..20).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    assert!(cluster(&coords, 15).unwrap().iter().all(|&l| l == NOISE));
}

#[test]
fn identical_points_one_cluster() {
    let labels = cluster(&vec![[1.5, -2.0]; 30], 5).unwrap();
    assert!(labels.iter().all(|&l| l == 0));
}

#[test]
fn deterministic_and_permutation_invariant() {
    let points = blobs(40, 4);
    let registry = ClusteringRegistry::with_builtins();
    let archive = archive_of(&points);
    let first = build_cluster_map(&archive, &params(10), &registry).unwrap();
    for _ in 0..4 {
        assert_eq!(build_cluster_map(&archive, &params(10), &registry).unwrap(), first);
    }
    let mut shuffled = points.clone();
    shuffled.reverse();
    shuffled.swap(3, 50);
    let other = build_cluster_map(&archive_of(&shuffled), &params(10), &registry).unwrap();
    let sets = |m: &hspace_core::clustering::ClusterMap| -> BTreeSet<Vec<String>> { m.rosters.values().cloned().collect() };
    assert_eq!(sets(&first), sets(&other));
    for (id, roster) in &first.rosters {
        let twin = other.rosters.iter().find(|(_, r)| *r == roster).unwrap().0;
        let a = first.average(*id).unwrap().values();
        let b = other.average(*twin).unwrap().values();
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6));
    }
}

#[test]
fn average_linearity() {
    let points = blobs(10, 5);
    let archive = archive_of(&points);
    let all: BTreeMap<String, i64> = points.iter().map(|p| (p.0.clone(), 0)).collect();
    let halves: BTreeMap<String, i64> = points.iter().enumerate().map(|(i, p)| (p.0.clone(), if i < 7 { 0 } else { 1 })).collect();
    let whole = cluster_average(&archive, &all, 0, 0).unwrap();
    let a = cluster_average(&archive, &halves, 0, 0).unwrap();
    let b = cluster_average(&archive, &halves, 1, 0).unwrap();
    let n = points.len() as f64;
    for k in 0..DIM {
        let mixed = (7.0 * f64::from(a.values()[k]) + 13.0 * f64::from(b.values()[k])) / n;
        assert!((mixed - f64::from(whole.values()[k])).abs() < 1e-6);
    }
}

#[test]
fn report_sections_and_degradation() {
    let points = blobs(30, 6);
    let archive = archive_of(&points);
    let map = build_cluster_map(&archive, &params(10), &ClusteringRegistry::with_builtins()).unwrap();
    let mut service = ScriptedTextGen::new([Ok("blob zero".to_string()), Err("down".to_string())]);
    let report = cluster_report(&map, &archive, Some(&mut service));
    assert_eq!(report.clusters.len(), 2);
    for section in &report.clusters {
        assert_eq!(section.size, map.rosters[&section.id].len());
        for entry in &section.roster {
            assert!(section.request.contains(&entry.caption));
            assert_eq!(map.labels[&entry.prompt_id], section.id);
        }
    }
    assert_eq!(report.clusters[0].summary.as_deref(), Some("blob zero"));
    assert_eq!(report.clusters[1].summary, None);
    let json = serde_json::to_value(&report).unwrap();
    assert!(json["clusters"][1]["summary"].is_null());
    assert!(report.to_markdown().contains("## Cluster 1"));
}

#[test]
fn map_round_trips_through_disk() {
    let points = blobs(20, 7);
    let archive = archive_of(&points);
    let mut map = build_cluster_map(&archive, &params(10), &ClusteringRegistry::with_builtins()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = map.write(&dir.path().join("map"), &archive).unwrap();
    let back = hspace_core::clustering::ClusterMap::read(&path).unwrap();
    assert_eq!(back, map);
}

#[test]
fn too_few_points_for_perplexity() {
    let points = blobs(2, 8);
    let archive = archive_of(&points[..2]);
    let refs: Vec<&HVector> = archive.vectors().iter().collect();
    assert!(matches!(embed_2d(&refs, 30.0, 0), Err(hspace_core::Error::Input(_))));
}
