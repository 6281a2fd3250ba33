//! HDBSCAN (Campello, Moulavi & Sander; McInnes & Healy) over a dense
//! distance matrix: core distances, mutual reachability MST, single-linkage
//! hierarchy, condensed tree and excess-of-mass cluster selection.
//!
//! Labels are `-1` for noise and `0..k` otherwise, in order of first
//! appearance in the condensed tree; callers canonicalize as needed.

use crate::error::{Error, Result};

pub const NOISE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HdbscanOptions {
    pub min_cluster_size: usize,
    /// Neighbourhood for core distances, self included. Defaults to
    /// `min_cluster_size`.
    pub min_samples: Option<usize>,
}

impl HdbscanOptions {
    pub fn new(min_cluster_size: usize) -> Self {
        Self {
            min_cluster_size,
            min_samples: None,
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

struct Merge {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

/// Minimum spanning tree of the mutual reachability graph (Prim, dense).
fn mutual_reachability_mst(points: &[Vec<f64>], min_samples: usize) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(&points[i], &points[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let k = min_samples.clamp(1, n);
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut row = dist[i * n..(i + 1) * n].to_vec();
            row.sort_by(f64::total_cmp);
            row[k - 1]
        })
        .collect();
    let reach = |i: usize, j: usize| dist[i * n + j].max(core[i]).max(core[j]);

    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if !in_tree[j] {
                let d = reach(current, j);
                if d < best[j] {
                    best[j] = d;
                    from[j] = current;
                }
            }
        }
        let next = (0..n)
            .filter(|&j| !in_tree[j])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b)))
            .expect("a vertex remains");
        edges.push((from[next], next, best[next]));
        in_tree[next] = true;
        current = next;
    }
    edges.sort_by(|a, b| {
        a.2.total_cmp(&b.2)
            .then_with(|| a.0.min(a.1).cmp(&b.0.min(b.1)))
            .then_with(|| a.0.max(a.1).cmp(&b.0.max(b.1)))
    });
    edges
}

fn single_linkage(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Merge> {
    let mut parent: Vec<usize> = (0..2 * n).collect();
    let mut size = vec![1usize; 2 * n];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for (i, &(a, b, d)) in edges.iter().enumerate() {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let node = n + i;
        parent[ra] = node;
        parent[rb] = node;
        size[node] = size[ra] + size[rb];
        merges.push(Merge {
            left: ra,
            right: rb,
            distance: d,
            size: size[node],
        });
    }
    merges
}

/// One row of the condensed tree: `child` (a point `< n` or a cluster label
/// `>= n`) leaves `parent` at `lambda`.
#[derive(Debug, Clone, Copy)]
struct Condensed {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

fn condense(n: usize, merges: &[Merge], min_size: usize) -> Vec<Condensed> {
    let root = 2 * n - 2;
    let node_size = |node: usize| if node < n { 1 } else { merges[node - n].size };
    let mut relabel = vec![0usize; 2 * n - 1];
    relabel[root] = n;
    let mut next_label = n + 1;
    let mut out = Vec::new();
    let mut stack = vec![root];

    fn leaves(n: usize, merges: &[Merge], node: usize, out: &mut Vec<usize>) {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                stack.push(merges[x - n].right);
                stack.push(merges[x - n].left);
            }
        }
    }

    while let Some(node) = stack.pop() {
        if node < n {
            continue;
        }
        let m = &merges[node - n];
        let lambda = if m.distance > 0.0 { 1.0 / m.distance } else { f64::INFINITY };
        let (left, right) = (m.left, m.right);
        let (ls, rs) = (node_size(left), node_size(right));
        let parent = relabel[node];
        let fall_out = |child: usize, out: &mut Vec<Condensed>| {
            let mut pts = Vec::new();
            leaves(n, merges, child, &mut pts);
            for p in pts {
                out.push(Condensed {
                    parent,
                    child: p,
                    lambda,
                    size: 1,
                });
            }
        };
        match (ls >= min_size, rs >= min_size) {
            (true, true) => {
                for (child, size) in [(left, ls), (right, rs)] {
                    relabel[child] = next_label;
                    out.push(Condensed {
                        parent,
                        child: next_label,
                        lambda,
                        size,
                    });
                    next_label += 1;
                    stack.push(child);
                }
            }
            (false, false) => {
                fall_out(left, &mut out);
                fall_out(right, &mut out);
            }
            (true, false) => {
                relabel[left] = parent;
                fall_out(right, &mut out);
                stack.push(left);
            }
            (false, true) => {
                relabel[right] = parent;
                fall_out(left, &mut out);
                stack.push(right);
            }
        }
    }
    out
}

/// Cluster `points` by density. Deterministic for a fixed input order, and
/// independent of that order for data without distance ties.
pub fn hdbscan(points: &[Vec<f64>], options: &HdbscanOptions) -> Result<Vec<i64>> {
    let min_size = options.min_cluster_size;
    if min_size < 2 {
        return Err(Error::Input(format!(
            "min_cluster_size must be at least 2, got {min_size}"
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("clustering inputs contain non-finite values".into()));
    }
    let n = points.len();
    if n < min_size {
        return Ok(vec![NOISE; n]);
    }
    let min_samples = options.min_samples.unwrap_or(min_size);
    let edges = mutual_reachability_mst(points, min_samples);
    let merges = single_linkage(n, &edges);
    let tree = condense(n, &merges, min_size);

    let root = n;
    let clusters = tree.iter().filter(|c| c.child >= n).count() + 1;
    let idx = |label: usize| label - n;
    let mut birth = vec![0.0f64; clusters];
    let mut parent_of = vec![usize::MAX; clusters];
    for row in tree.iter().filter(|c| c.child >= n) {
        birth[idx(row.child)] = row.lambda;
        parent_of[idx(row.child)] = row.parent;
    }
    let mut stability = vec![0.0f64; clusters];
    for row in &tree {
        let b = birth[idx(row.parent)];
        if row.lambda > b {
            stability[idx(row.parent)] += (row.lambda - b) * row.size as f64;
        }
    }

    let mut selected = vec![false; clusters];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); clusters];
    for row in tree.iter().filter(|c| c.child >= n) {
        children[idx(row.parent)].push(idx(row.child));
    }
    // Labels grow with depth, so descending order visits children first.
    for c in (1..clusters).rev() {
        if children[c].is_empty() {
            selected[c] = true;
            continue;
        }
        let subtree: f64 = children[c].iter().map(|&k| stability[k]).sum();
        if subtree > stability[c] {
            stability[c] = subtree;
        } else {
            selected[c] = true;
            let mut stack = children[c].clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend(children[k].iter().copied());
            }
        }
    }
    if clusters == 1 {
        // The root never split. It is a cluster only if it never thinned
        // out either: every point leaves at one density level.
        let first = tree[0].lambda;
        if tree.iter().all(|r| r.lambda == first) {
            selected[0] = true;
        }
    }

    let mut cluster_parent = vec![root; clusters];
    for (c, &p) in parent_of.iter().enumerate() {
        if p != usize::MAX {
            cluster_parent[c] = p;
        }
    }
    let mut point_parent = vec![root; n];
    for row in tree.iter().filter(|c| c.child < n) {
        point_parent[row.child] = row.parent;
    }
    let mut label_of_cluster = vec![NOISE; clusters];
    let mut next = 0;
    for c in 0..clusters {
        if selected[c] {
            label_of_cluster[c] = next;
            next += 1;
        }
    }
    let labels = (0..n)
        .map(|p| {
            let mut c = point_parent[p];
            loop {
                if selected[idx(c)] {
                    return label_of_cluster[idx(c)];
                }
                if c == root {
                    return NOISE;
                }
                c = cluster_parent[idx(c)];
            }
        })
        .collect();
    Ok(labels)
}
