//! Exact t-SNE (van der Maaten & Hinton) with the usual optimisation
//! schedule: early exaggeration, momentum switch and per-parameter gains.
//! O(n^2) per iteration, intended for a few thousand points.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::seed_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneOptions {
    pub perplexity: f64,
    pub seed: u64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    /// `None` picks `max(n / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
}

impl TsneOptions {
    pub fn new(perplexity: f64, seed: u64) -> Self {
        Self {
            perplexity,
            seed,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: None,
        }
    }
}

fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Row-conditional affinities whose entropy matches `ln(perplexity)`.
fn conditional_affinities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let d = &dist[i * n..(i + 1) * n];
        let min = (0..n)
            .filter(|&j| j != i)
            .map(|j| d[j])
            .fold(f64::INFINITY, f64::min);
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        for _ in 0..200 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                row[j] = if j == i { 0.0 } else { (-(d[j] - min) * beta).exp() };
                sum += row[j];
                weighted += (d[j] - min) * row[j];
            }
            let entropy = sum.ln() + beta * weighted / sum;
            let diff = entropy - target;
            if diff.abs() < 1e-10 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let sum: f64 = row.iter().sum();
        for j in 0..n {
            p[i * n + j] = row[j] / sum;
        }
    }
    p
}

/// Embed `points` into two dimensions. Requires `n >= 3 * perplexity`.
pub fn tsne(points: &[Vec<f64>], options: &TsneOptions) -> Result<Vec<[f64; 2]>> {
    let n = points.len();
    if !(options.perplexity.is_finite() && options.perplexity > 0.0) {
        return Err(Error::Input(format!(
            "perplexity {} must be positive",
            options.perplexity
        )));
    }
    if (n as f64) < 3.0 * options.perplexity || n < 2 {
        return Err(Error::Input(format!(
            "t-SNE with perplexity {} needs at least {} points, got {n}",
            options.perplexity,
            (3.0 * options.perplexity).ceil().max(2.0)
        )));
    }
    if let Some(dim) = points.first().map(Vec::len) {
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Input("t-SNE inputs differ in dimension".into()));
        }
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("t-SNE inputs contain non-finite values".into()));
    }

    let dist = squared_distances(points);
    let cond = conditional_affinities(&dist, n, options.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut rng = seed_rng(options.seed);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            [
                rng.sample::<f64, _>(StandardNormal) * 1e-4,
                rng.sample::<f64, _>(StandardNormal) * 1e-4,
            ]
        })
        .collect();
    let lr = options
        .learning_rate
        .unwrap_or_else(|| (n as f64 / options.exaggeration / 4.0).max(50.0));
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0f64; 2]; n];

    for iter in 0..options.iterations {
        let early = iter < options.exaggeration_iterations;
        let exaggeration = if early { options.exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };

        let mut sum_q = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                sum_q += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coeff = (exaggeration * p[i * n + j] - w / sum_q) * w;
                g[0] += coeff * (y[i][0] - y[j][0]);
                g[1] += coeff * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for k in 0..2 {
                let same_sign = (grad[i][k] > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same_sign {
                    (gains[i][k] * 0.8).max(0.01)
                } else {
                    gains[i][k] + 0.2
                };
                update[i][k] = momentum * update[i][k] - lr * gains[i][k] * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        let (mx, my) = y
            .iter()
            .fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        for p in y.iter_mut() {
            p[0] -= mx / n as f64;
            p[1] -= my / n as f64;
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("t-SNE diverged".into()));
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affinities_hit_target_perplexity() {
        let points: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin() * 3.0, i as f64 * 0.1]).collect();
        let dist = squared_distances(&points);
        let p = conditional_affinities(&dist, 40, 10.0);
        for i in 0..40 {
            let row = &p[i * 40..(i + 1) * 40];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            let h: f64 = row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
            assert!((h.exp() - 10.0).abs() < 1e-4, "row {i} perplexity {}", h.exp());
        }
    }

    #[test]
    fn too_few_points() {
        let points = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(matches!(tsne(&points, &TsneOptions::new(30.0, 0)), Err(Error::Input(_))));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let points: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let mut options = TsneOptions::new(5.0, 9);
        options.iterations = 200;
        assert_eq!(tsne(&points, &options).unwrap(), tsne(&points, &options).unwrap());
        options.seed = 10;
        let other = tsne(&points, &options).unwrap();
        options.seed = 9;
        assert_ne!(tsne(&points, &options).unwrap(), other);
    }
}
