//! Clustering and partition-agreement scores.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{seeded, STREAM_EVAL};

const MAX_LLOYD_ITERS: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 || k > points.len() {
        return Err(Error::Argument(format!(
            "need 1 <= k <= n, got k={k} for n={}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points have different dimensions".into()));
    }
    Ok(dim)
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// k-means with k-means++ seeding. Lloyd iterations stop at an assignment
/// fixpoint or after 300 rounds. A cluster that empties keeps its center.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    let dim = check_points(points, k)?;
    let n = points.len();
    let mut rng = seeded(seed, STREAM_EVAL);
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok(assign)
}

/// Average-linkage agglomerative clustering on Euclidean distances, cut at
/// `k` clusters. Cluster ids are numbered by first appearance.
pub fn agglomerative(points: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    check_points(points, k)?;
    let n = points.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(&points[i], &points[j]).sqrt();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    // Root cluster of each point.
    let mut owner: Vec<usize> = (0..n).collect();
    for _ in 0..n - k {
        let mut best = (usize::MAX, usize::MAX);
        let mut best_d = f64::INFINITY;
        for i in (0..n).filter(|&i| alive[i]) {
            for j in (i + 1..n).filter(|&j| alive[j]) {
                if dist[i][j] < best_d {
                    best_d = dist[i][j];
                    best = (i, j);
                }
            }
        }
        let (a, b) = best;
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for c in (0..n).filter(|&c| alive[c] && c != a && c != b) {
            let d = (sa * dist[a][c] + sb * dist[b][c]) / (sa + sb);
            dist[a][c] = d;
            dist[c][a] = d;
        }
        size[a] += size[b];
        alive[b] = false;
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
    }
    Ok(relabel(&owner))
}

fn relabel(raw: &[usize]) -> Vec<usize> {
    let mut ids = HashMap::new();
    raw.iter()
        .map(|r| {
            let next = ids.len();
            *ids.entry(*r).or_insert(next)
        })
        .collect()
}

fn check_lengths(assignments: &[usize], labels: &[usize]) -> Result<()> {
    if assignments.len() != labels.len() || labels.is_empty() {
        return Err(Error::Argument(format!(
            "need equal nonempty assignment and label lists, got {} and {}",
            assignments.len(),
            labels.len()
        )));
    }
    Ok(())
}

fn contingency(assignments: &[usize], labels: &[usize]) -> HashMap<(usize, usize), usize> {
    let mut table = HashMap::new();
    for (&a, &l) in assignments.iter().zip(labels) {
        *table.entry((a, l)).or_insert(0) += 1;
    }
    table
}

/// Fraction of points whose label is the majority label of their cluster.
pub fn purity(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(assignments, labels)?;
    let mut best: HashMap<usize, usize> = HashMap::new();
    for ((a, _), count) in contingency(assignments, labels) {
        let e = best.entry(a).or_insert(0);
        *e = (*e).max(count);
    }
    Ok(best.values().sum::<usize>() as f64 / labels.len() as f64)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies. Two
/// single-block partitions score 1.
pub fn nmi(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(assignments, labels)?;
    let n = labels.len() as f64;
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cl: HashMap<usize, usize> = HashMap::new();
    for (&a, &l) in assignments.iter().zip(labels) {
        *ca.entry(a).or_insert(0) += 1;
        *cl.entry(l).or_insert(0) += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hl = entropy(cl.values().copied(), n);
    let denom = 0.5 * (ha + hl);
    if denom == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for ((a, l), c) in contingency(assignments, labels) {
        let pij = c as f64 / n;
        let pi = ca[&a] as f64 / n;
        let pj = cl[&l] as f64 / n;
        mi += pij * (pij / (pi * pj)).ln();
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}
