//! Shared test oracles: slow, definition-level implementations the fast
//! library code is checked against.

#![allow(dead_code)]

use kprune_core::linkage::LinkageMethod;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Sum of squared errors of a cluster around its centroid.
pub fn sse(cluster: &[Vec<f64>]) -> f64 {
    let dim = cluster[0].len();
    let inv = 1.0 / cluster.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in cluster {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x * inv;
        }
    }
    cluster
        .iter()
        .map(|v| {
            v.iter()
                .zip(&mean)
                .map(|(x, m)| (x - m) * (x - m))
                .sum::<f64>()
        })
        .sum()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Cluster distance straight from the linkage definition (no recurrences):
/// Ward as the SSE increase of the merge, the others as min/max/mean over
/// all cross-cluster point pairs.
pub fn naive_cluster_distance(
    kernels: &[Vec<f64>],
    a: &[usize],
    b: &[usize],
    method: LinkageMethod,
) -> f64 {
    match method {
        LinkageMethod::Ward => {
            let pts = |ids: &[usize]| -> Vec<Vec<f64>> {
                ids.iter().map(|&i| kernels[i].clone()).collect()
            };
            let mut union = pts(a);
            union.extend(pts(b));
            let sse_a = if a.len() > 1 { sse(&pts(a)) } else { 0.0 };
            let sse_b = if b.len() > 1 { sse(&pts(b)) } else { 0.0 };
            sse(&union) - sse_a - sse_b
        }
        LinkageMethod::Single => {
            let mut best = f64::INFINITY;
            for &i in a {
                for &j in b {
                    best = best.min(euclidean(&kernels[i], &kernels[j]));
                }
            }
            best
        }
        LinkageMethod::Complete => {
            let mut best = f64::NEG_INFINITY;
            for &i in a {
                for &j in b {
                    best = best.max(euclidean(&kernels[i], &kernels[j]));
                }
            }
            best
        }
        LinkageMethod::Average => {
            let mut sum = 0.0;
            for &i in a {
                for &j in b {
                    sum += euclidean(&kernels[i], &kernels[j]);
                }
            }
            sum / (a.len() * b.len()) as f64
        }
    }
}

/// One merge produced by the oracle: (left id, right id, distance), ids in
/// the same convention as the library (leaves 0..n, merge c creates n+c-1).
pub type OracleMerge = (usize, usize, f64);

/// Agglomerative clustering by full recomputation: every step scans all
/// cluster pairs and evaluates the linkage from its definition, O(n^3) or
/// worse. Ties break on the lowest (left id, right id) pair.
pub fn naive_agglomerate(
    kernels: &[Vec<f64>],
    method: LinkageMethod,
    steps: usize,
) -> (Vec<OracleMerge>, Vec<Vec<usize>>) {
    let n = kernels.len();
    assert!(steps <= n.saturating_sub(1));
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::with_capacity(steps);

    for step in 1..=steps {
        let mut best: Option<(f64, usize, usize)> = None;
        for x in 0..clusters.len() {
            for y in (x + 1)..clusters.len() {
                let d = naive_cluster_distance(kernels, &clusters[x].1, &clusters[y].1, method);
                let (lo, hi) = if clusters[x].0 < clusters[y].0 {
                    (clusters[x].0, clusters[y].0)
                } else {
                    (clusters[y].0, clusters[x].0)
                };
                let better = match best {
                    None => true,
                    Some((bd, bl, bh)) => match d.total_cmp(&bd) {
                        std::cmp::Ordering::Less => true,
                        std::cmp::Ordering::Greater => false,
                        std::cmp::Ordering::Equal => (lo, hi) < (bl, bh),
                    },
                };
                if better {
                    best = Some((d, lo, hi));
                }
            }
        }
        let (d, lo, hi) = best.expect("at least two clusters remain");
        let xp = clusters.iter().position(|(id, _)| *id == lo).unwrap();
        let yp = clusters.iter().position(|(id, _)| *id == hi).unwrap();
        let mut members = clusters[xp].1.clone();
        members.extend(clusters[yp].1.iter().copied());
        members.sort_unstable();
        // Remove the higher position first so the lower index stays valid.
        let (first, second) = if xp > yp { (xp, yp) } else { (yp, xp) };
        clusters.remove(first);
        clusters.remove(second);
        clusters.push((n + step - 1, members));
        merges.push((lo, hi, d));
    }

    let mut partition: Vec<Vec<usize>> = clusters.into_iter().map(|(_, m)| m).collect();
    partition.sort_unstable_by_key(|m| m[0]);
    (merges, partition)
}

/// First pooled value whose cumulative frequency reaches `s_bar`, evaluated
/// literally: walk the distinct sorted values and test count(x <= v) against
/// the required count `s_bar * n` (with the same 1e-9 slack the library uses
/// for products that land a hair above an integer).
pub fn naive_quantile(pool: &[f64], s_bar: f64) -> Option<f64> {
    if s_bar == 0.0 {
        return None;
    }
    let need = s_bar * pool.len() as f64 - 1e-9;
    let mut values = pool.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    for v in &values {
        let count = pool.iter().filter(|&&x| x <= *v).count();
        if count as f64 >= need {
            return Some(*v);
        }
    }
    values.last().copied()
}

/// Random kernel vectors for clustering tests.
pub fn random_kernels(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn relative_close(a: f64, b: f64, tol: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(1.0);
    (a - b).abs() <= tol * scale
}
