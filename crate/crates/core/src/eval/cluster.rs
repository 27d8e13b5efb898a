//! K-means and clustering agreement metrics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub silhouette: f64,
    pub ari: f64,
    pub nmi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after every assignment step.
    pub wcss: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(sq_dist(a, b))
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn distinct_count(points: &[Vec<f64>], at_least: usize) -> usize {
    let mut seen: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !seen.iter().any(|q| *q == p) {
            seen.push(p);
            if seen.len() >= at_least {
                break;
            }
        }
    }
    seen.len()
}

/// Lloyd's algorithm with farthest-point seeding. The first seed is a
/// uniformly drawn point; each further seed is the point farthest from the
/// seeds so far. Ties go to the lowest index.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    if k < 2 {
        return Err(invalid("K-means needs K >= 2"));
    }
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(invalid("points differ in dimension"));
    }
    if distinct_count(points, k) < k {
        return Err(Error::InsufficientData(format!("fewer than {k} distinct points")));
    }
    let mut r = rng::stream(seed, rng::KMEANS);
    let mut centroids = vec![points[r.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let mut far = (0, -1.0);
        for (i, p) in points.iter().enumerate() {
            let d = nearest(p, &centroids).1;
            if d > far.1 {
                far = (i, d);
            }
        }
        centroids.push(points[far.0].clone());
    }

    let mut assignments = vec![usize::MAX; points.len()];
    let mut wcss = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut changed = false;
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            total += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        wcss.push(total);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            // an emptied cluster keeps its previous centroid
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(KMeans {
        assignments,
        centroids,
        wcss,
        iterations,
    })
}

/// Mean silhouette with Euclidean distances. Points in singleton clusters
/// score 0; a single-cluster labelling scores 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() || points.is_empty() {
        return Err(invalid("silhouette needs one label per point"));
    }
    let clusters: Vec<usize> = {
        let mut c: Vec<usize> = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    if clusters.len() < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut sum: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (j, q) in points.iter().enumerate() {
            if i != j {
                let e = sum.entry(labels[j]).or_insert((0.0, 0));
                e.0 += dist(p, q);
                e.1 += 1;
            }
        }
        let own = match sum.get(&labels[i]) {
            Some(&(s, n)) if n > 0 => s / n as f64,
            _ => continue,
        };
        let other = sum
            .iter()
            .filter(|(&l, _)| l != labels[i])
            .map(|(_, &(s, n))| s / n as f64)
            .fold(f64::INFINITY, f64::min);
        let m = own.max(other);
        if m > 0.0 {
            total += (other - own) / m;
        }
    }
    Ok(total / points.len() as f64)
}

fn contingency(a: &[usize], b: &[usize]) -> (BTreeMap<(usize, usize), f64>, BTreeMap<usize, f64>, BTreeMap<usize, f64>) {
    let mut joint = BTreeMap::new();
    let mut ra = BTreeMap::new();
    let mut rb = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
        *ra.entry(x).or_insert(0.0) += 1.0;
        *rb.entry(y).or_insert(0.0) += 1.0;
    }
    (joint, ra, rb)
}

fn check_pair(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(invalid("partitions must be non-empty and of equal length"));
    }
    Ok(())
}

/// Adjusted Rand index (Hubert–Arabie).
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    check_pair(a, b)?;
    let c2 = |n: f64| n * (n - 1.0) / 2.0;
    let (joint, ra, rb) = contingency(a, b);
    let index: f64 = joint.values().map(|&n| c2(n)).sum();
    let sa: f64 = ra.values().map(|&n| c2(n)).sum();
    let sb: f64 = rb.values().map(|&n| c2(n)).sum();
    let total = c2(a.len() as f64);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    if max - expected == 0.0 {
        // both partitions trivial (one cluster or all singletons)
        return Ok(if joint.len() == ra.len() && joint.len() == rb.len() { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Mutual information normalized by the arithmetic mean of the two entropies.
pub fn normalized_mutual_info(a: &[usize], b: &[usize]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let (joint, ra, rb) = contingency(a, b);
    let h = |m: &BTreeMap<usize, f64>| -> f64 { -m.values().map(|&c| (c / n) * libm::log(c / n)).sum::<f64>() };
    let (ha, hb) = (h(&ra), h(&rb));
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| (c / n) * libm::log(c * n / (ra[&x] * rb[&y])))
        .sum();
    Ok((mi / (0.5 * (ha + hb))).clamp(0.0, 1.0))
}

/// K-means on the representations, scored against the true labels.
pub fn cluster_eval(reps: &[Vec<f64>], labels: &[usize], k: usize, seed: u64) -> Result<(ClusterMetrics, KMeans)> {
    if reps.len() != labels.len() {
        return Err(invalid("one label per representation required"));
    }
    let km = kmeans(reps, k, seed, 100)?;
    let metrics = ClusterMetrics {
        silhouette: silhouette(reps, &km.assignments)?,
        ari: adjusted_rand_index(labels, &km.assignments)?,
        nmi: normalized_mutual_info(labels, &km.assignments)?,
    };
    Ok((metrics, km))
}
