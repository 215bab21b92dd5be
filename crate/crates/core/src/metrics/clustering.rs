use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn closest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached.
///
/// A cluster left empty takes the point farthest from its own centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k-means with k = {k} over {n} points")));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points of unequal width".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // Every point coincides with a centre; take any unused index.
            centroids.len()
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let mut assignments: Vec<usize> = points.iter().map(|p| closest(p, &centroids).0).collect();
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let Some(far) = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centroids[assignments[a]])
                            .total_cmp(&sq_dist(&points[b], &centroids[assignments[b]]))
                            .then(b.cmp(&a))
                    })
                else {
                    break;
                };
                counts[assignments[far]] -= 1;
                assignments[far] = c;
                counts[c] = 1;
                centroids[c] = points[far].clone();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| closest(p, &centroids).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    Ok(KMeans {
        assignments,
        centroids,
        inertia,
        iterations,
    })
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

/// Mutual information normalised by the geometric mean of the two entropies.
///
/// When both partitions are a single cluster the result is 1; when only one
/// is, it is 0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("partitions of {} and {} items", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Data("NMI of empty partitions".into()));
    }
    let n = a.len() as f64;
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<usize, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    match (ca.len() == 1, cb.len() == 1) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pxy = c as f64 / n;
        let px = ca[&x] as f64 / n;
        let py = cb[&y] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}
