use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
    /// `1 − cos(a, b)`; a zero vector is at distance 1 from everything.
    Cosine,
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Self::Euclidean),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!("unknown distance `{other}`"))),
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Euclidean => "euclidean",
            Self::Cosine => "cosine",
        })
    }
}

impl Distance {
    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Self::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Self::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

/// Per-point neighbour sets from an unordered pair list over `n` points.
pub fn neighbor_sets(n: usize, pairs: &[(usize, usize)]) -> Result<Vec<BTreeSet<usize>>> {
    let mut sets = vec![BTreeSet::new(); n];
    for &(a, b) in pairs {
        if a >= n || b >= n {
            return Err(Error::Data(format!("pair ({a}, {b}) outside {n} points")));
        }
        if a != b {
            sets[a].insert(b);
            sets[b].insert(a);
        }
    }
    Ok(sets)
}

/// The `k` points nearest to `query`, itself excluded; distance ties go to
/// the lower index.
pub fn nearest(embeddings: &[Vec<f64>], query: usize, k: usize, distance: Distance) -> Vec<usize> {
    let q = &embeddings[query];
    let mut cand: Vec<(f64, usize)> = embeddings
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != query)
        .map(|(i, e)| (distance.between(q, e), i))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Mean over points with at least one true neighbour of
/// `|k nearest ∩ true neighbours| / k`.
pub fn nns_accuracy_at_k(
    embeddings: &[Vec<f64>],
    neighbors: &[BTreeSet<usize>],
    k: usize,
    distance: Distance,
) -> Result<f64> {
    let n = embeddings.len();
    if neighbors.len() != n {
        return Err(Error::Shape(format!(
            "{} neighbour sets for {n} embeddings",
            neighbors.len()
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::Config(format!(
            "NNS accuracy@{k} needs 1 <= k < {n} points"
        )));
    }
    let mut total = 0.0;
    let mut queries = 0usize;
    for (i, truth) in neighbors.iter().enumerate() {
        if truth.is_empty() {
            continue;
        }
        let hits = nearest(embeddings, i, k, distance)
            .iter()
            .filter(|j| truth.contains(j))
            .count();
        total += hits as f64 / k as f64;
        queries += 1;
    }
    if queries == 0 {
        return Err(Error::Degenerate("no point has a true neighbour".into()));
    }
    Ok(total / queries as f64)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn clustered_embeddings_are_perfect_at_one() {
        let e = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![5.0, 5.0], vec![5.0, 5.1]];
        let sets = neighbor_sets(4, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(nns_accuracy_at_k(&e, &sets, 1, Distance::Euclidean).unwrap(), 1.0);
        // One true neighbour each, so k = 2 caps the score at 1/2.
        assert_eq!(nns_accuracy_at_k(&e, &sets, 2, Distance::Euclidean).unwrap(), 0.5);
        assert!(nns_accuracy_at_k(&e, &sets, 4, Distance::Euclidean).is_err());
    }

    #[test]
    fn ties_go_to_lower_index() {
        let e = vec![vec![0.0], vec![1.0], vec![-1.0]];
        assert_eq!(nearest(&e, 0, 1, Distance::Euclidean), vec![1]);
    }

    #[test]
    fn random_embeddings_match_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 300;
        let pairs: Vec<(usize, usize)> = (0..n / 2).map(|i| (2 * i, 2 * i + 1)).collect();
        let sets = neighbor_sets(n, &pairs).unwrap();
        let mut total = 0.0;
        let reps = 20;
        for _ in 0..reps {
            let e: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.gen()).collect()).collect();
            total += nns_accuracy_at_k(&e, &sets, 1, Distance::Euclidean).unwrap();
        }
        let expected = 1.0 / (n - 1) as f64;
        assert!((total / reps as f64 - expected).abs() < 0.01);
    }

    #[test]
    fn cosine_ignores_scale() {
        assert!(Distance::Cosine.between(&[1.0, 1.0], &[3.0, 3.0]).abs() < 1e-12);
        assert_eq!(Distance::Cosine.between(&[0.0, 0.0], &[3.0, 3.0]), 1.0);
    }
}
