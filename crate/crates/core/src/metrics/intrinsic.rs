use std::collections::{BTreeMap, BTreeSet};

use super::clustering::{kmeans, nmi};
use super::embedding::CodeEmbeddings;
use super::neighbors::{neighbor_sets, nns_accuracy_at_k, Distance};
use crate::error::{Error, Result};

pub const KMEANS_MAX_ITERS: usize = 100;

/// Embedding quality against labelled codes.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingScores {
    /// Codes that have both an embedding and a label.
    pub codes: usize,
    pub nns_accuracy_at_k: BTreeMap<usize, f64>,
    pub nmi: f64,
}

/// NNS accuracy over `pairs` and NMI of k-means against `labels`, with k the
/// number of distinct labels. Only codes present in both `emb` and `labels`
/// take part; pairs naming any other code are dropped.
pub fn score_embeddings(
    emb: &CodeEmbeddings,
    labels: &BTreeMap<String, usize>,
    pairs: &[(String, String)],
    ks: &[usize],
    distance: Distance,
    seed: u64,
) -> Result<EmbeddingScores> {
    let codes: Vec<String> = emb.codes.iter().filter(|c| labels.contains_key(*c)).cloned().collect();
    if codes.is_empty() {
        return Err(Error::Data("no embedded code carries a label".into()));
    }
    let index: BTreeMap<&str, usize> = codes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let picked = emb.select(&codes)?;
    let points = picked.as_f64();
    let index_pairs: Vec<(usize, usize)> = pairs
        .iter()
        .filter_map(|(a, b)| Some((*index.get(a.as_str())?, *index.get(b.as_str())?)))
        .collect();
    let sets = neighbor_sets(codes.len(), &index_pairs)?;
    let mut nns = BTreeMap::new();
    for &k in ks {
        nns.insert(k, nns_accuracy_at_k(&points, &sets, k, distance)?);
    }
    let truth: Vec<usize> = codes.iter().map(|c| labels[c]).collect();
    let k = truth.iter().collect::<BTreeSet<_>>().len();
    let clusters = kmeans(&points, k, seed, KMEANS_MAX_ITERS)?;
    Ok(EmbeddingScores {
        codes: codes.len(),
        nns_accuracy_at_k: nns,
        nmi: nmi(&clusters.assignments, &truth)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_perfect_embeddings() {
        let emb = CodeEmbeddings {
            codes: ["a", "b", "c", "d", "e"].map(String::from).to_vec(),
            vectors: vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![9.0, 9.0], vec![9.0, 9.1], vec![50.0, 50.0]],
        };
        // `e` has no label and is ignored.
        let labels: BTreeMap<String, usize> =
            [("a", 0), ("b", 0), ("c", 1), ("d", 1)].map(|(c, l)| (c.to_string(), l)).into();
        let pairs = vec![("a".to_string(), "b".to_string()), ("c".into(), "d".into()), ("a".into(), "e".into())];
        let s = score_embeddings(&emb, &labels, &pairs, &[1], Distance::Euclidean, 1).unwrap();
        assert_eq!(s.codes, 4);
        assert_eq!(s.nns_accuracy_at_k[&1], 1.0);
        assert_eq!(s.nmi, 1.0);
    }
}
