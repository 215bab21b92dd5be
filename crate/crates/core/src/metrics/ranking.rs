use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Average precision of `scores` against binary `labels`.
///
/// Samples are ranked by descending score; equal scores keep their input
/// order. Each positive contributes the precision at its rank.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Degenerate(format!(
            "average precision needs both classes ({positives} positives of {})",
            labels.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / positives as f64)
}

/// Category ids by descending probability; ties go to the lower id.
pub fn rank_categories(probabilities: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..probabilities.len() as u32).collect();
    order.sort_by(|&a, &b| probabilities[b as usize].total_cmp(&probabilities[a as usize]));
    order
}

/// `|top-k ∩ truth| / min(k, |truth|)`.
pub fn precision_at_k(ranked: &[u32], truth: &BTreeSet<u32>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("precision@k needs k >= 1".into()));
    }
    if truth.is_empty() {
        return Err(Error::Data("precision@k against an empty truth set".into()));
    }
    let hits = ranked.iter().take(k).filter(|c| truth.contains(c)).count();
    Ok(hits as f64 / k.min(truth.len()) as f64)
}

/// Mean precision@k over samples, ranking each row of `probabilities`.
pub fn mean_precision_at_k(probabilities: &[Vec<f64>], truths: &[BTreeSet<u32>], k: usize) -> Result<f64> {
    if probabilities.len() != truths.len() || truths.is_empty() {
        return Err(Error::Shape(format!(
            "{} prediction rows for {} truth sets",
            probabilities.len(),
            truths.len()
        )));
    }
    let mut total = 0.0;
    for (p, t) in probabilities.iter().zip(truths) {
        total += precision_at_k(&rank_categories(p), t, k)?;
    }
    Ok(total / truths.len() as f64)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn set(v: &[u32]) -> BTreeSet<u32> {
        v.iter().copied().collect()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(pr_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(pr_auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.5);
        assert!(matches!(pr_auc(&[0.1, 0.2], &[true, true]), Err(Error::Degenerate(_))));
        assert!(pr_auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn ap_ties_keep_input_order() {
        // Equal scores: the negative listed first is ranked first.
        assert_eq!(pr_auc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert_eq!(pr_auc(&[0.5, 0.5], &[true, false]).unwrap(), 1.0);
    }

    #[test]
    fn ap_of_random_scores_is_near_prevalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 20_000;
        let labels: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < 0.3).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let prevalence = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
        assert!((pr_auc(&scores, &labels).unwrap() - prevalence).abs() < 0.05);
    }

    #[test]
    fn precision_examples() {
        // a..e = 0..4
        assert_eq!(precision_at_k(&[0, 1, 2, 3, 4], &set(&[0, 2]), 5).unwrap(), 1.0);
        assert_eq!(precision_at_k(&[0, 1], &set(&[1]), 1).unwrap(), 0.0);
        assert_eq!(precision_at_k(&[4, 3, 2, 1, 0, 5], &set(&[0, 1, 2, 3, 4, 5]), 5).unwrap(), 1.0);
        assert!(precision_at_k(&[0], &set(&[0]), 0).is_err());
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        assert_eq!(rank_categories(&[0.2, 0.7, 0.2, 0.9]), vec![3, 1, 0, 2]);
    }
}
