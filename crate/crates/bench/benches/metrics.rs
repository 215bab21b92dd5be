use std::collections::BTreeSet;

use bitenet::metrics::{kmeans, nns_accuracy_at_k, pr_auc, precision_at_k, rank_categories, Distance};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores: Vec<f64> = (0..20_000).map(|_| rng.gen()).collect();
    let labels: Vec<bool> = scores.iter().map(|&s| rng.gen::<f64>() < s).collect();
    c.bench_function("pr_auc_20k", |b| b.iter(|| pr_auc(&scores, &labels).unwrap()));

    let probs: Vec<f64> = (0..400).map(|_| rng.gen()).collect();
    let truth: BTreeSet<u32> = (0..400).step_by(7).collect();
    c.bench_function("rank_and_precision_at_30_of_400", |b| {
        b.iter(|| precision_at_k(&rank_categories(&probs), &truth, 30).unwrap())
    });

    let points: Vec<Vec<f64>> = (0..400).map(|_| (0..64).map(|_| rng.gen()).collect()).collect();
    let neighbors: Vec<BTreeSet<usize>> = (0..400).map(|i| (0..400).filter(|&j| j != i && j % 40 == i % 40).collect()).collect();
    c.bench_function("nns_accuracy_at_10_of_400", |b| {
        b.iter(|| nns_accuracy_at_k(&points, &neighbors, 10, Distance::Euclidean).unwrap())
    });
    c.bench_function("kmeans_40_of_400", |b| b.iter(|| kmeans(&points, 40, 1, 100).unwrap().assignments.len()));
}

criterion_group!(benches, metrics);
criterion_main!(benches);
