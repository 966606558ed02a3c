//! Brute-force reference implementations of the ranking metrics, evaluated
//! straight from their definitions by explicit enumeration. Kept separate
//! from the fast paths so the test suite can check the two routes against
//! each other.

use crate::eval::metrics::{ImpressionMetrics, LabeledScores};

/// Definition-level metrics for one impression.
pub fn impression_metrics(imp: &LabeledScores, k: usize) -> ImpressionMetrics {
    ImpressionMetrics {
        auc: pairwise_auc(imp),
        mrr: counting_mrr(imp),
        ndcg: counting_ndcg(imp, k),
    }
}

/// AUC as the probability that a random positive outscores a random
/// negative, ties counting one half: enumerate every (positive, negative)
/// pair.
fn pairwise_auc(imp: &LabeledScores) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in imp.labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in imp.labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if imp.scores[i] > imp.scores[j] {
                wins += 1.0;
            } else if imp.scores[i] == imp.scores[j] {
                wins += 0.5;
            }
        }
    }
    if pairs == 0.0 {
        None
    } else {
        Some(wins / pairs)
    }
}

/// 1-based rank of item `i` under descending scores with input-order
/// tie-breaks, computed by counting items placed ahead of it.
fn rank_of(imp: &LabeledScores, i: usize) -> usize {
    let mut ahead = 0;
    for j in 0..imp.scores.len() {
        if imp.scores[j] > imp.scores[i] || (imp.scores[j] == imp.scores[i] && j < i) {
            ahead += 1;
        }
    }
    ahead + 1
}

fn counting_mrr(imp: &LabeledScores) -> f64 {
    let best = (0..imp.labels.len())
        .filter(|&i| imp.labels[i])
        .map(|i| rank_of(imp, i))
        .min();
    match best {
        Some(rank) => 1.0 / rank as f64,
        None => 0.0,
    }
}

fn counting_ndcg(imp: &LabeledScores, k: usize) -> f64 {
    let mut dcg = 0.0;
    for i in 0..imp.labels.len() {
        if imp.labels[i] {
            let rank = rank_of(imp, i);
            if rank <= k {
                dcg += 1.0 / ((rank + 1) as f64).log2();
            }
        }
    }
    let positives = imp.labels.iter().filter(|&&l| l).count();
    let mut ideal = 0.0;
    for rank in 1..=positives.min(k) {
        ideal += 1.0 / ((rank + 1) as f64).log2();
    }
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}
