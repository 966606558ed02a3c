//! Ranking metrics: AUC (tie-aware), MRR, and NDCG@k, macro-averaged per
//! impression.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no impressions to evaluate")]
    Empty,
    #[error("impression {0} has no candidates")]
    NoCandidates(usize),
    #[error("aligned inputs differ in length: {left} vs {right}")]
    Misaligned { left: usize, right: usize },
}

/// Scores and click labels for one impression, in candidate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScores {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Self {
        assert_eq!(scores.len(), labels.len());
        LabeledScores { scores, labels }
    }
}

/// Per-impression metric values. `auc` is absent when the impression lacks
/// a positive or a negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionMetrics {
    pub auc: Option<f64>,
    pub mrr: f64,
    pub ndcg: f64,
}

/// Macro-averaged metrics plus the per-impression breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg_at_k: f64,
    pub k: usize,
    pub sample_count: usize,
    /// Impressions that entered the AUC average.
    pub auc_sample_count: usize,
    pub per_impression: Vec<ImpressionMetrics>,
}

/// Computes AUC, MRR, and NDCG@k per impression and macro-averages.
/// Impressions without both a positive and a negative are excluded from the
/// AUC average only.
pub fn ranking_metrics(impressions: &[LabeledScores], k: usize) -> Result<MetricsReport, EvalError> {
    if impressions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut per_impression = Vec::with_capacity(impressions.len());
    for (idx, imp) in impressions.iter().enumerate() {
        if imp.scores.is_empty() {
            return Err(EvalError::NoCandidates(idx));
        }
        per_impression.push(ImpressionMetrics {
            auc: impression_auc(imp),
            mrr: impression_mrr(imp),
            ndcg: impression_ndcg(imp, k),
        });
    }

    let auc_values: Vec<f64> = per_impression.iter().filter_map(|m| m.auc).collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(MetricsReport {
        auc: if auc_values.is_empty() { 0.0 } else { mean(&auc_values) },
        mrr: mean(&per_impression.iter().map(|m| m.mrr).collect::<Vec<_>>()),
        ndcg_at_k: mean(&per_impression.iter().map(|m| m.ndcg).collect::<Vec<_>>()),
        k,
        sample_count: impressions.len(),
        auc_sample_count: auc_values.len(),
        per_impression,
    })
}

/// Rank-sum (Mann-Whitney) AUC with midranks for ties.
fn impression_auc(imp: &LabeledScores) -> Option<f64> {
    let positives = imp.labels.iter().filter(|&&l| l).count();
    let negatives = imp.labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }

    // Ascending by score; equal scores share the average of their ranks.
    let mut order: Vec<usize> = (0..imp.scores.len()).collect();
    order.sort_by(|&a, &b| imp.scores[a].total_cmp(&imp.scores[b]));

    let mut rank_sum_positive = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && imp.scores[order[j + 1]] == imp.scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the midrank.
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &item in &order[i..=j] {
            if imp.labels[item] {
                rank_sum_positive += midrank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    let u = rank_sum_positive - p * (p + 1.0) / 2.0;
    Some(u / (p * n))
}

/// Candidate order after a stable descending sort (ties keep input order).
pub(crate) fn ranked_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| a.cmp(&b)));
    order
}

fn impression_mrr(imp: &LabeledScores) -> f64 {
    for (rank0, &item) in ranked_order(&imp.scores).iter().enumerate() {
        if imp.labels[item] {
            return 1.0 / (rank0 + 1) as f64;
        }
    }
    0.0
}

fn impression_ndcg(imp: &LabeledScores, k: usize) -> f64 {
    let order = ranked_order(&imp.scores);
    let mut dcg = 0.0;
    for (rank0, &item) in order.iter().take(k).enumerate() {
        if imp.labels[item] {
            dcg += 1.0 / ((rank0 + 2) as f64).log2();
        }
    }
    let positives = imp.labels.iter().filter(|&&l| l).count();
    let mut ideal = 0.0;
    for rank0 in 0..positives.min(k) {
        ideal += 1.0 / ((rank0 + 2) as f64).log2();
    }
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}
