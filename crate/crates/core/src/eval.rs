//! Ranking and retrieval metrics over classified test instances.
//!
//! One-vs-all AUC-ROC is the Mann-Whitney statistic computed from mid-ranks;
//! AUC-PR is step-wise average precision with pessimistic tie handling
//! (negatives ranked before positives at equal score). Scores are the
//! pre-bias vote fractions of the positive class.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knn::Posterior;
use crate::stats::percentile_sorted;
use crate::trainstore::ClassId;

/// Spacing of the raw-entropy grid in [`rejection_sweep`].
pub const ENTROPY_GRID_STEP: f64 = 0.1;
/// Cut-off used for the rejection curve's reciprocal-rank metric.
pub const SWEEP_MRR_N: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("class {class} has {positives} positive and {negatives} negative test instances")]
    DegenerateClass {
        class: ClassId,
        positives: usize,
        negatives: usize,
    },
    #[error("no values to summarise")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledResult {
    pub true_class: ClassId,
    pub posterior: Posterior,
}

impl LabeledResult {
    /// One-based rank of the true class, `None` when it is not a candidate.
    pub fn true_rank(&self) -> Option<usize> {
        self.posterior.rank_of(self.true_class)
    }
}

/// Mann-Whitney AUC: `(concordant + 0.5 tied) / (P N)` over all
/// positive/negative pairs, computed from mid-ranks in `O((P+N) log(P+N))`.
pub fn auc_from_scores(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start + 1;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        // Ranks start..end (1-based start+1..=end) share their mean.
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let n_pos = all[start..end].iter().filter(|x| x.1).count();
        rank_sum += mid_rank * n_pos as f64;
        start = end;
    }
    let p = positives.len() as f64;
    let n = negatives.len() as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Step-wise average precision. At equal scores negatives are ranked first.
pub fn average_precision(scored: &[(f64, bool)]) -> Option<f64> {
    let positives = scored.iter().filter(|x| x.1).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<&(f64, bool)> = scored.iter().collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, item) in order.iter().enumerate() {
        if item.1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

fn split_scores(results: &[LabeledResult], positive: ClassId) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for r in results {
        let s = r.posterior.prob_of(positive);
        if r.true_class == positive {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    (pos, neg)
}

pub fn auc_roc_one_vs_all(results: &[LabeledResult], positive: ClassId) -> Result<f64, EvalError> {
    let (pos, neg) = split_scores(results, positive);
    auc_from_scores(&pos, &neg).ok_or(EvalError::DegenerateClass {
        class: positive,
        positives: pos.len(),
        negatives: neg.len(),
    })
}

pub fn auc_pr_one_vs_all(results: &[LabeledResult], positive: ClassId) -> Result<f64, EvalError> {
    let scored: Vec<(f64, bool)> = results
        .iter()
        .map(|r| (r.posterior.prob_of(positive), r.true_class == positive))
        .collect();
    average_precision(&scored).ok_or(EvalError::DegenerateClass {
        class: positive,
        positives: 0,
        negatives: scored.len(),
    })
}

/// Fraction of results whose true class is among the first `n` ranked classes.
pub fn accuracy_at_n(results: &[LabeledResult], n: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results
        .iter()
        .filter(|r| r.true_rank().is_some_and(|rank| rank <= n))
        .count();
    hits as f64 / results.len() as f64
}

/// Mean of `1/rank` of the true class, counting ranks beyond `n` as zero.
pub fn mrr_at_n(results: &[LabeledResult], n: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let total: f64 = results
        .iter()
        .filter_map(|r| r.true_rank().filter(|&rank| rank <= n))
        .map(|rank| 1.0 / rank as f64)
        .sum();
    total / results.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionPoint {
    /// Maximum accepted entropy in nats.
    pub raw_threshold: f64,
    /// `raw_threshold / ln(C)`.
    pub normalized_threshold: f64,
    pub accepted_fraction: f64,
    pub rejected_fraction: f64,
    /// `None` when nothing is accepted.
    pub mrr_at_10: Option<f64>,
    pub accuracy_at_1: Option<f64>,
}

/// Number of grid points `0, 0.1, ...` up to and including the first point
/// at or beyond `ln(C)`.
pub fn sweep_len(n_candidates: usize) -> usize {
    let max_entropy = (n_candidates.max(1) as f64).ln();
    (max_entropy / ENTROPY_GRID_STEP).floor() as usize + 2
}

/// MRR@10 and accuracy@1 of the results whose entropy does not exceed each
/// threshold of a uniform raw-entropy grid from 0 past `ln(C)`.
pub fn rejection_sweep(results: &[LabeledResult], n_candidates: usize) -> Vec<RejectionPoint> {
    let max_entropy = (n_candidates.max(1) as f64).ln();
    let total = results.len() as f64;
    (0..sweep_len(n_candidates))
        .map(|i| {
            let t = i as f64 * ENTROPY_GRID_STEP;
            let accepted: Vec<LabeledResult> = results
                .iter()
                .filter(|r| r.posterior.entropy <= t)
                .cloned()
                .collect();
            let frac = if total > 0.0 { accepted.len() as f64 / total } else { 0.0 };
            let nonempty = !accepted.is_empty();
            RejectionPoint {
                raw_threshold: t,
                normalized_threshold: if max_entropy > 0.0 { t / max_entropy } else { 1.0 },
                accepted_fraction: frac,
                rejected_fraction: 1.0 - frac,
                mrr_at_10: nonempty.then(|| mrr_at_n(&accepted, SWEEP_MRR_N)),
                accuracy_at_1: nonempty.then(|| accuracy_at_n(&accepted, 1)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub min: f64,
    pub max: f64,
    pub median: f64,
    /// Difference of the linearly interpolated 75th and 25th percentiles.
    pub iqr: f64,
    /// Mean weighted by per-class test counts.
    pub weighted_mean: f64,
}

pub fn summarize(values: &[f64], weights: &[f64]) -> Result<AucSummary, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    assert_eq!(values.len(), weights.len(), "one weight per value");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let wsum: f64 = weights.iter().sum();
    let weighted_mean = if wsum > 0.0 {
        values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / wsum
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    Ok(AucSummary {
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        median: percentile_sorted(&sorted, 0.5),
        iqr: percentile_sorted(&sorted, 0.75) - percentile_sorted(&sorted, 0.25),
        weighted_mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAuc {
    pub class: ClassId,
    pub n_test: usize,
    /// `None` when the class has no positive (or no negative) test instances.
    pub auc_roc: Option<f64>,
    pub auc_pr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_results: usize,
    pub n_candidates: usize,
    pub per_class: Vec<ClassAuc>,
    pub auc_roc_summary: Option<AucSummary>,
    pub auc_pr_summary: Option<AucSummary>,
    pub accuracy: f64,
    pub accuracy_at: BTreeMap<usize, f64>,
    pub mrr_at: BTreeMap<usize, f64>,
    pub rejection_curve: Vec<RejectionPoint>,
}

impl EvalReport {
    /// Classes whose AUC could not be computed.
    pub fn degenerate_classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.per_class
            .iter()
            .filter(|c| c.auc_roc.is_none())
            .map(|c| c.class)
    }
}

/// Full report for `classes`: per-class AUCs with summaries, accuracy@N and
/// MRR@N for every `n` in `n_list`, and the rejection curve for
/// `n_candidates` candidate classes.
pub fn evaluate(
    results: &[LabeledResult],
    classes: &[ClassId],
    n_candidates: usize,
    n_list: &[usize],
) -> EvalReport {
    let per_class: Vec<ClassAuc> = classes
        .iter()
        .map(|&class| ClassAuc {
            class,
            n_test: results.iter().filter(|r| r.true_class == class).count(),
            auc_roc: auc_roc_one_vs_all(results, class).ok(),
            auc_pr: auc_pr_one_vs_all(results, class).ok(),
        })
        .collect();
    let summary_of = |pick: fn(&ClassAuc) -> Option<f64>| {
        let (vals, weights): (Vec<f64>, Vec<f64>) = per_class
            .iter()
            .filter_map(|c| pick(c).map(|v| (v, c.n_test as f64)))
            .unzip();
        summarize(&vals, &weights).ok()
    };
    let auc_roc_summary = summary_of(|c| c.auc_roc);
    let auc_pr_summary = summary_of(|c| c.auc_pr);
    EvalReport {
        n_results: results.len(),
        n_candidates,
        auc_roc_summary,
        auc_pr_summary,
        accuracy: accuracy_at_n(results, 1),
        accuracy_at: n_list.iter().map(|&n| (n, accuracy_at_n(results, n))).collect(),
        mrr_at: n_list.iter().map(|&n| (n, mrr_at_n(results, n))).collect(),
        rejection_curve: rejection_sweep(results, n_candidates),
        per_class,
    }
}
