//! Probabilistic k-nearest-neighbour classification.
//!
//! Class probabilities are vote fractions among the `k` nearest training
//! instances. A small bias grid, ordered by how close each class's nearest
//! instance is to the query, is added to the vote fractions to order classes
//! with equal votes. Its spread is `1/(k M)` with `M > 1`, so it never
//! reorders classes whose vote counts differ. The entropy of the vote
//! fractions serves as a certainty score for rejection.
//!
//! The search is an exhaustive scan over the candidate classes. For L1 and
//! Hellinger the partial sums are monotone, so a candidate is abandoned as
//! soon as it can no longer enter the neighbour list or improve its class's
//! nearest distance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureKind, FeatureVector, SparseHistogram};
use crate::stats::entropy_nats;
use crate::trainstore::{ClassId, TrainingStore};

pub const DEFAULT_TIE_BIAS_M: f64 = 2.0;
/// Additive smoothing applied to every bin before KL divergence.
pub const KL_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum KnnError {
    #[error("feature kinds differ: {0} vs {1}")]
    SpecMismatch(FeatureKind, FeatureKind),
    #[error("metric {metric} is not defined for {kind} features")]
    UnsupportedMetric { metric: Metric, kind: FeatureKind },
    #[error("k = {k} exceeds the {available} candidate instances")]
    KTooLarge { k: usize, available: usize },
    #[error("candidate class set is empty")]
    EmptyCandidates,
    #[error("unknown class id {0}")]
    UnknownClass(ClassId),
    #[error("invalid classifier configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown distance metric {0:?}")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Manhattan distance.
    L1,
    /// KL(query || train) on epsilon-smoothed histograms.
    Kl,
    /// One minus the Bhattacharyya coefficient.
    Hellinger,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::L1, Metric::Kl, Metric::Hellinger];

    pub fn name(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::Kl => "kl",
            Metric::Hellinger => "hellinger",
        }
    }

    fn has_monotone_partial_sums(self) -> bool {
        matches!(self, Metric::L1 | Metric::Hellinger)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = KnnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| KnnError::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub k: usize,
    pub metric: Metric,
    pub tie_bias_m: f64,
    /// Restrict the search to these classes; `None` means all.
    pub candidate_classes: Option<Vec<ClassId>>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            k: 5,
            metric: Metric::L1,
            tie_bias_m: DEFAULT_TIE_BIAS_M,
            candidate_classes: None,
        }
    }
}

impl ClassifierConfig {
    pub fn new(k: usize, metric: Metric) -> Self {
        Self {
            k,
            metric,
            ..Self::default()
        }
    }

    pub fn with_candidates(mut self, classes: Vec<ClassId>) -> Self {
        self.candidate_classes = Some(classes);
        self
    }

    pub fn validate(&self) -> Result<(), KnnError> {
        if self.k == 0 {
            return Err(KnnError::InvalidConfig("k must be at least 1".into()));
        }
        if !self.tie_bias_m.is_finite() || self.tie_bias_m <= 1.0 {
            return Err(KnnError::InvalidConfig(format!(
                "tie-bias M must be a finite number greater than 1, got {}",
                self.tie_bias_m
            )));
        }
        if matches!(&self.candidate_classes, Some(c) if c.is_empty()) {
            return Err(KnnError::EmptyCandidates);
        }
        Ok(())
    }
}

/// Classifier output for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    /// Candidate classes in ascending id order.
    pub classes: Vec<ClassId>,
    /// Vote fractions aligned with `classes`; multiples of `1/k`.
    pub probs: Vec<f64>,
    /// `probs` plus the tie bias. Used only for ranking.
    pub biased_scores: Vec<f64>,
    /// Candidate classes by descending biased score.
    pub ranking: Vec<ClassId>,
    /// Candidate classes by distance of their nearest instance to the query.
    pub nearest_order: Vec<ClassId>,
    /// Entropy of `probs` in nats.
    pub entropy: f64,
    /// `entropy / ln(C)` for `C` candidates; 0 when `C = 1`.
    pub normalized_entropy: f64,
}

impl Posterior {
    /// Vote fraction of `class`; zero for classes outside the candidate set.
    pub fn prob_of(&self, class: ClassId) -> f64 {
        self.classes
            .binary_search(&class)
            .map_or(0.0, |i| self.probs[i])
    }

    /// One-based position of `class` in the ranking.
    pub fn rank_of(&self, class: ClassId) -> Option<usize> {
        self.ranking.iter().position(|&c| c == class).map(|p| p + 1)
    }

    pub fn top(&self) -> ClassId {
        self.ranking[0]
    }

    pub fn n_candidates(&self) -> usize {
        self.classes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Accept,
    Reject,
}

/// Reject when the normalised entropy exceeds `max_normalized_entropy`.
pub fn rejection_decision(post: &Posterior, max_normalized_entropy: f64) -> Decision {
    if post.normalized_entropy > max_normalized_entropy {
        Decision::Reject
    } else {
        Decision::Accept
    }
}

/// Distance between two feature vectors of the same kind.
///
/// Percentile summaries only support L1.
pub fn distance(a: &FeatureVector, b: &FeatureVector, metric: Metric) -> Result<f64, KnnError> {
    Ok(bounded_distance(a, b, metric, f64::INFINITY)?.expect("unbounded"))
}

/// Like [`distance`], but may return `None` once the distance is known to
/// exceed `bound` (only for metrics with monotone partial sums).
fn bounded_distance(
    a: &FeatureVector,
    b: &FeatureVector,
    metric: Metric,
    bound: f64,
) -> Result<Option<f64>, KnnError> {
    match (a, b) {
        (FeatureVector::Histogram(x), FeatureVector::Histogram(y)) => {
            if x.kind != y.kind {
                return Err(KnnError::SpecMismatch(x.kind, y.kind));
            }
            Ok(match metric {
                Metric::L1 => merged_sum(x, y, bound, |p, q| (p - q).abs()),
                Metric::Hellinger => {
                    // 0.5 * sum (sqrt p - sqrt q)^2 == 1 - sum sqrt(p q) for unit
                    // masses; this form is exactly zero on identical inputs.
                    merged_sum(x, y, 2.0 * bound, |p, q| {
                        let d = p.sqrt() - q.sqrt();
                        d * d
                    })
                    .map(|s| 0.5 * s)
                }
                Metric::Kl => Some(kl_smoothed(x, y)),
            })
        }
        (FeatureVector::Summary(x), FeatureVector::Summary(y)) => match metric {
            Metric::L1 => Ok(Some(x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum())),
            other => Err(KnnError::UnsupportedMetric {
                metric: other,
                kind: FeatureKind::Summary6,
            }),
        },
        _ => Err(KnnError::SpecMismatch(a.kind(), b.kind())),
    }
}

/// Sum of `term(p, q)` over the union of supports, with `term(0, 0) = 0`.
/// Returns `None` as soon as the running sum exceeds `bound`.
fn merged_sum(
    x: &SparseHistogram,
    y: &SparseHistogram,
    bound: f64,
    term: impl Fn(f64, f64) -> f64,
) -> Option<f64> {
    let (mut i, mut j) = (0, 0);
    let mut acc = 0.0;
    while i < x.indices.len() || j < y.indices.len() {
        let xi = x.indices.get(i).copied().unwrap_or(u32::MAX);
        let yj = y.indices.get(j).copied().unwrap_or(u32::MAX);
        let t = if xi == yj {
            let t = term(x.masses[i], y.masses[j]);
            i += 1;
            j += 1;
            t
        } else if xi < yj {
            i += 1;
            term(x.masses[i - 1], 0.0)
        } else {
            j += 1;
            term(0.0, y.masses[j - 1])
        };
        acc += t;
        if acc > bound {
            return None;
        }
    }
    Some(acc)
}

/// KL(x || y) with `KL_EPSILON` added to every one of the `dim` bins and both
/// sides renormalised.
fn kl_smoothed(x: &SparseHistogram, y: &SparseHistogram) -> f64 {
    let dim = x.kind.dim() as f64;
    let zx = x.total_mass() + dim * KL_EPSILON;
    let zy = y.total_mass() + dim * KL_EPSILON;
    let term = |p: f64, q: f64| {
        let ps = (p + KL_EPSILON) / zx;
        let qs = (q + KL_EPSILON) / zy;
        ps * (ps / qs).ln()
    };
    let mut acc = 0.0;
    let mut union = 0usize;
    let (mut i, mut j) = (0, 0);
    while i < x.indices.len() || j < y.indices.len() {
        let xi = x.indices.get(i).copied().unwrap_or(u32::MAX);
        let yj = y.indices.get(j).copied().unwrap_or(u32::MAX);
        acc += if xi == yj {
            i += 1;
            j += 1;
            term(x.masses[i - 1], y.masses[j - 1])
        } else if xi < yj {
            i += 1;
            term(x.masses[i - 1], 0.0)
        } else {
            j += 1;
            term(0.0, y.masses[j - 1])
        };
        union += 1;
    }
    // Bins empty on both sides all contribute the same term.
    let empty = x.kind.dim() - union;
    if empty > 0 {
        acc += empty as f64 * term(0.0, 0.0);
    }
    acc.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbour {
    pub class: ClassId,
    pub index: usize,
    pub distance: f64,
}

/// Result of the neighbour scan.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighbourSearch {
    /// The `k` nearest instances, nearest first; ties keep scan order
    /// (ascending class id, then instance index).
    pub neighbours: Vec<Neighbour>,
    /// Candidate classes with the distance of their nearest instance, in
    /// ascending class-id order.
    pub class_nearest: Vec<(ClassId, f64)>,
}

fn resolve_candidates(
    store: &TrainingStore,
    candidates: Option<&[ClassId]>,
) -> Result<Vec<ClassId>, KnnError> {
    let mut classes: Vec<ClassId> = match candidates {
        Some(c) => c.to_vec(),
        None => store.class_ids().collect(),
    };
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(KnnError::EmptyCandidates);
    }
    if let Some(&bad) = classes.iter().find(|c| c.index() >= store.n_classes()) {
        return Err(KnnError::UnknownClass(bad));
    }
    Ok(classes)
}

/// Exhaustive k-nearest-neighbour scan restricted to `candidates`.
pub fn nearest_neighbours(
    query: &FeatureVector,
    store: &TrainingStore,
    candidates: Option<&[ClassId]>,
    k: usize,
    metric: Metric,
) -> Result<NeighbourSearch, KnnError> {
    if query.kind() != store.kind() {
        return Err(KnnError::SpecMismatch(query.kind(), store.kind()));
    }
    let classes = resolve_candidates(store, candidates)?;
    let available: usize = classes.iter().map(|&c| store.instances(c).len()).sum();
    if k == 0 || k > available {
        return Err(KnnError::KTooLarge { k, available });
    }
    let prune = metric.has_monotone_partial_sums();
    let mut best: Vec<Neighbour> = Vec::with_capacity(k + 1);
    let mut class_nearest = Vec::with_capacity(classes.len());
    for &class in &classes {
        let mut nearest = f64::INFINITY;
        for (index, inst) in store.instances(class).iter().enumerate() {
            let kth = if best.len() == k {
                best[k - 1].distance
            } else {
                f64::INFINITY
            };
            let bound = if prune { kth.max(nearest) } else { f64::INFINITY };
            let Some(d) = bounded_distance(query, inst, metric, bound)? else {
                continue;
            };
            nearest = nearest.min(d);
            if d < kth {
                // Insert after every entry with distance <= d to keep scan order on ties.
                let pos = best.partition_point(|n| n.distance <= d);
                best.insert(
                    pos,
                    Neighbour {
                        class,
                        index,
                        distance: d,
                    },
                );
                best.truncate(k);
            }
        }
        class_nearest.push((class, nearest));
    }
    Ok(NeighbourSearch {
        neighbours: best,
        class_nearest,
    })
}

/// Bias grid over `n_classes` positions, largest for position 0:
/// `(C - 1 - j) / (C - 1) / (k M)`. All zero for a single class.
pub fn tie_bias_grid(n_classes: usize, k: usize, m: f64) -> Vec<f64> {
    if n_classes <= 1 {
        return vec![0.0; n_classes];
    }
    let top = 1.0 / (k as f64 * m);
    let steps = (n_classes - 1) as f64;
    (0..n_classes)
        .map(|j| (n_classes - 1 - j) as f64 / steps * top)
        .collect()
}

/// Add the tie bias to `probs` (aligned with `classes`). `nearest_order`
/// lists the same classes ordered by their closest training instance.
pub fn add_tie_bias(
    classes: &[ClassId],
    probs: &[f64],
    nearest_order: &[ClassId],
    k: usize,
    m: f64,
) -> Vec<f64> {
    debug_assert_eq!(classes.len(), probs.len());
    debug_assert_eq!(classes.len(), nearest_order.len());
    let grid = tie_bias_grid(classes.len(), k, m);
    let mut biased = probs.to_vec();
    for (pos, class) in nearest_order.iter().enumerate() {
        if let Some(i) = classes.iter().position(|c| c == class) {
            biased[i] += grid[pos];
        }
    }
    biased
}

/// Classify one query against a store.
pub fn classify(
    query: &FeatureVector,
    store: &TrainingStore,
    cfg: &ClassifierConfig,
) -> Result<Posterior, KnnError> {
    cfg.validate()?;
    let search = nearest_neighbours(
        query,
        store,
        cfg.candidate_classes.as_deref(),
        cfg.k,
        cfg.metric,
    )?;
    Ok(posterior_from_search(&search, cfg.k, cfg.tie_bias_m))
}

/// Turn a neighbour scan into vote fractions, tie-biased ranking and entropy.
pub fn posterior_from_search(search: &NeighbourSearch, k: usize, m: f64) -> Posterior {
    let classes: Vec<ClassId> = search.class_nearest.iter().map(|&(c, _)| c).collect();
    let mut votes = vec![0usize; classes.len()];
    for n in &search.neighbours {
        let i = classes.binary_search(&n.class).expect("neighbour from candidate class");
        votes[i] += 1;
    }
    let probs: Vec<f64> = votes.iter().map(|&v| v as f64 / k as f64).collect();

    let mut by_distance: Vec<(ClassId, f64)> = search.class_nearest.clone();
    by_distance.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let nearest_order: Vec<ClassId> = by_distance.into_iter().map(|(c, _)| c).collect();

    let biased_scores = add_tie_bias(&classes, &probs, &nearest_order, k, m);
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| {
        biased_scores[b]
            .total_cmp(&biased_scores[a])
            .then(classes[a].cmp(&classes[b]))
    });
    let ranking = order.into_iter().map(|i| classes[i]).collect();

    let entropy = entropy_nats(&probs);
    let c = classes.len();
    let normalized_entropy = if c > 1 {
        (entropy / (c as f64).ln()).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Posterior {
        classes,
        probs,
        biased_scores,
        ranking,
        nearest_order,
        entropy,
        normalized_entropy,
    }
}
