//! Prediction scores, task accuracies, BLEU, losses and loss spread.

mod bleu;
mod series;

use std::collections::{BTreeMap, BTreeSet};

use crate::subtoken;
use crate::telemetry::TelemetryRecord;

pub use bleu::{smoothed_bleu4, BleuBreakdown};
pub use series::{
    accuracy_trajectory, balanced_accuracy_trajectory, bleu_trajectory, f1_trajectory, F1Aggregation,
    gini_trajectory, loc_rep_trajectories, mean_loss_trajectory, score_curve, task_metrics,
    MetricSeries, ScoreCurve,
};

/// Probabilities are floored here before taking logs.
pub const LOG_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("empty sequence")]
    EmptySequence,
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("occurrence sets overlap at index {0}")]
    OverlappingOccurrences(usize),
    #[error("empty name")]
    EmptyName,
    #[error("no buggy samples in slice")]
    NoBuggySamples,
    #[error("empty slice")]
    EmptySlice,
    #[error("empty reference")]
    EmptyReference,
    #[error("negative loss {0}")]
    NegativeLoss(f64),
    #[error("record `{0}` lacks {1}")]
    MissingField(String, &'static str),
    #[error("record `{0}` has a label outside {{0, 1}}")]
    InvalidLabel(String),
    #[error("split has no records")]
    EmptySplit,
}

/// Numerically stable softmax.
pub fn softmax_probs(logits: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if logits.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(MetricsError::NonFiniteInput);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Mean per-token probability of a generated sequence.
pub fn avg_sequence_score(token_probs: &[f64]) -> Result<f64, MetricsError> {
    mean(token_probs)
}

fn mean(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Repair probability per candidate: the per-token probabilities summed
/// over each candidate's occurrences.
pub fn repair_probability(
    token_probs: &[f64],
    occurrence_sets: &BTreeMap<String, BTreeSet<usize>>,
) -> Result<BTreeMap<String, f64>, MetricsError> {
    let mut owner = vec![false; token_probs.len()];
    let mut out = BTreeMap::new();
    for (candidate, indices) in occurrence_sets {
        let mut mass = 0.0;
        for &i in indices {
            if i >= token_probs.len() {
                return Err(MetricsError::IndexOutOfBounds {
                    index: i,
                    len: token_probs.len(),
                });
            }
            if std::mem::replace(&mut owner[i], true) {
                return Err(MetricsError::OverlappingOccurrences(i));
            }
            mass += token_probs[i];
        }
        out.insert(candidate.clone(), mass);
    }
    Ok(out)
}

/// True/false positive and false negative sub-token counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SubtokenCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl SubtokenCounts {
    pub fn score(&self) -> F1Score {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        F1Score {
            precision,
            recall,
            f1,
        }
    }
}

impl std::ops::AddAssign for SubtokenCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Multiset sub-token matching between a predicted and an actual name.
pub fn subtoken_counts(predicted: &str, actual: &str) -> Result<SubtokenCounts, MetricsError> {
    if predicted.is_empty() || actual.is_empty() {
        return Err(MetricsError::EmptyName);
    }
    Ok(parts_counts(&subtoken::split(predicted), &subtoken::split(actual)))
}

pub(crate) fn parts_counts(predicted: &[String], actual: &[String]) -> SubtokenCounts {
    let mut remaining: BTreeMap<&str, usize> = BTreeMap::new();
    for a in actual {
        *remaining.entry(a).or_default() += 1;
    }
    let mut tp = 0;
    for p in predicted {
        if let Some(c) = remaining.get_mut(p.as_str()).filter(|c| **c > 0) {
            *c -= 1;
            tp += 1;
        }
    }
    SubtokenCounts {
        tp,
        fp: predicted.len() - tp,
        fn_: actual.len() - tp,
    }
}

pub fn subtoken_f1(predicted: &str, actual: &str) -> Result<F1Score, MetricsError> {
    Ok(subtoken_counts(predicted, actual)?.score())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocRepAccuracy {
    pub loc_acc: f64,
    pub rep_acc: f64,
    pub buggy: usize,
}

/// Localization and repair accuracy over the buggy samples of a slice.
/// Repair counts as correct when at least half the mass is on the right
/// variable.
pub fn localization_repair_accuracy(
    records: &[TelemetryRecord],
) -> Result<LocRepAccuracy, MetricsError> {
    let mut buggy = 0usize;
    let mut loc_hits = 0usize;
    let mut rep_hits = 0usize;
    for r in records {
        let vm = r
            .var_misuse
            .as_ref()
            .ok_or_else(|| MetricsError::MissingField(r.sample_id.clone(), "var_misuse outcome"))?;
        if !vm.is_buggy {
            continue;
        }
        buggy += 1;
        loc_hits += usize::from(vm.predicted_location == vm.actual_location);
        rep_hits += usize::from(vm.repair_mass >= 0.5);
    }
    if buggy == 0 {
        return Err(MetricsError::NoBuggySamples);
    }
    Ok(LocRepAccuracy {
        loc_acc: loc_hits as f64 / buggy as f64,
        rep_acc: rep_hits as f64 / buggy as f64,
        buggy,
    })
}

/// Fraction of correct predictions on a balanced 0/1 slice.
pub fn balanced_accuracy(records: &[TelemetryRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptySlice);
    }
    let binary = |o: &crate::telemetry::Output| matches!(o.as_label(), Some("0") | Some("1"));
    let mut hits = 0usize;
    for r in records {
        if !binary(&r.predicted) || !binary(&r.target) {
            return Err(MetricsError::InvalidLabel(r.sample_id.clone()));
        }
        hits += usize::from(r.correct);
    }
    Ok(hits as f64 / records.len() as f64)
}

fn neg_log(p: f64) -> f64 {
    -p.max(LOG_EPSILON).ln()
}

/// Negative log-likelihood of the actual class.
pub fn cross_entropy(actual_index: usize, probs: &[f64]) -> Result<f64, MetricsError> {
    let p = probs.get(actual_index).ok_or(MetricsError::IndexOutOfBounds {
        index: actual_index,
        len: probs.len(),
    })?;
    Ok(neg_log(*p))
}

pub fn binary_cross_entropy(positive: bool, p: f64) -> f64 {
    if positive {
        neg_log(p)
    } else {
        neg_log(1.0 - p)
    }
}

/// Mean of per-token losses of a sequence prediction.
pub fn avg_sequence_loss(token_losses: &[f64]) -> Result<f64, MetricsError> {
    mean(token_losses)
}

/// Var-misuse loss parts `(loc, rep, loc + rep)`.
pub fn var_misuse_loss(p_location: f64, p_repair: f64) -> (f64, f64, f64) {
    let loc = neg_log(p_location);
    let rep = neg_log(p_repair);
    (loc, rep, loc + rep)
}

/// Gini coefficient of a loss vector, the relative mean absolute
/// difference over all ordered pairs, in O(n log n).
///
/// After sorting ascending, the pairwise sum is `2 Σ_i Σ_{j<i} (x_i − x_j)`,
/// accumulated as `Σ_i ((i) x_i − prefix_i)` so every term is
/// non-negative. An all-zero vector has coefficient 0.
pub fn gini(losses: &[f64]) -> Result<f64, MetricsError> {
    if losses.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    if let Some(&bad) = losses.iter().find(|x| !x.is_finite()) {
        return Err(if bad < 0.0 {
            MetricsError::NegativeLoss(bad)
        } else {
            MetricsError::NonFiniteInput
        });
    }
    if let Some(&neg) = losses.iter().find(|&&x| x < 0.0) {
        return Err(MetricsError::NegativeLoss(neg));
    }

    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut prefix = 0.0;
    let mut half_pairwise = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        half_pairwise += (i as f64 * x - prefix).max(0.0);
        prefix += x;
    }
    if prefix == 0.0 {
        return Ok(0.0);
    }
    let n = sorted.len() as f64;
    Ok(half_pairwise / (n * prefix))
}
