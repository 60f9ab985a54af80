//! Per-epoch trajectories and score curves computed from a [`RunTrace`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::subtoken;
use crate::telemetry::{Output, RunTrace, Split, TelemetryRecord};

use super::{
    balanced_accuracy, gini, localization_repair_accuracy, parts_counts, smoothed_bleu4,
    MetricsError, SubtokenCounts,
};

/// One metric over the epochs of a run, separately for each split. A split
/// the trace never recorded has an empty vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub run_id: String,
    pub noise_rate: f64,
    pub metric: String,
    pub train: Vec<f64>,
    pub heldout: Vec<f64>,
}

impl MetricSeries {
    pub fn split(&self, split: Split) -> &[f64] {
        match split {
            Split::Train => &self.train,
            Split::Heldout => &self.heldout,
        }
    }

    pub fn final_value(&self, split: Split) -> Option<f64> {
        self.split(split).last().copied()
    }
}

/// Per-sample mean score over all epochs, sorted descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCurve {
    pub run_id: String,
    pub noise_rate: f64,
    pub split: Split,
    pub values: Vec<f64>,
}

impl ScoreCurve {
    pub fn sample_count(&self) -> usize {
        self.values.len()
    }

    pub fn median(&self) -> Option<f64> {
        let n = self.values.len();
        match n {
            0 => None,
            _ if n % 2 == 1 => Some(self.values[n / 2]),
            _ => Some((self.values[n / 2 - 1] + self.values[n / 2]) / 2.0),
        }
    }
}

fn per_epoch<F>(trace: &RunTrace, metric: &str, f: F) -> Result<MetricSeries, MetricsError>
where
    F: Fn(&[TelemetryRecord]) -> Result<f64, MetricsError>,
{
    let mut values: BTreeMap<Split, Vec<f64>> = BTreeMap::new();
    for split in Split::ALL {
        let mut v = Vec::new();
        if trace.has_split(split) {
            for epoch in 0..trace.epoch_count() {
                let slice = trace
                    .epoch_slice(epoch, split)
                    .expect("epoch within range");
                v.push(f(slice)?);
            }
        }
        values.insert(split, v);
    }
    Ok(MetricSeries {
        run_id: trace.run_id().to_string(),
        noise_rate: trace.noise_rate(),
        metric: metric.to_string(),
        train: values.remove(&Split::Train).unwrap_or_default(),
        heldout: values.remove(&Split::Heldout).unwrap_or_default(),
    })
}

fn require_records(trace: &RunTrace) -> Result<(), MetricsError> {
    if trace.is_empty() {
        Err(MetricsError::EmptySplit)
    } else {
        Ok(())
    }
}

/// Train-loss (and held-out loss) Gini coefficient per epoch.
pub fn gini_trajectory(trace: &RunTrace) -> Result<MetricSeries, MetricsError> {
    require_records(trace)?;
    per_epoch(trace, "gini_loss", |rs| {
        let losses: Vec<f64> = rs.iter().map(|r| r.loss).collect();
        gini(&losses)
    })
}

pub fn mean_loss_trajectory(trace: &RunTrace) -> Result<MetricSeries, MetricsError> {
    require_records(trace)?;
    per_epoch(trace, "mean_loss", |rs| {
        super::mean(&rs.iter().map(|r| r.loss).collect::<Vec<_>>())
    })
}

/// Fraction of records flagged correct.
pub fn accuracy_trajectory(trace: &RunTrace) -> Result<MetricSeries, MetricsError> {
    require_records(trace)?;
    per_epoch(trace, "accuracy", |rs| {
        if rs.is_empty() {
            return Err(MetricsError::EmptySlice);
        }
        Ok(rs.iter().filter(|r| r.correct).count() as f64 / rs.len() as f64)
    })
}

fn name_parts(o: &Output) -> Vec<String> {
    match o {
        Output::Label(s) => subtoken::split(s),
        Output::Tokens(t) => t.iter().flat_map(|s| subtoken::split(s)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Aggregation {
    /// tp/fp/fn pooled over the slice.
    #[default]
    Micro,
    /// Mean of per-sample F1.
    Macro,
}

/// Sub-token F1 of predicted against target names per epoch.
pub fn f1_trajectory(trace: &RunTrace, aggregation: F1Aggregation) -> Result<MetricSeries, MetricsError> {
    require_records(trace)?;
    per_epoch(trace, "f1", |rs| {
        if rs.is_empty() {
            return Err(MetricsError::EmptySlice);
        }
        let per_sample = rs
            .iter()
            .map(|r| parts_counts(&name_parts(&r.predicted), &name_parts(&r.target)));
        Ok(match aggregation {
            F1Aggregation::Micro => {
                let mut total = SubtokenCounts::default();
                for c in per_sample {
                    total += c;
                }
                total.score().f1
            }
            F1Aggregation::Macro => {
                per_sample.map(|c| c.score().f1).sum::<f64>() / rs.len() as f64
            }
        })
    })
}

/// Mean sentence-level smoothed BLEU-4 per epoch.
pub fn bleu_trajectory(trace: &RunTrace) -> Result<MetricSeries, MetricsError> {
    require_records(trace)?;
    per_epoch(trace, "bleu4", |rs| {
        if rs.is_empty() {
            return Err(MetricsError::EmptySlice);
        }
        let mut total = 0.0;
        for r in rs {
            total += smoothed_bleu4(&r.predicted.tokens(), &r.target.tokens())?.score;
        }
        Ok(total / rs.len() as f64)
    })
}

pub fn balanced_accuracy_trajectory(trace: &RunTrace) -> Result<MetricSeries, MetricsError> {
    require_records(trace)?;
    per_epoch(trace, "balanced_accuracy", balanced_accuracy)
}

/// Localization and repair accuracy series.
pub fn loc_rep_trajectories(trace: &RunTrace) -> Result<(MetricSeries, MetricSeries), MetricsError> {
    require_records(trace)?;
    let loc = per_epoch(trace, "loc_accuracy", |rs| {
        Ok(localization_repair_accuracy(rs)?.loc_acc)
    })?;
    let rep = per_epoch(trace, "rep_accuracy", |rs| {
        Ok(localization_repair_accuracy(rs)?.rep_acc)
    })?;
    Ok((loc, rep))
}

/// The metric set reported for a task: task accuracy first, then loss
/// statistics.
pub fn task_metrics(trace: &RunTrace, task: Task) -> Result<Vec<MetricSeries>, MetricsError> {
    let mut out = match task {
        Task::MethodName => vec![
            f1_trajectory(trace, F1Aggregation::Micro)?,
            accuracy_trajectory(trace)?,
        ],
        Task::VarMisuse => {
            let (loc, rep) = loc_rep_trajectories(trace)?;
            vec![loc, rep]
        }
        Task::CodeToText => vec![bleu_trajectory(trace)?],
        Task::CodeSearch => vec![balanced_accuracy_trajectory(trace)?],
    };
    out.push(gini_trajectory(trace)?);
    out.push(mean_loss_trajectory(trace)?);
    Ok(out)
}

pub fn score_curve(trace: &RunTrace, split: Split) -> Result<ScoreCurve, MetricsError> {
    if trace.is_empty() || !trace.has_split(split) {
        return Err(MetricsError::EmptySplit);
    }
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    for epoch in 0..trace.epoch_count() {
        for r in trace.epoch_slice(epoch, split).expect("epoch within range") {
            *sums.entry(r.sample_id.as_str()).or_default() += r.score;
        }
    }
    let epochs = trace.epoch_count() as f64;
    let mut values: Vec<f64> = sums.into_values().map(|s| (s / epochs).clamp(0.0, 1.0)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(ScoreCurve {
        run_id: trace.run_id().to_string(),
        noise_rate: trace.noise_rate(),
        split,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, split: Split, id: &str, loss: f64, score: f64) -> TelemetryRecord {
        TelemetryRecord {
            run_id: "r".into(),
            noise_rate: 0.5,
            noise_mode: "label_swap".into(),
            epoch,
            split,
            sample_id: id.into(),
            loss,
            loc_loss: None,
            rep_loss: None,
            predicted: "getName".into(),
            score,
            correct: false,
            target: "setName".into(),
            var_misuse: None,
        }
    }

    fn trace(epochs: &[&[f64]]) -> RunTrace {
        let mut records = Vec::new();
        for (e, losses) in epochs.iter().enumerate() {
            for (i, &l) in losses.iter().enumerate() {
                records.push(rec(e, Split::Train, &format!("s{i}"), l, 0.5));
            }
        }
        RunTrace::from_records(records).unwrap()
    }

    #[test]
    fn gini_series_examples() {
        let t = gini_trajectory(&trace(&[&[2.0, 2.0, 2.0]])).unwrap();
        assert_eq!(t.train, vec![0.0]);
        assert!(t.heldout.is_empty());

        let t = gini_trajectory(&trace(&[&[0.0, 0.0, 1.0], &[1.0, 1.0, 1.0]])).unwrap();
        assert!((t.train[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.train[1], 0.0);

        let scaled = gini_trajectory(&trace(&[&[0.0, 0.0, 3.0], &[3.0, 3.0, 3.0]])).unwrap();
        assert_eq!(scaled.train, t.train);
        assert_eq!(t.noise_rate, 0.5);
    }

    #[test]
    fn empty_trace_is_an_error() {
        let empty = RunTrace::from_records(vec![]).unwrap();
        assert!(gini_trajectory(&empty).is_err());
        assert_eq!(score_curve(&empty, Split::Train), Err(MetricsError::EmptySplit));
    }

    #[test]
    fn score_curve_examples() {
        let t = RunTrace::from_records(vec![
            rec(0, Split::Heldout, "a", 1.0, 0.2),
            rec(1, Split::Heldout, "a", 1.0, 0.4),
        ])
        .unwrap();
        let c = score_curve(&t, Split::Heldout).unwrap();
        assert_eq!(c.values.len(), 1);
        assert!((c.values[0] - 0.3).abs() < 1e-15);
        assert_eq!(score_curve(&t, Split::Train), Err(MetricsError::EmptySplit));

        let mut records = vec![
            rec(0, Split::Train, "a", 1.0, 0.9),
            rec(0, Split::Train, "b", 1.0, 0.1),
            rec(0, Split::Train, "c", 1.0, 0.5),
        ];
        let c = score_curve(&RunTrace::from_records(records.clone()).unwrap(), Split::Train).unwrap();
        assert_eq!(c.values, vec![0.9, 0.5, 0.1]);
        assert_eq!(c.median(), Some(0.5));
        records.reverse();
        let c2 = score_curve(&RunTrace::from_records(records).unwrap(), Split::Train).unwrap();
        assert_eq!(c, c2);
    }

    #[test]
    fn f1_micro_and_macro() {
        let mut a = rec(0, Split::Train, "a", 1.0, 0.5);
        a.predicted = "getName".into();
        a.target = "setName".into();
        let mut b = rec(0, Split::Train, "b", 1.0, 0.5);
        b.predicted = "run".into();
        b.target = "runFast".into();
        let t = RunTrace::from_records(vec![a, b]).unwrap();
        // micro: tp 2, fp 1, fn 2 -> P 2/3, R 1/2, F1 4/7
        let micro = f1_trajectory(&t, F1Aggregation::Micro).unwrap();
        assert!((micro.train[0] - 4.0 / 7.0).abs() < 1e-15);
        // macro: mean(0.5, 2/3)
        let macro_ = f1_trajectory(&t, F1Aggregation::Macro).unwrap();
        assert!((macro_.train[0] - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn bleu_and_accuracy_series() {
        let mut a = rec(0, Split::Heldout, "a", 1.0, 0.5);
        a.predicted = Output::Tokens(vec!["a".into(), "b".into()]);
        a.target = Output::Tokens(vec!["a".into(), "b".into()]);
        a.correct = true;
        let mut b = rec(0, Split::Heldout, "b", 1.0, 0.5);
        b.predicted = Output::Tokens(vec!["x".into()]);
        b.target = Output::Tokens(vec!["a".into()]);
        let t = RunTrace::from_records(vec![a, b]).unwrap();
        assert_eq!(bleu_trajectory(&t).unwrap().heldout, vec![0.5]);
        assert_eq!(accuracy_trajectory(&t).unwrap().heldout, vec![0.5]);
        let names: Vec<String> = task_metrics(&t, Task::CodeToText)
            .unwrap()
            .into_iter()
            .map(|s| s.metric)
            .collect();
        assert_eq!(names, vec!["bleu4", "gini_loss", "mean_loss"]);
    }
}
