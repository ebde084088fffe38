//! Threshold calibration, reporting and timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::detector::{score_batch, DetectorModel, WindowBatch};
use crate::error::{Error, Result};
use crate::ingest::Label;
use crate::par::{self, Execution};

pub const DEFAULT_GRID_POINTS: usize = 101;
pub const DEFAULT_REPETITIONS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl ThresholdPoint {
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        // No positive predictions: precision is defined as 1.
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 1.0 };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let total = tp + fp + tn + fn_;
        let accuracy = if total > 0 {
            (tp + tn) as f64 / total as f64
        } else {
            0.0
        };
        ThresholdPoint {
            threshold,
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
            accuracy,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Confusion counts when windows scoring strictly above `threshold` are
/// flagged anomalous.
pub fn evaluate_at(scores: &[f64], labels: &[Label], threshold: f64) -> Result<ThresholdPoint> {
    check_inputs(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > threshold, l.is_anomalous()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ThresholdPoint::from_counts(threshold, tp, fp, tn, fn_))
}

fn check_inputs(scores: &[f64], labels: &[Label]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "threshold sweep",
            format!("{} scores but {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores to evaluate".into()));
    }
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Contract(format!("score {bad} is not finite")));
    }
    Ok(())
}

/// `n_points` thresholds: `min − δ`, score order statistics at evenly spaced
/// quantiles, and `max + δ`, so the sweep covers both the all-positive and
/// the all-negative regime.
pub fn threshold_grid(scores: &[f64], n_points: usize) -> Result<Vec<f64>> {
    if n_points < 2 {
        return Err(Error::Config(format!(
            "threshold grid needs at least 2 points, got {n_points}"
        )));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores to build a grid from".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let delta = 1e-9 * 1f64.max(hi.abs()).max(lo.abs()).max(hi - lo);
    let last = n_points - 1;
    Ok((0..n_points)
        .map(|i| {
            if i == 0 {
                lo - delta
            } else if i == last {
                hi + delta
            } else {
                let q = i as f64 / last as f64;
                sorted[(q * (sorted.len() - 1) as f64).floor() as usize]
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub points: Vec<ThresholdPoint>,
    /// Set when the labels contain only one class.
    pub degenerate_class: bool,
}

pub fn sweep_thresholds(scores: &[f64], labels: &[Label], n_points: usize) -> Result<Sweep> {
    check_inputs(scores, labels)?;
    let grid = threshold_grid(scores, n_points)?;
    let points = par::try_map(Execution::Parallel, &grid, |&t| evaluate_at(scores, labels, t))?;
    let anomalous = labels.iter().filter(|l| l.is_anomalous()).count();
    let degenerate_class = anomalous == 0 || anomalous == labels.len();
    if degenerate_class {
        log::warn!("threshold sweep over a single-class label set");
    }
    Ok(Sweep {
        points,
        degenerate_class,
    })
}

/// Max-F1 point; ties go to the lower threshold.
pub fn pick_operating_point(points: &[ThresholdPoint]) -> Result<ThresholdPoint> {
    points
        .iter()
        .copied()
        .reduce(|best, p| {
            if p.f1 > best.f1 || (p.f1 == best.f1 && p.threshold < best.threshold) {
                p
            } else {
                best
            }
        })
        .ok_or_else(|| Error::EmptyInput("empty sweep".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub repetitions: usize,
    pub windows: usize,
    pub mean_seconds: f64,
    /// Population standard deviation over repetitions (0 for one run).
    pub std_seconds: f64,
    pub windows_per_second: f64,
    pub per_repetition_seconds: Vec<f64>,
}

impl TimingSummary {
    pub fn from_samples(windows: usize, samples: Vec<f64>) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        TimingSummary {
            repetitions: samples.len(),
            windows,
            mean_seconds: mean,
            std_seconds: var.sqrt(),
            windows_per_second: if mean > 0.0 {
                windows as f64 / mean
            } else {
                f64::INFINITY
            },
            per_repetition_seconds: samples,
        }
    }
}

/// Times `repetitions` full scoring passes over `windows`, sequentially on
/// the calling thread.
pub fn benchmark(model: &DetectorModel, windows: &WindowBatch, repetitions: usize) -> Result<TimingSummary> {
    if repetitions == 0 {
        return Err(Error::Config("benchmark needs at least one repetition".into()));
    }
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let scores = score_batch(windows, model, Execution::Sequential)?;
        std::hint::black_box(&scores);
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(TimingSummary::from_samples(windows.len(), samples))
}
