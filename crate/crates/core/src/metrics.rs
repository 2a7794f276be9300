//! Accuracy, mean IoU and Dice over label maps.
//!
//! Segmentation positions labelled [`IGNORE_LABEL`] in the ground truth are
//! skipped. A class absent from both prediction and truth has no IoU/Dice and
//! is left out of the mean.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::LabelBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Accuracy,
    Miou,
    Dice,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "acc",
            MetricKind::Miou => "miou",
            MetricKind::Dice => "dice",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acc" | "accuracy" => Ok(MetricKind::Accuracy),
            "miou" => Ok(MetricKind::Miou),
            "dice" => Ok(MetricKind::Dice),
            other => Err(Error::InvalidParameter(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub kind: MetricKind,
    pub value: f64,
    /// Length K for IoU/Dice; `None` entries mark classes absent from both maps.
    pub per_class: Option<Vec<Option<f64>>>,
    /// Evaluable positions.
    pub sample_count: usize,
}

/// How a metric over several images is reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// One confusion count over every image.
    Global,
    /// Metric per image, then the plain mean over images.
    PerImage,
}

fn check_pair(pred: &LabelBatch, truth: &LabelBatch) -> Result<()> {
    if pred.layout() != truth.layout() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs truth {:?}",
            pred.layout(),
            truth.layout()
        )));
    }
    Ok(())
}

pub fn accuracy(pred: &LabelBatch, truth: &LabelBatch) -> Result<MetricReport> {
    check_pair(pred, truth)?;
    let (hits, total) = count_hits(pred, truth);
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok(MetricReport {
        kind: MetricKind::Accuracy,
        value: hits as f64 / total as f64,
        per_class: None,
        sample_count: total,
    })
}

fn count_hits(pred: &LabelBatch, truth: &LabelBatch) -> (usize, usize) {
    let (mut hits, mut total) = (0, 0);
    for (i, (&p, &t)) in pred.values().iter().zip(truth.values()).enumerate() {
        if truth.is_ignored(i) {
            continue;
        }
        total += 1;
        if p == t {
            hits += 1;
        }
    }
    (hits, total)
}

/// Per-class intersection and marginal counts over evaluable positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    intersection: Vec<u64>,
    predicted: Vec<u64>,
    actual: Vec<u64>,
    evaluable: usize,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        ConfusionCounts {
            intersection: vec![0; classes],
            predicted: vec![0; classes],
            actual: vec![0; classes],
            evaluable: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.intersection.len()
    }

    pub fn evaluable(&self) -> usize {
        self.evaluable
    }

    pub fn accumulate(&mut self, pred: &LabelBatch, truth: &LabelBatch) -> Result<()> {
        check_pair(pred, truth)?;
        let classes = self.classes();
        truth.check_classes(classes)?;
        for (i, (&p, &t)) in pred.values().iter().zip(truth.values()).enumerate() {
            if truth.is_ignored(i) {
                continue;
            }
            if p < 0 || p as usize >= classes {
                return Err(Error::InvalidLabel { index: i, value: p });
            }
            let (p, t) = (p as usize, t as usize);
            self.predicted[p] += 1;
            self.actual[t] += 1;
            if p == t {
                self.intersection[p] += 1;
            }
            self.evaluable += 1;
        }
        Ok(())
    }

    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        (0..self.classes())
            .map(|c| {
                let inter = self.intersection[c];
                let union = self.predicted[c] + self.actual[c] - inter;
                (union > 0).then(|| inter as f64 / union as f64)
            })
            .collect()
    }

    pub fn dice_per_class(&self) -> Vec<Option<f64>> {
        (0..self.classes())
            .map(|c| {
                let total = self.predicted[c] + self.actual[c];
                (total > 0).then(|| 2.0 * self.intersection[c] as f64 / total as f64)
            })
            .collect()
    }

    pub fn report(&self, kind: MetricKind) -> Result<MetricReport> {
        if self.evaluable == 0 {
            return Err(Error::EmptyEvaluation);
        }
        let (value, per_class) = match kind {
            MetricKind::Accuracy => {
                let hits: u64 = self.intersection.iter().sum();
                (hits as f64 / self.evaluable as f64, None)
            }
            MetricKind::Miou | MetricKind::Dice => {
                let per_class = if kind == MetricKind::Miou {
                    self.iou_per_class()
                } else {
                    self.dice_per_class()
                };
                (mean_present(&per_class), Some(per_class))
            }
        };
        Ok(MetricReport {
            kind,
            value,
            per_class,
            sample_count: self.evaluable,
        })
    }
}

fn mean_present(per_class: &[Option<f64>]) -> f64 {
    let (sum, n) = per_class
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
    // evaluable > 0 guarantees at least one present class
    sum / n as f64
}

pub fn miou(pred: &LabelBatch, truth: &LabelBatch, classes: usize) -> Result<MetricReport> {
    let mut counts = ConfusionCounts::new(classes);
    counts.accumulate(pred, truth)?;
    counts.report(MetricKind::Miou)
}

pub fn dice(pred: &LabelBatch, truth: &LabelBatch, classes: usize) -> Result<MetricReport> {
    let mut counts = ConfusionCounts::new(classes);
    counts.accumulate(pred, truth)?;
    counts.report(MetricKind::Dice)
}

/// Evaluates a metric over several `(prediction, truth)` pairs.
pub fn evaluate(
    kind: MetricKind,
    pairs: &[(&LabelBatch, &LabelBatch)],
    classes: usize,
    aggregation: Aggregation,
) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    match aggregation {
        Aggregation::Global => {
            let mut counts = ConfusionCounts::new(classes);
            for (pred, truth) in pairs {
                counts.accumulate(pred, truth)?;
            }
            counts.report(kind)
        }
        Aggregation::PerImage => {
            let mut sum = 0.0;
            let mut samples = 0;
            for (pred, truth) in pairs {
                let mut counts = ConfusionCounts::new(classes);
                counts.accumulate(pred, truth)?;
                let report = counts.report(kind)?;
                sum += report.value;
                samples += report.sample_count;
            }
            Ok(MetricReport {
                kind,
                value: sum / pairs.len() as f64,
                per_class: None,
                sample_count: samples,
            })
        }
    }
}

/// Single-pair evaluation; accuracy ignores `classes` beyond label validation.
pub fn evaluate_one(
    kind: MetricKind,
    pred: &LabelBatch,
    truth: &LabelBatch,
    classes: usize,
) -> Result<MetricReport> {
    match kind {
        MetricKind::Accuracy => accuracy(pred, truth),
        MetricKind::Miou => miou(pred, truth, classes),
        MetricKind::Dice => dice(pred, truth, classes),
    }
}
