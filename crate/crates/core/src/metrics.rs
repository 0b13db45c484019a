//! Classification metrics: confusion matrix, accuracy, macro-averaged
//! precision/recall/F1, and multi-seed aggregation.
//!
//! Conventions (they matter for small splits): per-class precision is
//! tp/(tp+fp) and recall tp/(tp+fn), each 0 when the denominator is 0;
//! F1 is 2PR/(P+R), 0 when P+R = 0. Macro averages run over all classes,
//! so classes absent from both labels and predictions contribute 0.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("class index {index} out of range for {classes} classes")]
    OutOfRange { index: usize, classes: usize },
    #[error("labels and predictions have different lengths ({labels} vs {predictions})")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("no evaluated instances")]
    Empty,
}

/// C × C counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_pairs(
        labels: &[usize],
        predictions: &[usize],
        classes: usize,
    ) -> Result<Self, MetricsError> {
        if labels.len() != predictions.len() {
            return Err(MetricsError::LengthMismatch {
                labels: labels.len(),
                predictions: predictions.len(),
            });
        }
        let mut cm = Self::new(classes);
        for (&y, &p) in labels.iter().zip(predictions) {
            cm.record(y, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, label: usize, prediction: usize) -> Result<(), MetricsError> {
        for index in [label, prediction] {
            if index >= self.classes {
                return Err(MetricsError::OutOfRange {
                    index,
                    classes: self.classes,
                });
            }
        }
        self.counts[label * self.classes + prediction] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, label: usize, prediction: usize) -> u64 {
        self.counts[label * self.classes + prediction]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.classes).map(|c| self.count(c, c)).sum();
        correct as f64 / total as f64
    }

    pub fn per_class(&self) -> Vec<ClassMetrics> {
        (0..self.classes)
            .map(|c| {
                let tp = self.count(c, c);
                let fp: u64 = (0..self.classes)
                    .filter(|&t| t != c)
                    .map(|t| self.count(t, c))
                    .sum();
                let fn_: u64 = (0..self.classes)
                    .filter(|&p| p != c)
                    .map(|p| self.count(c, p))
                    .sum();
                let precision = ratio(tp, tp + fp);
                let recall = ratio(tp, tp + fn_);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                }
            })
            .collect()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metrics of one evaluation pass.
#[derive(Debug, Clone)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

impl EvalMetrics {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self, MetricsError> {
        if confusion.total() == 0 {
            return Err(MetricsError::Empty);
        }
        let per_class = confusion.per_class();
        let c = per_class.len() as f64;
        let macro_precision = per_class.iter().map(|m| m.precision).sum::<f64>() / c;
        let macro_recall = per_class.iter().map(|m| m.recall).sum::<f64>() / c;
        let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / c;
        Ok(Self {
            accuracy: confusion.accuracy(),
            macro_precision,
            macro_recall,
            macro_f1,
            per_class,
            confusion,
        })
    }

    /// [accuracy, macro precision, macro recall, macro F1].
    pub fn headline(&self) -> [f64; 4] {
        [
            self.accuracy,
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
        ]
    }
}

/// Mean and population standard deviation of one metric across seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedStats {
    pub mean: f64,
    pub std: f64,
}

pub fn seed_stats(values: &[f64]) -> SeedStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    SeedStats {
        mean,
        std: var.sqrt(),
    }
}

/// Multi-seed metrics: per-seed values plus mean/std of each headline
/// metric.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub per_seed: Vec<(u64, EvalMetrics)>,
    pub accuracy: SeedStats,
    pub macro_precision: SeedStats,
    pub macro_recall: SeedStats,
    pub macro_f1: SeedStats,
}

impl MetricsReport {
    pub fn aggregate(per_seed: Vec<(u64, EvalMetrics)>) -> Result<Self, MetricsError> {
        if per_seed.is_empty() {
            return Err(MetricsError::Empty);
        }
        let collect = |f: fn(&EvalMetrics) -> f64| -> Vec<f64> {
            per_seed.iter().map(|(_, m)| f(m)).collect()
        };
        let accuracy = seed_stats(&collect(|m| m.accuracy));
        let macro_precision = seed_stats(&collect(|m| m.macro_precision));
        let macro_recall = seed_stats(&collect(|m| m.macro_recall));
        let macro_f1 = seed_stats(&collect(|m| m.macro_f1));
        Ok(Self {
            per_seed,
            accuracy,
            macro_precision,
            macro_recall,
            macro_f1,
        })
    }

    pub fn means(&self) -> [f64; 4] {
        [
            self.accuracy.mean,
            self.macro_precision.mean,
            self.macro_recall.mean,
            self.macro_f1.mean,
        ]
    }

    pub fn stds(&self) -> [f64; 4] {
        [
            self.accuracy.std,
            self.macro_precision.std,
            self.macro_recall.std,
            self.macro_f1.std,
        ]
    }
}
