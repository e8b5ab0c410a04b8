//! Confusion-matrix scoring for detector replays.
//!
//! Every rate is reported in percent. A ratio with an empty denominator is
//! not an error: it reports 100% and sets the `degenerate` flag so callers
//! can tell a vacuous perfect score from an earned one (an all-benign trace
//! has no positives to recall, not perfect recall).

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("predicted {predicted} labels but {actual} ground truth labels")]
    LengthMismatch { predicted: usize, actual: usize },
    #[error("no scored frames")]
    Empty,
}

/// One percentage plus whether its denominator was empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub percent: f64,
    pub degenerate: bool,
}

impl MetricValue {
    fn ratio(num: u64, den: u64) -> MetricValue {
        if den == 0 {
            MetricValue {
                percent: 100.0,
                degenerate: true,
            }
        } else {
            MetricValue {
                percent: 100.0 * num as f64 / den as f64,
                degenerate: false,
            }
        }
    }

    #[must_use]
    pub fn format(&self) -> String {
        if self.degenerate {
            format!("{:.3}% (degenerate)", self.percent)
        } else {
            format!("{:.3}%", self.percent)
        }
    }
}

/// Raw confusion counts with attack as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
}

impl ConfusionCounts {
    #[must_use]
    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.false_negatives + self.true_negatives
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub counts: ConfusionCounts,
    pub accuracy: MetricValue,
    pub precision: MetricValue,
    pub recall: MetricValue,
    pub f1: MetricValue,
    pub false_negative_rate: MetricValue,
    pub false_positive_rate: MetricValue,
}

/// Derive every metric from raw counts.
#[must_use]
pub fn metrics_from_counts(counts: ConfusionCounts) -> Metrics {
    let ConfusionCounts {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fnc,
        true_negatives: tn,
    } = counts;
    let accuracy = MetricValue::ratio(tp + tn, counts.total());
    let precision = MetricValue::ratio(tp, tp + fp);
    let recall = MetricValue::ratio(tp, tp + fnc);
    let false_negative_rate = MetricValue::ratio(fnc, fnc + tp);
    let false_positive_rate = MetricValue::ratio(fp, fp + tn);
    let f1 = {
        let p = precision.percent;
        let r = recall.percent;
        if p + r == 0.0 {
            MetricValue {
                percent: 0.0,
                degenerate: true,
            }
        } else {
            MetricValue {
                percent: 2.0 * p * r / (p + r),
                degenerate: precision.degenerate || recall.degenerate,
            }
        }
    };
    Metrics {
        counts,
        accuracy,
        precision,
        recall,
        f1,
        false_negative_rate,
        false_positive_rate,
    }
}

/// Score aligned prediction and ground-truth vectors (true = attack).
pub fn compute_metrics(predicted: &[bool], actual: &[bool]) -> Result<Metrics, MetricsError> {
    if predicted.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: predicted.len(),
            actual: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => counts.true_positives += 1,
            (true, false) => counts.false_positives += 1,
            (false, true) => counts.false_negatives += 1,
            (false, false) => counts.true_negatives += 1,
        }
    }
    Ok(metrics_from_counts(counts))
}
