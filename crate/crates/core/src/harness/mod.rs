//! Replay harness: drive labeled traffic through the controller, score the
//! verdicts, and summarize timing behavior.

pub mod metrics;
pub mod waveform;

use crate::controller::{Controller, ControllerError, ControllerEventKind, DropReason};
use crate::qnn::QuantizedMlp;
use crate::timing::TimingConfig;
use crate::traffic::TraceRecord;
use metrics::{compute_metrics, Metrics, MetricsError};
use thiserror::Error;

/// Detector latency used when nothing else is configured: 584 controller
/// cycles between `data_en` and the verdict.
pub const DEFAULT_IDS_LATENCY_CYCLES: u64 = 584;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayConfig {
    pub timing: TimingConfig,
    pub ids_latency_cycles: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            timing: TimingConfig::default(),
            ids_latency_cycles: DEFAULT_IDS_LATENCY_CYCLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("no frames to replay")]
    EmptyTrace,
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Frame bookkeeping for one replay.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayTotals {
    pub frames_in: usize,
    pub delivered: usize,
    /// Delivered frames that produced any verdict at all. The hardware runs
    /// on whatever the feature register holds, so even the warmup frame gets
    /// one.
    pub verdicts: usize,
    /// Verdicts scored against the label: only frames whose feature window
    /// held a real previous message.
    pub scored: usize,
    /// Delivered frames left out of scoring: the warmup frame, remote
    /// frames, or every frame when no model is attached.
    pub unscored: usize,
    pub dropped: usize,
    /// Late verdicts across all verdicts, scored or not.
    pub late_verdicts: usize,
    pub latency_violations: usize,
    /// Non-zero drop tallies in decode-error declaration order.
    pub drop_counts: Vec<(DropReason, usize)>,
}

/// Verdict slack relative to frame completion, in controller cycles.
/// Positive means the verdict landed before the frame finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlackSummary {
    pub samples: usize,
    pub min_cycles: i64,
    pub max_cycles: i64,
    pub clock_hz: u64,
}

impl SlackSummary {
    #[must_use]
    pub fn min_us(&self) -> f64 {
        self.min_cycles as f64 * 1e6 / self.clock_hz as f64
    }

    #[must_use]
    pub fn max_us(&self) -> f64 {
        self.max_cycles as f64 * 1e6 / self.clock_hz as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub mode: &'static str,
    pub totals: ReplayTotals,
    pub slack: Option<SlackSummary>,
    /// Present when at least one frame was scored.
    pub metrics: Option<Metrics>,
    /// Waveform strip of the first delivered frame.
    pub waveform: String,
    /// Event log of the first delivered frame.
    pub event_log: String,
}

impl DetectionReport {
    /// Human-readable multi-line summary.
    #[must_use]
    pub fn to_text(&self) -> String {
        let t = &self.totals;
        let mut out = String::new();
        out.push_str(&format!("mode: {}\n", self.mode));
        out.push_str(&format!(
            "frames: {} in, {} delivered, {} dropped\n",
            t.frames_in, t.delivered, t.dropped
        ));
        for (reason, count) in &t.drop_counts {
            out.push_str(&format!("  dropped by {}: {}\n", reason.as_str(), count));
        }
        out.push_str(&format!(
            "verdicts: {} total, {} scored, {} unscored frames, {} late, {} latency violations\n",
            t.verdicts, t.scored, t.unscored, t.late_verdicts, t.latency_violations
        ));
        if let Some(s) = self.slack {
            out.push_str(&format!(
                "verdict slack: min {} cycles ({:.4} us), max {} cycles ({:.4} us) over {} frames\n",
                s.min_cycles,
                s.min_us(),
                s.max_cycles,
                s.max_us(),
                s.samples
            ));
        }
        if let Some(m) = &self.metrics {
            let c = m.counts;
            out.push_str(&format!(
                "counts: tp={} fp={} fn={} tn={}\n",
                c.true_positives, c.false_positives, c.false_negatives, c.true_negatives
            ));
            out.push_str(&format!(
                "accuracy: {}  precision: {}  recall: {}  f1: {}\n",
                m.accuracy.format(),
                m.precision.format(),
                m.recall.format(),
                m.f1.format()
            ));
            out.push_str(&format!(
                "false negative rate: {}  false positive rate: {}\n",
                m.false_negative_rate.format(),
                m.false_positive_rate.format()
            ));
        }
        if !self.waveform.is_empty() {
            out.push_str("\nfirst delivered frame:\n");
            out.push_str(&self.waveform);
            out.push_str(&self.event_log);
        }
        out
    }

    /// Machine-readable `key=value` lines.
    #[must_use]
    pub fn to_kv(&self) -> String {
        let t = &self.totals;
        let mut out = String::new();
        out.push_str(&format!("mode={}\n", self.mode));
        out.push_str(&format!("frames_in={}\n", t.frames_in));
        out.push_str(&format!("delivered={}\n", t.delivered));
        out.push_str(&format!("dropped={}\n", t.dropped));
        for (reason, count) in &t.drop_counts {
            out.push_str(&format!("dropped_{}={}\n", reason.as_str(), count));
        }
        out.push_str(&format!("verdicts={}\n", t.verdicts));
        out.push_str(&format!("scored={}\n", t.scored));
        out.push_str(&format!("unscored={}\n", t.unscored));
        out.push_str(&format!("late_verdicts={}\n", t.late_verdicts));
        out.push_str(&format!("latency_violations={}\n", t.latency_violations));
        if let Some(s) = self.slack {
            out.push_str(&format!("slack_min_cycles={}\n", s.min_cycles));
            out.push_str(&format!("slack_max_cycles={}\n", s.max_cycles));
        }
        if let Some(m) = &self.metrics {
            let c = m.counts;
            out.push_str(&format!("tp={}\n", c.true_positives));
            out.push_str(&format!("fp={}\n", c.false_positives));
            out.push_str(&format!("fn={}\n", c.false_negatives));
            out.push_str(&format!("tn={}\n", c.true_negatives));
            for (name, v) in [
                ("accuracy", m.accuracy),
                ("precision", m.precision),
                ("recall", m.recall),
                ("f1", m.f1),
                ("false_negative_rate", m.false_negative_rate),
                ("false_positive_rate", m.false_positive_rate),
            ] {
                out.push_str(&format!("{name}_percent={:.6}\n", v.percent));
                out.push_str(&format!("{name}_degenerate={}\n", v.degenerate));
            }
        }
        out
    }
}

const DROP_ORDER: [DropReason; 6] = [
    DropReason::Crc,
    DropReason::Stuff,
    DropReason::Form,
    DropReason::Truncated,
    DropReason::ExtendedId,
    DropReason::TrailingContent,
];

/// Replay labeled records through a controller and score the verdicts.
///
/// With a model every delivered data frame past warmup gets a verdict that
/// is scored against the record label. Without a model the run still
/// exercises the datapath (feature capture and `data_en`) but nothing is
/// scored.
pub fn replay(
    records: &[TraceRecord],
    model: Option<QuantizedMlp>,
    cfg: &ReplayConfig,
) -> Result<DetectionReport, ReplayError> {
    if records.is_empty() {
        return Err(ReplayError::EmptyTrace);
    }
    let mut controller = match model {
        Some(m) => Controller::with_model(cfg.timing, m, cfg.ids_latency_cycles)?,
        None => Controller::null_ids(cfg.timing),
    };
    let mut totals = ReplayTotals::default();
    let mut drop_tally = [0usize; 6];
    let mut predicted = Vec::new();
    let mut actual = Vec::new();
    let mut slack_min = i64::MAX;
    let mut slack_max = i64::MIN;
    let mut slack_samples = 0usize;
    let mut excerpt: Option<(String, String)> = None;

    for record in records {
        let outcome = controller.feed_frame(&record.frame);
        totals.frames_in += 1;
        totals.latency_violations += outcome
            .events
            .iter()
            .filter(|e| matches!(e.kind, ControllerEventKind::LatencyViolation { .. }))
            .count();
        if let Some(msg) = &outcome.message {
            totals.delivered += 1;
            if excerpt.is_none() {
                excerpt = Some((
                    waveform::render_waveform(&outcome.events),
                    crate::controller::format_event_log(&outcome.events, controller.timing()),
                ));
            }
            let window_valid = msg.feature.is_some_and(|f| f.valid);
            match msg.verdict {
                Some(v) => {
                    totals.verdicts += 1;
                    if msg.late {
                        totals.late_verdicts += 1;
                    }
                    if let Some(ready) = msg.timeline.ids_output_ready_cycles {
                        let slack = msg.timeline.frame_done_cycles as i64 - ready as i64;
                        slack_min = slack_min.min(slack);
                        slack_max = slack_max.max(slack);
                        slack_samples += 1;
                    }
                    if window_valid {
                        totals.scored += 1;
                        predicted.push(v.is_attack());
                        actual.push(record.label.is_attack());
                    } else {
                        totals.unscored += 1;
                    }
                }
                None => totals.unscored += 1,
            }
        } else {
            totals.dropped += 1;
            if let Some(err) = &outcome.error {
                let reason = DropReason::from(err);
                if let Some(slot) = DROP_ORDER.iter().position(|r| *r == reason) {
                    drop_tally[slot] += 1;
                }
            }
        }
    }
    totals.drop_counts = DROP_ORDER
        .iter()
        .zip(drop_tally)
        .filter(|(_, n)| *n > 0)
        .map(|(r, n)| (*r, n))
        .collect();

    let metrics = if predicted.is_empty() {
        None
    } else {
        Some(compute_metrics(&predicted, &actual)?)
    };
    let slack = (slack_samples > 0).then_some(SlackSummary {
        samples: slack_samples,
        min_cycles: slack_min,
        max_cycles: slack_max,
        clock_hz: cfg.timing.controller_clock_hz(),
    });
    let (waveform, event_log) = excerpt.unwrap_or_default();
    Ok(DetectionReport {
        mode: controller.mode_name(),
        totals,
        slack,
        metrics,
        waveform,
        event_log,
    })
}

/// Convenience: score a model directly from labeled records.
pub fn score_model(
    records: &[TraceRecord],
    model: &QuantizedMlp,
    cfg: &ReplayConfig,
) -> Result<Metrics, ReplayError> {
    let report = replay(records, Some(model.clone()), cfg)?;
    report.metrics.ok_or(ReplayError::Metrics(MetricsError::Empty))
}
