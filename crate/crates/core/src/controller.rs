//! Receive-side controller model.
//!
//! Replays the signal sequence a receiving node observes for one frame:
//! header detection, per-byte buffer writes, and frame completion. With the
//! detector datapath active it additionally captures the two-message feature
//! window, asserts `data_en` when the byte counter matches the DLC, and
//! delivers the detector verdict a fixed number of clock cycles later. A
//! verdict that lands after frame completion is still delivered, flagged
//! stale, and raises a latency violation event.
//!
//! Each call processes one frame's bit stream with bit indices starting at
//! zero; the feature window (previous accepted data frame) persists across
//! calls until [`Controller::reset`].

use crate::frame_codec::{
    encode_frame, CanFrame, DecodeError, DecodeEvents, DecodeStep, FrameDecoder,
};
use crate::qnn::train::LabeledFeature;
use crate::qnn::{QuantizedMlp, Verdict, FEATURE_DIM};
use crate::timing::{FrameTimeline, TimingConfig};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControllerError {
    #[error("detector input is {FEATURE_DIM} bytes, the supplied model takes {got}")]
    ModelInputWidth { got: usize },
}

/// Why a frame never reached the receive buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    Crc,
    Stuff,
    Form,
    Truncated,
    ExtendedId,
    TrailingContent,
}

impl DropReason {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Crc => "crc",
            DropReason::Stuff => "stuff",
            DropReason::Form => "form",
            DropReason::Truncated => "truncated",
            DropReason::ExtendedId => "extended_id",
            DropReason::TrailingContent => "trailing_content",
        }
    }
}

impl From<&DecodeError> for DropReason {
    fn from(e: &DecodeError) -> Self {
        match e {
            DecodeError::Crc { .. } => DropReason::Crc,
            DecodeError::Stuff(_) => DropReason::Stuff,
            DecodeError::Form { .. } => DropReason::Form,
            DecodeError::Truncated { .. } => DropReason::Truncated,
            DecodeError::ExtendedId { .. } => DropReason::ExtendedId,
            DecodeError::TrailingContent { .. } => DropReason::TrailingContent,
        }
    }
}

/// Detector input window: previous and current message, framed as
/// `id_hi, id_lo, payload[0..8]` per message, zero padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureVector {
    pub bytes: [u8; FEATURE_DIM],
    /// False while the window still lacks a previous message; the previous
    /// half is all zeros then.
    pub valid: bool,
}

impl FeatureVector {
    #[must_use]
    pub fn from_pair(prev: Option<&CanFrame>, cur: &CanFrame) -> Self {
        let mut bytes = [0u8; FEATURE_DIM];
        if let Some(p) = prev {
            bytes[0] = (p.id() >> 8) as u8;
            bytes[1] = (p.id() & 0xFF) as u8;
            bytes[2..10].copy_from_slice(&p.padded_payload());
        }
        bytes[10] = (cur.id() >> 8) as u8;
        bytes[11] = (cur.id() & 0xFF) as u8;
        bytes[12..20].copy_from_slice(&cur.padded_payload());
        FeatureVector {
            bytes,
            valid: prev.is_some(),
        }
    }
}

/// Build labeled detector inputs from a frame sequence, applying the same
/// windowing rules as the live controller: remote frames neither produce a
/// sample nor advance the window, and the warmup sample without a previous
/// message is skipped. Each sample takes the label of its current frame.
#[must_use]
pub fn collect_features(frames: &[(CanFrame, bool)]) -> Vec<LabeledFeature> {
    let mut out = Vec::new();
    let mut prev: Option<CanFrame> = None;
    for (frame, attack) in frames {
        if frame.is_remote() {
            continue;
        }
        let fv = FeatureVector::from_pair(prev.as_ref(), frame);
        if fv.valid {
            out.push(LabeledFeature {
                bytes: fv.bytes,
                attack: *attack,
            });
        }
        prev = Some(*frame);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControllerEventKind {
    HeaderDetected { id: u16, dlc: u8, is_remote: bool },
    IdsEnabled,
    ByteWritten { index: usize, value: u8 },
    DataEnAsserted,
    IdsOutputReady { verdict: Verdict, late: bool },
    LatencyViolation { overshoot_cycles: u64 },
    FrameDone,
    FrameDropped { reason: DropReason },
}

impl ControllerEventKind {
    /// Tie-break rank for events sharing a clock cycle.
    pub(crate) fn rank(&self) -> u8 {
        match self {
            ControllerEventKind::HeaderDetected { .. } => 0,
            ControllerEventKind::IdsEnabled => 1,
            ControllerEventKind::ByteWritten { .. } => 2,
            ControllerEventKind::DataEnAsserted => 3,
            ControllerEventKind::IdsOutputReady { .. } => 4,
            ControllerEventKind::LatencyViolation { .. } => 5,
            ControllerEventKind::FrameDone => 6,
            ControllerEventKind::FrameDropped { .. } => 7,
        }
    }

    #[must_use]
    pub fn name(&self) -> &'static str {
        match self {
            ControllerEventKind::HeaderDetected { .. } => "header_detected",
            ControllerEventKind::IdsEnabled => "ids_enabled",
            ControllerEventKind::ByteWritten { .. } => "byte_written",
            ControllerEventKind::DataEnAsserted => "data_en",
            ControllerEventKind::IdsOutputReady { .. } => "ids_output_ready",
            ControllerEventKind::LatencyViolation { .. } => "latency_violation",
            ControllerEventKind::FrameDone => "frame_done",
            ControllerEventKind::FrameDropped { .. } => "frame_dropped",
        }
    }

    fn detail(&self) -> String {
        match self {
            ControllerEventKind::HeaderDetected { id, dlc, is_remote } => {
                format!("id=0x{id:03X} dlc={dlc} remote={is_remote}")
            }
            ControllerEventKind::ByteWritten { index, value } => {
                format!("index={index} value=0x{value:02X}")
            }
            ControllerEventKind::IdsOutputReady { verdict, late } => {
                format!("verdict={} late={}", verdict.as_str(), late)
            }
            ControllerEventKind::LatencyViolation { overshoot_cycles } => {
                format!("overshoot_cycles={overshoot_cycles}")
            }
            ControllerEventKind::FrameDropped { reason } => {
                format!("reason={}", reason.as_str())
            }
            _ => "-".to_string(),
        }
    }

    /// Part of the unmodified receive path, present in every mode.
    #[must_use]
    pub fn is_base_path(&self) -> bool {
        matches!(
            self,
            ControllerEventKind::HeaderDetected { .. }
                | ControllerEventKind::ByteWritten { .. }
                | ControllerEventKind::FrameDone
                | ControllerEventKind::FrameDropped { .. }
        )
    }
}

/// One timestamped controller event. `bit_index` is the bus bit whose span
/// contains the event instant; bit-anchored events fire when their bit
/// completes, at `(bit_index + 1) * cycles_per_bit`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerEvent {
    pub bit_index: usize,
    pub cycles: u64,
    pub kind: ControllerEventKind,
}

/// A successfully received frame with everything the IDS path produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedMessage {
    pub frame: CanFrame,
    /// Detector answer; present only when a model is attached and the frame
    /// carries data.
    pub verdict: Option<Verdict>,
    /// True when the verdict landed after frame completion.
    pub late: bool,
    pub feature: Option<FeatureVector>,
    pub timeline: FrameTimeline,
}

/// Everything one frame's bit stream produced.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    /// Sorted by (cycles, event rank).
    pub events: Vec<ControllerEvent>,
    /// Present unless the frame was dropped.
    pub message: Option<ReceivedMessage>,
    pub error: Option<DecodeError>,
}

#[derive(Debug)]
enum IdsMode {
    /// Unmodified controller: no detector signals at all.
    Disabled,
    /// Datapath extension without a model: feature capture and data_en only.
    PassThrough,
    /// Full detector.
    Enabled(Box<QuantizedMlp>),
}

#[derive(Debug)]
pub struct Controller {
    mode: IdsMode,
    timing: TimingConfig,
    ids_latency_cycles: u64,
    prev: Option<CanFrame>,
}

impl Controller {
    /// Plain receive path without the detector datapath.
    #[must_use]
    pub fn baseline(timing: TimingConfig) -> Self {
        Controller {
            mode: IdsMode::Disabled,
            timing,
            ids_latency_cycles: 0,
            prev: None,
        }
    }

    /// Detector datapath active but no model attached: features are captured
    /// and `data_en` asserts, yet no verdict is produced.
    #[must_use]
    pub fn null_ids(timing: TimingConfig) -> Self {
        Controller {
            mode: IdsMode::PassThrough,
            timing,
            ids_latency_cycles: 0,
            prev: None,
        }
    }

    /// Full detector: verdicts arrive `ids_latency_cycles` after `data_en`.
    pub fn with_model(
        timing: TimingConfig,
        model: QuantizedMlp,
        ids_latency_cycles: u64,
    ) -> Result<Self, ControllerError> {
        if model.input_dim() != FEATURE_DIM {
            return Err(ControllerError::ModelInputWidth {
                got: model.input_dim(),
            });
        }
        Ok(Controller {
            mode: IdsMode::Enabled(Box::new(model)),
            timing,
            ids_latency_cycles,
            prev: None,
        })
    }

    #[must_use]
    pub fn timing(&self) -> &TimingConfig {
        &self.timing
    }

    #[must_use]
    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            IdsMode::Disabled => "baseline",
            IdsMode::PassThrough => "datapath",
            IdsMode::Enabled(_) => "detector",
        }
    }

    /// Forget the previous-message window.
    pub fn reset(&mut self) {
        self.prev = None;
    }

    /// Convenience wrapper: encode the frame and feed its bits.
    pub fn feed_frame(&mut self, frame: &CanFrame) -> FrameOutcome {
        self.feed_bits(encode_frame(frame).bits())
    }

    /// Process one frame's bus bits. Leading recessive bits are idle;
    /// trailing recessive bits after the interframe space are tolerated.
    pub fn feed_bits(&mut self, bits: &[bool]) -> FrameOutcome {
        let cpb = self.timing.cycles_per_bit();
        let ids_active = !matches!(self.mode, IdsMode::Disabled);
        let mut decoder = FrameDecoder::new();
        let mut events: Vec<ControllerEvent> = Vec::new();
        let mut dlc_expect: u8 = 0;
        let mut data_en: Option<u64> = None;
        let mut completed: Option<(CanFrame, DecodeEvents)> = None;

        let at = |i: usize, kind: ControllerEventKind| ControllerEvent {
            bit_index: i,
            cycles: (i as u64 + 1) * cpb,
            kind,
        };

        for &bit in bits {
            let i = decoder.cursor();
            match decoder.push(bit) {
                Err(e) => {
                    events.push(at(i, ControllerEventKind::FrameDropped { reason: (&e).into() }));
                    sort_events(&mut events);
                    return FrameOutcome {
                        events,
                        message: None,
                        error: Some(e),
                    };
                }
                Ok(Some(step)) => match step {
                    DecodeStep::HeaderComplete { id, dlc, is_remote } => {
                        dlc_expect = dlc;
                        events.push(at(i, ControllerEventKind::HeaderDetected { id, dlc, is_remote }));
                        if ids_active && !is_remote {
                            events.push(at(i, ControllerEventKind::IdsEnabled));
                            if dlc == 0 {
                                data_en = Some((i as u64 + 1) * cpb);
                                events.push(at(i, ControllerEventKind::DataEnAsserted));
                            }
                        }
                    }
                    DecodeStep::ByteComplete { index, value } => {
                        events.push(at(
                            i,
                            ControllerEventKind::ByteWritten {
                                index: index as usize,
                                value,
                            },
                        ));
                        if ids_active && index + 1 == dlc_expect {
                            data_en = Some((i as u64 + 1) * cpb);
                            events.push(at(i, ControllerEventKind::DataEnAsserted));
                        }
                    }
                    DecodeStep::CrcValidated => {}
                    DecodeStep::FrameComplete(boxed) => completed = Some(*boxed),
                },
                Ok(None) => {}
            }
        }

        let Some((frame, devents)) = completed else {
            let error = DecodeError::Truncated {
                field: decoder.field_name(),
            };
            let i = decoder.cursor().saturating_sub(1);
            events.push(at(
                i,
                ControllerEventKind::FrameDropped {
                    reason: (&error).into(),
                },
            ));
            sort_events(&mut events);
            return FrameOutcome {
                events,
                message: None,
                error: Some(error),
            };
        };

        let done_index = self.timing.frame_done_index(&devents);
        let done_cycles = self.timing.bit_end_cycles(done_index);
        events.push(at(done_index, ControllerEventKind::FrameDone));

        let mut message = ReceivedMessage {
            frame,
            verdict: None,
            late: false,
            feature: None,
            timeline: FrameTimeline {
                clock_hz: self.timing.controller_clock_hz(),
                header_detected_cycles: self.timing.bit_end_cycles(devents.header_complete_index),
                byte_write_cycles: devents
                    .byte_complete_indices
                    .iter()
                    .map(|i| self.timing.bit_end_cycles(*i))
                    .collect(),
                data_en_cycles: None,
                ids_output_ready_cycles: None,
                frame_done_cycles: done_cycles,
            },
        };

        if ids_active && !frame.is_remote() {
            let data_en_cycles = data_en.expect("data frames assert data_en");
            message.timeline.data_en_cycles = Some(data_en_cycles);
            let feature = FeatureVector::from_pair(self.prev.as_ref(), &frame);
            if let IdsMode::Enabled(model) = &self.mode {
                let inference = model.infer_bytes(&feature.bytes);
                let ready_cycles = data_en_cycles + self.ids_latency_cycles;
                let late = ready_cycles > done_cycles;
                events.push(ControllerEvent {
                    bit_index: cycles_to_bit_index(ready_cycles, cpb),
                    cycles: ready_cycles,
                    kind: ControllerEventKind::IdsOutputReady {
                        verdict: inference.verdict,
                        late,
                    },
                });
                if late {
                    events.push(ControllerEvent {
                        bit_index: cycles_to_bit_index(ready_cycles, cpb),
                        cycles: ready_cycles,
                        kind: ControllerEventKind::LatencyViolation {
                            overshoot_cycles: ready_cycles - done_cycles,
                        },
                    });
                }
                message.verdict = Some(inference.verdict);
                message.late = late;
                message.timeline.ids_output_ready_cycles = Some(ready_cycles);
            }
            message.feature = Some(feature);
            self.prev = Some(frame);
        }

        sort_events(&mut events);
        FrameOutcome {
            events,
            message: Some(message),
            error: None,
        }
    }
}

/// Bit slot containing clock instant `cycles`, under the convention that bit
/// `i` spans `(i * cpb, (i + 1) * cpb]`.
fn cycles_to_bit_index(cycles: u64, cpb: u64) -> usize {
    (cycles.saturating_sub(1) / cpb) as usize
}

fn sort_events(events: &mut [ControllerEvent]) {
    events.sort_by_key(|e| (e.cycles, e.kind.rank()));
}

/// Render an event list as `bit_index, bus_time_us, event, detail` lines.
#[must_use]
pub fn format_event_log(events: &[ControllerEvent], timing: &TimingConfig) -> String {
    let mut out = String::new();
    for e in events {
        let us = timing.cycles_to_us(e.cycles);
        let _ = writeln!(
            out,
            "{}, {:.4}, {}, {}",
            e.bit_index,
            us,
            e.kind.name(),
            e.kind.detail()
        );
    }
    out
}
