//! Bus-time and controller-clock arithmetic.
//!
//! All internal quantities are integer bit positions and clock cycles; the
//! controller clock is an exact multiple of the bitrate, so every bus event
//! lands on a whole cycle. Microsecond values are derived views for reports.

use crate::frame_codec::{decode_frame, encode_frame, CanFrame, DecodeEvents};
use thiserror::Error;

/// Which bus instant counts as frame completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FrameDoneConvention {
    /// Last EOF bit.
    EndOfEof,
    /// Last interframe-space bit.
    #[default]
    EndOfIfs,
}

impl FrameDoneConvention {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            FrameDoneConvention::EndOfEof => "end_of_eof",
            FrameDoneConvention::EndOfIfs => "end_of_ifs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TimingError {
    #[error("bitrate must be positive")]
    ZeroBitrate,
    #[error("controller clock {clock_hz} Hz is slower than the bitrate {bitrate_bps} bps")]
    ClockSlowerThanBitrate { clock_hz: u64, bitrate_bps: u64 },
    #[error("controller clock {clock_hz} Hz is not an integer multiple of the bitrate {bitrate_bps} bps")]
    ClockNotDivisible { clock_hz: u64, bitrate_bps: u64 },
}

/// Bus bitrate, controller clock, and the frame-done convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingConfig {
    bitrate_bps: u64,
    controller_clock_hz: u64,
    frame_done: FrameDoneConvention,
}

impl Default for TimingConfig {
    /// 1 Mbps bus, 16 MHz controller clock, frame done at end of IFS.
    fn default() -> Self {
        TimingConfig {
            bitrate_bps: 1_000_000,
            controller_clock_hz: 16_000_000,
            frame_done: FrameDoneConvention::EndOfIfs,
        }
    }
}

impl TimingConfig {
    pub fn new(
        bitrate_bps: u64,
        controller_clock_hz: u64,
        frame_done: FrameDoneConvention,
    ) -> Result<Self, TimingError> {
        if bitrate_bps == 0 {
            return Err(TimingError::ZeroBitrate);
        }
        if controller_clock_hz < bitrate_bps {
            return Err(TimingError::ClockSlowerThanBitrate {
                clock_hz: controller_clock_hz,
                bitrate_bps,
            });
        }
        if !controller_clock_hz.is_multiple_of(bitrate_bps) {
            return Err(TimingError::ClockNotDivisible {
                clock_hz: controller_clock_hz,
                bitrate_bps,
            });
        }
        Ok(TimingConfig {
            bitrate_bps,
            controller_clock_hz,
            frame_done,
        })
    }

    #[must_use]
    pub fn bitrate_bps(&self) -> u64 {
        self.bitrate_bps
    }

    #[must_use]
    pub fn controller_clock_hz(&self) -> u64 {
        self.controller_clock_hz
    }

    #[must_use]
    pub fn frame_done_convention(&self) -> FrameDoneConvention {
        self.frame_done
    }

    /// Controller cycles per bus bit (the exact prescaler).
    #[must_use]
    pub fn cycles_per_bit(&self) -> u64 {
        self.controller_clock_hz / self.bitrate_bps
    }

    /// Start time of bus bit `index` in microseconds: `index / bitrate`.
    #[must_use]
    pub fn bit_index_to_us(&self, index: usize) -> f64 {
        index as f64 * 1e6 / self.bitrate_bps as f64
    }

    /// Completion instant of bus bit `index` in controller cycles. Events keyed
    /// to a bit fire when that bit has fully arrived.
    #[must_use]
    pub fn bit_end_cycles(&self, index: usize) -> u64 {
        (index as u64 + 1) * self.cycles_per_bit()
    }

    #[must_use]
    pub fn cycles_to_us(&self, cycles: u64) -> f64 {
        cycles as f64 * 1e6 / self.controller_clock_hz as f64
    }

    #[must_use]
    pub fn signed_cycles_to_us(&self, cycles: i64) -> f64 {
        cycles as f64 * 1e6 / self.controller_clock_hz as f64
    }

    /// Frame-done bit index for this config's convention.
    #[must_use]
    pub fn frame_done_index(&self, events: &DecodeEvents) -> usize {
        match self.frame_done {
            FrameDoneConvention::EndOfEof => events.eof_end_index,
            FrameDoneConvention::EndOfIfs => events.ifs_end_index,
        }
    }
}

/// Receive-side instants of one frame, in controller cycles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameTimeline {
    pub clock_hz: u64,
    pub header_detected_cycles: u64,
    pub byte_write_cycles: Vec<u64>,
    /// Present when the datapath extension asserted data_en (data frames).
    pub data_en_cycles: Option<u64>,
    /// Present when the detector produced a verdict.
    pub ids_output_ready_cycles: Option<u64>,
    pub frame_done_cycles: u64,
}

impl FrameTimeline {
    fn us(&self, cycles: u64) -> f64 {
        cycles as f64 * 1e6 / self.clock_hz as f64
    }

    #[must_use]
    pub fn header_detected_us(&self) -> f64 {
        self.us(self.header_detected_cycles)
    }

    #[must_use]
    pub fn data_en_us(&self) -> Option<f64> {
        self.data_en_cycles.map(|c| self.us(c))
    }

    #[must_use]
    pub fn ids_output_ready_us(&self) -> Option<f64> {
        self.ids_output_ready_cycles.map(|c| self.us(c))
    }

    #[must_use]
    pub fn frame_done_us(&self) -> f64 {
        self.us(self.frame_done_cycles)
    }
}

/// The two receive-window spans of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceptionWindow {
    pub clock_hz: u64,
    /// header_detected to frame_done.
    pub t_max_cycles: u64,
    /// data_en to frame_done: the span the detector has to finish in.
    pub t_window_cycles: u64,
}

impl ReceptionWindow {
    #[must_use]
    pub fn t_max_us(&self) -> f64 {
        self.t_max_cycles as f64 * 1e6 / self.clock_hz as f64
    }

    #[must_use]
    pub fn t_window_us(&self) -> f64 {
        self.t_window_cycles as f64 * 1e6 / self.clock_hz as f64
    }
}

/// Windows for a frame as it would appear on the bus under `cfg`.
#[must_use]
pub fn reception_window(frame: &CanFrame, cfg: &TimingConfig) -> ReceptionWindow {
    let stream = encode_frame(frame);
    let (_, events) =
        decode_frame(&stream).expect("encoding of a validated frame always decodes");
    let header = cfg.bit_end_cycles(events.header_complete_index);
    let data_en = cfg.bit_end_cycles(events.data_en_index());
    let done = cfg.bit_end_cycles(cfg.frame_done_index(&events));
    ReceptionWindow {
        clock_hz: cfg.controller_clock_hz(),
        t_max_cycles: done - header,
        t_window_cycles: done - data_en,
    }
}

/// Outcome of comparing a detector latency to a frame's reception window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RealtimeCheck {
    pub meets: bool,
    pub latency_cycles: u64,
    pub window_cycles: u64,
    /// window - latency; negative when the verdict lands after frame_done.
    pub slack_cycles: i64,
    pub clock_hz: u64,
}

impl RealtimeCheck {
    #[must_use]
    pub fn slack_us(&self) -> f64 {
        self.slack_cycles as f64 * 1e6 / self.clock_hz as f64
    }

    #[must_use]
    pub fn window_us(&self) -> f64 {
        self.window_cycles as f64 * 1e6 / self.clock_hz as f64
    }
}

/// Does a detector that needs `ids_latency_cycles` after data_en finish by
/// frame_done for this frame?
#[must_use]
pub fn check_realtime(
    ids_latency_cycles: u64,
    frame: &CanFrame,
    cfg: &TimingConfig,
) -> RealtimeCheck {
    let window = reception_window(frame, cfg);
    RealtimeCheck {
        meets: ids_latency_cycles <= window.t_window_cycles,
        latency_cycles: ids_latency_cycles,
        window_cycles: window.t_window_cycles,
        slack_cycles: window.t_window_cycles as i64 - ids_latency_cycles as i64,
        clock_hz: cfg.controller_clock_hz(),
    }
}
