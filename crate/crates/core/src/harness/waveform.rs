//! ASCII waveform strips for controller event sequences.
//!
//! One column per bit time, one row per signal. `#` marks activity, `_` is
//! idle, and the two ruler rows give the tens and ones digits of the bit
//! index. Output is fully determined by the events, so strips can be diffed
//! against golden files.

use crate::controller::{ControllerEvent, ControllerEventKind};

const NAME_WIDTH: usize = 18;

fn pad(name: &str) -> String {
    format!("{name:<NAME_WIDTH$}")
}

fn kind_key(kind: &ControllerEventKind) -> &'static str {
    kind.name()
}

/// Render one frame's events as a signal strip.
#[must_use]
pub fn render_waveform(events: &[ControllerEvent]) -> String {
    if events.is_empty() {
        return String::from("(no events)\n");
    }
    let width = events.iter().map(|e| e.bit_index).max().unwrap_or(0) + 1;

    let mut out = String::new();
    let mut tens = pad("");
    let mut ones = pad("bit");
    for col in 0..width {
        if col % 10 == 0 {
            tens.push(char::from_digit(((col / 10) % 10) as u32, 10).unwrap_or('?'));
        } else {
            tens.push(' ');
        }
        ones.push(char::from_digit((col % 10) as u32, 10).unwrap_or('?'));
    }
    out.push_str(tens.trim_end());
    out.push('\n');
    out.push_str(&ones);
    out.push('\n');

    // Frame occupancy: high from start of frame through the last event bit.
    let mut frame_row = pad("frame");
    frame_row.extend(std::iter::repeat_n('#', width));
    out.push_str(&frame_row);
    out.push('\n');

    // One row per distinct kind, in rank order, marking every occurrence.
    let mut kinds: Vec<&ControllerEventKind> = events.iter().map(|e| &e.kind).collect();
    kinds.sort_by_key(|k| k.rank());
    kinds.dedup_by_key(|k| kind_key(k));
    for kind in kinds {
        let mut row: Vec<char> = std::iter::repeat_n('_', width).collect();
        for e in events {
            if kind_key(&e.kind) == kind_key(kind) {
                row[e.bit_index] = '#';
            }
        }
        let mut line = pad(kind_key(kind));
        line.extend(row);
        out.push_str(&line);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::Controller;
    use crate::frame_codec::CanFrame;
    use crate::timing::TimingConfig;

    fn strip_for(frame: &CanFrame) -> String {
        let mut c = Controller::null_ids(TimingConfig::default());
        let outcome = c.feed_frame(frame);
        render_waveform(&outcome.events)
    }

    #[test]
    fn marks_events_at_their_bit_columns() {
        // id 0x555, alternating payload: no stuff bits through the data
        // region, so header lands at bit 18 and data_en at bit 82.
        let frame = CanFrame::new(
            0x555,
            &[0xAA, 0x55, 0xAA, 0x55, 0xAA, 0x55, 0xAA, 0x55],
        )
        .unwrap();
        let strip = strip_for(&frame);
        let header_row = strip
            .lines()
            .find(|l| l.starts_with("header_detected"))
            .unwrap();
        assert_eq!(header_row.chars().nth(NAME_WIDTH + 18), Some('#'));
        assert_eq!(header_row.chars().nth(NAME_WIDTH + 17), Some('_'));
        let data_en_row = strip.lines().find(|l| l.starts_with("data_en")).unwrap();
        assert_eq!(data_en_row.chars().nth(NAME_WIDTH + 82), Some('#'));
    }

    #[test]
    fn rows_are_ruler_frame_then_ranked_kinds() {
        let frame = CanFrame::new(0x123, &[0xAB, 0xCD]).unwrap();
        let strip = strip_for(&frame);
        let names: Vec<&str> = strip
            .lines()
            .skip(1)
            .map(|l| l.split_whitespace().next().unwrap_or(""))
            .collect();
        assert_eq!(
            names,
            [
                "bit",
                "frame",
                "header_detected",
                "ids_enabled",
                "byte_written",
                "data_en",
                "frame_done"
            ]
        );
    }

    #[test]
    fn identical_events_render_identically() {
        let frame = CanFrame::new(0x2AA, &[1, 2, 3]).unwrap();
        assert_eq!(strip_for(&frame), strip_for(&frame));
    }

    #[test]
    fn empty_event_list_says_so() {
        assert_eq!(render_waveform(&[]), "(no events)\n");
    }
}
