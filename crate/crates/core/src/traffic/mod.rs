//! Labeled CAN traffic: trace files, synthetic attack generation, dataset
//! splitting.
//!
//! Trace rows follow the common automotive capture layout:
//!
//! ```text
//! timestamp,ID,DLC,byte0,...,byte{DLC-1}[,flag]
//! 1478198376.389427,0316,8,05,21,68,09,21,21,00,6f,R
//! ```
//!
//! with the timestamp in decimal seconds, the identifier in hex, payload
//! bytes in hex, and an optional flag: `R` for regular traffic, `T` for an
//! injected frame. Both supported dataset families share this row shape, so
//! one parser serves them; rows that do not fit (headers, truncated lines,
//! out-of-range fields) are skipped and tallied rather than failing the load.
//!
//! Timestamps are held as integer microseconds, parsed digit-exactly from
//! the 6-decimal text form so values survive a round trip unchanged.

pub mod split;
pub mod synth;

use crate::frame_codec::CanFrame;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Ground-truth label of one trace row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Benign,
    Attack,
}

impl Label {
    #[must_use]
    pub fn is_attack(self) -> bool {
        matches!(self, Label::Attack)
    }

    #[must_use]
    pub fn as_flag(self) -> &'static str {
        match self {
            Label::Benign => "R",
            Label::Attack => "T",
        }
    }
}

/// Which public capture family a file comes from. The row layout is shared;
/// the schema is carried through to reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceSchema {
    #[default]
    CarHacking,
    Survival,
}

impl TraceSchema {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            TraceSchema::CarHacking => "car_hacking",
            TraceSchema::Survival => "survival",
        }
    }
}

impl std::str::FromStr for TraceSchema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "car_hacking" | "car-hacking" => Ok(TraceSchema::CarHacking),
            "survival" => Ok(TraceSchema::Survival),
            other => Err(format!(
                "unknown schema {other:?}, expected car_hacking or survival"
            )),
        }
    }
}

/// One timestamped, labeled frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub timestamp_us: u64,
    pub frame: CanFrame,
    pub label: Label,
}

/// Row accounting from one load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadStats {
    /// Non-empty lines seen.
    pub lines: usize,
    pub parsed: usize,
    pub malformed: usize,
    /// Rows whose timestamp ran backwards relative to the previous row.
    pub out_of_order: usize,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace file has no rows")]
    EmptyTrace,
    #[error("none of the {lines} rows matched the expected layout")]
    SchemaError { lines: usize },
}

/// Digit-exact parse of a decimal-seconds timestamp into microseconds.
/// Fractions shorter than six digits are zero padded; longer ones truncate.
fn parse_timestamp_us(s: &str) -> Option<u64> {
    let (sec, frac) = match s.split_once('.') {
        Some((a, b)) => (a, b),
        None => (s, ""),
    };
    if sec.is_empty() || !sec.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let seconds: u64 = sec.parse().ok()?;
    let mut digits = [b'0'; 6];
    for (slot, b) in digits.iter_mut().zip(frac.bytes()) {
        *slot = b;
    }
    let micros: u64 = std::str::from_utf8(&digits)
        .expect("ascii digits")
        .parse()
        .expect("six digits fit u64");
    seconds.checked_mul(1_000_000)?.checked_add(micros)
}

/// Parse one row. `None` means the row does not fit the layout.
#[must_use]
pub fn parse_record(line: &str) -> Option<TraceRecord> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 3 {
        return None;
    }
    let timestamp_us = parse_timestamp_us(fields[0])?;
    let id = u16::from_str_radix(fields[1], 16).ok()?;
    let dlc: u8 = fields[2].parse().ok()?;
    if dlc > 8 {
        return None;
    }
    let need = 3 + dlc as usize;
    if fields.len() < need {
        return None;
    }
    let mut payload = Vec::with_capacity(dlc as usize);
    for field in &fields[3..need] {
        if field.is_empty() || field.len() > 2 {
            return None;
        }
        payload.push(u8::from_str_radix(field, 16).ok()?);
    }
    let label = match fields.get(need) {
        None => Label::Benign,
        Some(flag) if flag.eq_ignore_ascii_case("R") => Label::Benign,
        Some(flag) if flag.eq_ignore_ascii_case("T") => Label::Attack,
        Some(_) => return None,
    };
    // Trailing empty fields (dangling commas) are tolerated; anything else
    // past the flag is a different layout.
    if fields.len() > need + 1 && !fields[need + 1..].iter().all(|f| f.is_empty()) {
        return None;
    }
    let frame = CanFrame::new(id, &payload).ok()?;
    Some(TraceRecord {
        timestamp_us,
        frame,
        label,
    })
}

/// Parse a whole trace, skipping and tallying malformed rows.
pub fn parse_trace(text: &str) -> Result<(Vec<TraceRecord>, LoadStats), TraceError> {
    let mut records = Vec::new();
    let mut stats = LoadStats::default();
    let mut last_ts: Option<u64> = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        stats.lines += 1;
        match parse_record(line) {
            Some(record) => {
                if last_ts.is_some_and(|t| record.timestamp_us < t) {
                    stats.out_of_order += 1;
                }
                last_ts = Some(record.timestamp_us);
                records.push(record);
            }
            None => stats.malformed += 1,
        }
    }
    if stats.lines == 0 {
        return Err(TraceError::EmptyTrace);
    }
    if records.is_empty() {
        return Err(TraceError::SchemaError { lines: stats.lines });
    }
    stats.parsed = records.len();
    Ok((records, stats))
}

/// Load a trace file.
pub fn load_trace(path: &Path) -> Result<(Vec<TraceRecord>, LoadStats), TraceError> {
    let text = std::fs::read_to_string(path)?;
    parse_trace(&text)
}

/// Render one record in the row layout. Traces carry data frames only.
#[must_use]
pub fn format_record(record: &TraceRecord) -> String {
    debug_assert!(
        !record.frame.is_remote(),
        "trace rows cannot express remote frames"
    );
    let mut line = format!(
        "{}.{:06},{:04X},{}",
        record.timestamp_us / 1_000_000,
        record.timestamp_us % 1_000_000,
        record.frame.id(),
        record.frame.dlc(),
    );
    for byte in record.frame.payload() {
        let _ = write!(line, ",{byte:02x}");
    }
    let _ = write!(line, ",{}", record.label.as_flag());
    line
}

/// Write records as a trace file.
pub fn write_trace(records: &[TraceRecord], path: &Path) -> Result<(), TraceError> {
    let mut text = String::new();
    for record in records {
        text.push_str(&format_record(record));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_reference_row() {
        let row = "1478198376.389427,0316,8,05,21,68,09,21,21,00,6f,R";
        let record = parse_record(row).unwrap();
        assert_eq!(record.timestamp_us, 1_478_198_376_389_427);
        assert_eq!(record.frame.id(), 0x316);
        assert_eq!(record.frame.dlc(), 8);
        assert_eq!(
            record.frame.payload(),
            &[0x05, 0x21, 0x68, 0x09, 0x21, 0x21, 0x00, 0x6F]
        );
        assert_eq!(record.label, Label::Benign);
    }

    #[test]
    fn flag_t_marks_an_attack_and_missing_flag_is_benign() {
        let attack = parse_record("12.000001,0440,2,aa,bb,T").unwrap();
        assert_eq!(attack.label, Label::Attack);
        assert_eq!(attack.frame.payload(), &[0xAA, 0xBB]);
        let flagless = parse_record("12.000002,0440,0").unwrap();
        assert_eq!(flagless.label, Label::Benign);
        assert_eq!(flagless.frame.dlc(), 0);
    }

    #[test]
    fn timestamps_parse_digit_exactly() {
        assert_eq!(parse_timestamp_us("1.000001"), Some(1_000_001));
        assert_eq!(parse_timestamp_us("0.5"), Some(500_000));
        assert_eq!(parse_timestamp_us("3"), Some(3_000_000));
        assert_eq!(parse_timestamp_us("1478198376.389427"), Some(1_478_198_376_389_427));
        assert_eq!(parse_timestamp_us("1.1234567"), Some(1_123_456), "extra digits truncate");
        assert_eq!(parse_timestamp_us(""), None);
        assert_eq!(parse_timestamp_us("-1.0"), None);
        assert_eq!(parse_timestamp_us("1.2e3"), None);
    }

    #[test]
    fn malformed_rows_are_tallied_not_fatal() {
        let text = "Timestamp,ID,DLC,DATA\n\
                    1.000000,0316,2,11,22,R\n\
                    1.000100,0999,2,11,22,R\n\
                    1.000200,0316,9,11,22,R\n\
                    1.000300,0316,2,11\n\
                    1.000400,0316,2,zz,22,R\n\
                    1.000500,0316,2,11,22,X\n\
                    1.000600,0316,2,11,22,T\n";
        let (records, stats) = parse_trace(text).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(stats.lines, 8);
        assert_eq!(stats.malformed, 6);
        assert_eq!(stats.parsed, 2);
        assert_eq!(records[1].label, Label::Attack);
    }

    #[test]
    fn id_above_eleven_bits_is_malformed() {
        assert!(parse_record("1.0,0800,1,00,R").is_none());
        assert!(parse_record("1.0,07FF,1,00,R").is_some());
    }

    #[test]
    fn empty_and_unrecognized_files_are_distinct_errors() {
        assert!(matches!(parse_trace("\n  \n"), Err(TraceError::EmptyTrace)));
        assert!(matches!(
            parse_trace("header line\nanother,bad,row,here\n"),
            Err(TraceError::SchemaError { lines: 2 })
        ));
    }

    #[test]
    fn out_of_order_rows_are_counted() {
        let text = "2.000000,0316,1,05,R\n1.000000,0316,1,06,R\n3.000000,0316,1,07,R\n";
        let (records, stats) = parse_trace(text).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(stats.out_of_order, 1);
    }

    #[test]
    fn format_and_parse_round_trip() {
        let record = TraceRecord {
            timestamp_us: 1_478_198_376_389_427,
            frame: CanFrame::new(0x316, &[0x05, 0x21, 0x68, 0x09, 0x21, 0x21, 0x00, 0x6F])
                .unwrap(),
            label: Label::Benign,
        };
        let line = format_record(&record);
        assert_eq!(line, "1478198376.389427,0316,8,05,21,68,09,21,21,00,6f,R");
        assert_eq!(parse_record(&line), Some(record));
    }

    #[test]
    fn schema_names_round_trip() {
        assert_eq!(
            "car_hacking".parse::<TraceSchema>().unwrap(),
            TraceSchema::CarHacking
        );
        assert_eq!("survival".parse::<TraceSchema>().unwrap(), TraceSchema::Survival);
        assert!("unknown".parse::<TraceSchema>().is_err());
        assert_eq!(TraceSchema::default().as_str(), "car_hacking");
    }
}
