//! Flat `key=value` run configuration.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys are errors so typos do not silently fall back to defaults.
//! Command-line flags override anything set here.

use crate::timing::{FrameDoneConvention, TimingConfig, TimingError};
use crate::traffic::TraceSchema;
use std::io;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {content:?}")]
    MissingSeparator { line: usize, content: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value {value:?} for {key}: {reason}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub bitrate_bps: u64,
    pub clock_mhz: u64,
    pub ids_cycles: u64,
    pub schema: TraceSchema,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            bitrate_bps: 1_000_000,
            clock_mhz: 16,
            ids_cycles: crate::harness::DEFAULT_IDS_LATENCY_CYCLES,
            schema: TraceSchema::default(),
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn timing(&self) -> Result<TimingConfig, TimingError> {
        TimingConfig::new(
            self.bitrate_bps,
            self.clock_mhz * 1_000_000,
            FrameDoneConvention::default(),
        )
    }
}

fn bad<T>(line: usize, key: &str, value: &str, reason: impl ToString) -> Result<T, ConfigError> {
    Err(ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    })
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::MissingSeparator {
                line,
                content: content.to_string(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "bitrate" => match value.parse::<u64>() {
                Ok(v) if v > 0 => cfg.bitrate_bps = v,
                Ok(_) => return bad(line, key, value, "must be positive"),
                Err(e) => return bad(line, key, value, e),
            },
            "clock_mhz" => match value.parse::<u64>() {
                Ok(v) if v > 0 => cfg.clock_mhz = v,
                Ok(_) => return bad(line, key, value, "must be positive"),
                Err(e) => return bad(line, key, value, e),
            },
            "ids_cycles" => match value.parse::<u64>() {
                Ok(v) => cfg.ids_cycles = v,
                Err(e) => return bad(line, key, value, e),
            },
            "schema" => match value.parse::<TraceSchema>() {
                Ok(v) => cfg.schema = v,
                Err(e) => return bad(line, key, value, e),
            },
            "seed" => match value.parse::<u64>() {
                Ok(v) => cfg.seed = v,
                Err(e) => return bad(line, key, value, e),
            },
            other => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: other.to_string(),
                })
            }
        }
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}
