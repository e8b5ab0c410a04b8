//! CAN 2.0A frame model and bit-level codec.
//!
//! Bits use the bus convention throughout: `false` = dominant (0), `true` =
//! recessive (1). A standard data frame on the wire is SOF, 11-bit identifier,
//! RTR, IDE, r0, 4-bit DLC, 0-8 data bytes, 15-bit CRC (all bit-stuffed), then
//! an unstuffed tail of CRC delimiter, ACK slot, ACK delimiter, 7 EOF bits and
//! 3 interframe-space bits.

mod crc;
mod decode;
mod encode;
mod stuff;

pub use crc::{crc15, crc15_step, CRC15_POLY};
pub use decode::{decode_frame, DecodeError, DecodeEvents};
pub(crate) use decode::{DecodeStep, FrameDecoder};
pub use encode::encode_frame;
pub use stuff::{stuff, unstuff, StuffError};

use thiserror::Error;

/// Dominant bus level (logical 0).
pub const DOMINANT: bool = false;
/// Recessive bus level (logical 1).
pub const RECESSIVE: bool = true;

/// Highest 11-bit identifier.
pub const MAX_STANDARD_ID: u16 = 0x7FF;
/// Largest data length code carrying payload bytes.
pub const MAX_DLC: u8 = 8;

/// Header bits SOF..DLC: 1 + 11 + 1 + 1 + 1 + 4.
pub const HEADER_BITS: usize = 19;
/// CRC sequence length.
pub const CRC_BITS: usize = 15;
/// Unstuffed tail: CRC delimiter + ACK slot + ACK delimiter + 7 EOF + 3 IFS.
pub const TAIL_BITS: usize = 13;
/// EOF field length.
pub const EOF_BITS: usize = 7;
/// Interframe space length.
pub const IFS_BITS: usize = 3;

/// Frame construction failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("identifier {id:#05x} exceeds the 11-bit range")]
    IdOutOfRange { id: u16 },
    #[error("dlc {dlc} exceeds {MAX_DLC}")]
    DlcOutOfRange { dlc: u8 },
    #[error("payload of {len} bytes exceeds {MAX_DLC}")]
    PayloadTooLong { len: usize },
}

/// A validated CAN 2.0A frame (11-bit identifier).
///
/// Payload bytes beyond `dlc` are always zero, so whole-struct equality is
/// meaningful. Remote frames carry a DLC but no payload bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CanFrame {
    id: u16,
    dlc: u8,
    payload: [u8; 8],
    is_remote: bool,
}

impl CanFrame {
    /// Builds a data frame. The DLC is the payload length.
    pub fn new(id: u16, payload: &[u8]) -> Result<Self, FrameError> {
        if id > MAX_STANDARD_ID {
            return Err(FrameError::IdOutOfRange { id });
        }
        if payload.len() > MAX_DLC as usize {
            return Err(FrameError::PayloadTooLong { len: payload.len() });
        }
        let mut bytes = [0u8; 8];
        bytes[..payload.len()].copy_from_slice(payload);
        Ok(CanFrame {
            id,
            dlc: payload.len() as u8,
            payload: bytes,
            is_remote: false,
        })
    }

    /// Builds a remote frame requesting `dlc` bytes.
    pub fn remote(id: u16, dlc: u8) -> Result<Self, FrameError> {
        if id > MAX_STANDARD_ID {
            return Err(FrameError::IdOutOfRange { id });
        }
        if dlc > MAX_DLC {
            return Err(FrameError::DlcOutOfRange { dlc });
        }
        Ok(CanFrame {
            id,
            dlc,
            payload: [0u8; 8],
            is_remote: true,
        })
    }

    #[must_use]
    pub fn id(&self) -> u16 {
        self.id
    }

    #[must_use]
    pub fn dlc(&self) -> u8 {
        self.dlc
    }

    /// Payload bytes; empty for remote frames.
    #[must_use]
    pub fn payload(&self) -> &[u8] {
        if self.is_remote {
            &[]
        } else {
            &self.payload[..self.dlc as usize]
        }
    }

    /// Payload zero-padded to 8 bytes, the shape the feature collector stores.
    #[must_use]
    pub fn padded_payload(&self) -> [u8; 8] {
        if self.is_remote {
            [0u8; 8]
        } else {
            self.payload
        }
    }

    #[must_use]
    pub fn is_remote(&self) -> bool {
        self.is_remote
    }
}

/// A transmitted frame as bus bits: the stuffed region (SOF through the CRC
/// sequence, stuff bits included) followed by the fixed-form tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitStream {
    bits: Vec<bool>,
    stuffed_region_end: usize,
}

impl BitStream {
    /// Wraps raw bits. `stuffed_region_end` is the index one past the last
    /// stuffed bit and may not exceed the length.
    ///
    /// # Panics
    /// Panics if `stuffed_region_end > bits.len()`.
    pub fn from_parts(bits: Vec<bool>, stuffed_region_end: usize) -> Self {
        assert!(
            stuffed_region_end <= bits.len(),
            "stuffed_region_end {stuffed_region_end} past end of {} bits",
            bits.len()
        );
        BitStream {
            bits,
            stuffed_region_end,
        }
    }

    #[must_use]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Index one past the last bit of the stuffed region.
    #[must_use]
    pub fn stuffed_region_end(&self) -> usize {
        self.stuffed_region_end
    }

    /// Flips the bit at `index`; used to model single-bit bus errors.
    pub fn flip(&mut self, index: usize) {
        self.bits[index] = !self.bits[index];
    }
}
