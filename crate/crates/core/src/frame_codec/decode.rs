//! Bus bits to frame, tracking the bit positions the receive logic keys off.

use super::{
    crc15_step, BitStream, CanFrame, StuffError, CRC_BITS, DOMINANT, EOF_BITS, IFS_BITS,
    MAX_DLC, RECESSIVE,
};
use thiserror::Error;

/// Decode failures. Positions index the stuffed (on-the-wire) stream.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("crc mismatch: computed {computed:#06x}, received {received:#06x}")]
    Crc { computed: u16, received: u16 },
    #[error(transparent)]
    Stuff(#[from] StuffError),
    #[error("fixed-form violation in {field} at bit {position}")]
    Form {
        field: &'static str,
        position: usize,
    },
    #[error("stream ended mid-frame in {field}")]
    Truncated { field: &'static str },
    #[error("recessive IDE at bit {position}: extended identifiers are not modeled")]
    ExtendedId { position: usize },
    #[error("unexpected dominant bit at {position} after frame completion")]
    TrailingContent { position: usize },
}

/// Bit positions (stuffed-stream indices) of the receive-side milestones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeEvents {
    /// Position of the SOF bit.
    pub sof_index: usize,
    /// Position of the last DLC bit: the header detector fires here.
    pub header_complete_index: usize,
    /// Position of the final bit of each payload byte, in byte order.
    pub byte_complete_indices: Vec<usize>,
    /// Position of the 15th CRC sequence bit, where the checksum is checked.
    pub crc_checked_index: usize,
    /// Position of the last EOF bit.
    pub eof_end_index: usize,
    /// Position of the last interframe-space bit.
    pub ifs_end_index: usize,
    /// Stuff bits consumed between SOF and the end of the CRC sequence.
    pub stuff_bit_count: usize,
    /// Raw DLC value when it exceeded 8 and was clamped.
    pub dlc_clamped_from: Option<u8>,
}

impl DecodeEvents {
    /// Position at which the byte counter matches the DLC: the last payload
    /// byte, or the end of the DLC field for a zero-length data frame.
    #[must_use]
    pub fn data_en_index(&self) -> usize {
        self.byte_complete_indices
            .last()
            .copied()
            .unwrap_or(self.header_complete_index)
    }
}

/// Streamed decoder milestones, in arrival order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum DecodeStep {
    HeaderComplete {
        id: u16,
        dlc: u8,
        is_remote: bool,
    },
    ByteComplete {
        index: u8,
        value: u8,
    },
    CrcValidated,
    FrameComplete(Box<(CanFrame, DecodeEvents)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Idle,
    Id,
    Rtr,
    Ide,
    R0,
    Dlc,
    Data,
    Crc,
    CrcDelim,
    AckSlot,
    AckDelim,
    Eof,
    Ifs,
    Done,
}

/// Incremental frame decoder. Push bits one at a time; milestones stream out
/// as [`DecodeStep`]s. Destuffing covers SOF through the CRC sequence,
/// including a stuff bit that lands right after the final CRC bit.
#[derive(Debug)]
pub(crate) struct FrameDecoder {
    state: State,
    cursor: usize,
    run_val: bool,
    run_len: usize,
    expect_stuff: bool,
    field_count: usize,
    id: u16,
    is_remote: bool,
    dlc: u8,
    byte_acc: u8,
    byte_index: u8,
    payload: [u8; 8],
    crc_acc: u16,
    crc_received: u16,
    events: DecodeEvents,
}

impl FrameDecoder {
    pub(crate) fn new() -> Self {
        FrameDecoder {
            state: State::Idle,
            cursor: 0,
            run_val: RECESSIVE,
            run_len: 0,
            expect_stuff: false,
            field_count: 0,
            id: 0,
            is_remote: false,
            dlc: 0,
            byte_acc: 0,
            byte_index: 0,
            payload: [0u8; 8],
            crc_acc: 0,
            crc_received: 0,
            events: DecodeEvents {
                sof_index: 0,
                header_complete_index: 0,
                byte_complete_indices: Vec::new(),
                crc_checked_index: 0,
                eof_end_index: 0,
                ifs_end_index: 0,
                stuff_bit_count: 0,
                dlc_clamped_from: None,
            },
        }
    }

    /// Index of the next bit to be pushed.
    pub(crate) fn cursor(&self) -> usize {
        self.cursor
    }

    /// Name of the field currently being received, for truncation reports.
    pub(crate) fn field_name(&self) -> &'static str {
        match self.state {
            State::Idle => "start of frame",
            State::Id => "identifier",
            State::Rtr => "rtr",
            State::Ide => "ide",
            State::R0 => "r0",
            State::Dlc => "dlc",
            State::Data => "data",
            State::Crc => "crc sequence",
            State::CrcDelim => "crc delimiter",
            State::AckSlot => "ack slot",
            State::AckDelim => "ack delimiter",
            State::Eof => "eof",
            State::Ifs => "interframe space",
            State::Done => "bus idle",
        }
    }

    fn note_run(&mut self, bit: bool) {
        if self.run_len > 0 && bit == self.run_val {
            self.run_len += 1;
        } else {
            self.run_val = bit;
            self.run_len = 1;
        }
        if self.run_len == 5 {
            self.expect_stuff = true;
        }
    }

    fn in_stuffed_region(&self) -> bool {
        matches!(
            self.state,
            State::Id | State::Rtr | State::Ide | State::R0 | State::Dlc | State::Data | State::Crc
        ) || (self.state == State::CrcDelim && self.expect_stuff)
    }

    /// Consumes one bus bit.
    pub(crate) fn push(&mut self, bit: bool) -> Result<Option<DecodeStep>, DecodeError> {
        let i = self.cursor;
        self.cursor += 1;

        if self.in_stuffed_region() {
            if self.expect_stuff {
                if bit == self.run_val {
                    return Err(StuffError { position: i }.into());
                }
                self.expect_stuff = false;
                self.run_val = bit;
                self.run_len = 1;
                self.events.stuff_bit_count += 1;
                return Ok(None);
            }
            self.note_run(bit);
            return self.content_bit(bit, i);
        }

        match self.state {
            State::Idle => {
                if bit == DOMINANT {
                    self.events.sof_index = i;
                    self.run_val = DOMINANT;
                    self.run_len = 1;
                    self.crc_acc = crc15_step(0, DOMINANT);
                    self.state = State::Id;
                    self.field_count = 0;
                }
                Ok(None)
            }
            State::CrcDelim => {
                if bit != RECESSIVE {
                    return Err(DecodeError::Form {
                        field: "crc delimiter",
                        position: i,
                    });
                }
                self.state = State::AckSlot;
                Ok(None)
            }
            // The modeled node drives the ACK slot itself, so the sampled bus
            // value is not checked.
            State::AckSlot => {
                self.state = State::AckDelim;
                Ok(None)
            }
            State::AckDelim => {
                if bit != RECESSIVE {
                    return Err(DecodeError::Form {
                        field: "ack delimiter",
                        position: i,
                    });
                }
                self.state = State::Eof;
                self.field_count = 0;
                Ok(None)
            }
            State::Eof => {
                if bit != RECESSIVE {
                    return Err(DecodeError::Form {
                        field: "eof",
                        position: i,
                    });
                }
                self.field_count += 1;
                if self.field_count == EOF_BITS {
                    self.events.eof_end_index = i;
                    self.state = State::Ifs;
                    self.field_count = 0;
                }
                Ok(None)
            }
            State::Ifs => {
                if bit != RECESSIVE {
                    return Err(DecodeError::Form {
                        field: "interframe space",
                        position: i,
                    });
                }
                self.field_count += 1;
                if self.field_count == IFS_BITS {
                    self.events.ifs_end_index = i;
                    self.state = State::Done;
                    let frame = self.assemble_frame();
                    return Ok(Some(DecodeStep::FrameComplete(Box::new((
                        frame,
                        self.events.clone(),
                    )))));
                }
                Ok(None)
            }
            State::Done => {
                if bit == DOMINANT {
                    return Err(DecodeError::TrailingContent { position: i });
                }
                Ok(None)
            }
            _ => unreachable!("stuffed-region states handled above"),
        }
    }

    fn content_bit(&mut self, bit: bool, i: usize) -> Result<Option<DecodeStep>, DecodeError> {
        if self.state != State::Crc {
            self.crc_acc = crc15_step(self.crc_acc, bit);
        }
        match self.state {
            State::Id => {
                self.id = (self.id << 1) | bit as u16;
                self.field_count += 1;
                if self.field_count == 11 {
                    self.state = State::Rtr;
                }
                Ok(None)
            }
            State::Rtr => {
                self.is_remote = bit == RECESSIVE;
                self.state = State::Ide;
                Ok(None)
            }
            State::Ide => {
                if bit == RECESSIVE {
                    return Err(DecodeError::ExtendedId { position: i });
                }
                self.state = State::R0;
                Ok(None)
            }
            // r0 is transmitted dominant but receivers accept either level;
            // a flipped r0 still fails the CRC check.
            State::R0 => {
                self.state = State::Dlc;
                self.field_count = 0;
                Ok(None)
            }
            State::Dlc => {
                self.dlc = (self.dlc << 1) | bit as u8;
                self.field_count += 1;
                if self.field_count < 4 {
                    return Ok(None);
                }
                self.events.header_complete_index = i;
                if self.dlc > MAX_DLC {
                    self.events.dlc_clamped_from = Some(self.dlc);
                    self.dlc = MAX_DLC;
                }
                let step = DecodeStep::HeaderComplete {
                    id: self.id,
                    dlc: self.dlc,
                    is_remote: self.is_remote,
                };
                self.field_count = 0;
                if self.is_remote || self.dlc == 0 {
                    self.state = State::Crc;
                } else {
                    self.state = State::Data;
                }
                Ok(Some(step))
            }
            State::Data => {
                self.byte_acc = (self.byte_acc << 1) | bit as u8;
                self.field_count += 1;
                if self.field_count < 8 {
                    return Ok(None);
                }
                let index = self.byte_index;
                let value = self.byte_acc;
                self.payload[index as usize] = value;
                self.events.byte_complete_indices.push(i);
                self.byte_index += 1;
                self.byte_acc = 0;
                self.field_count = 0;
                if self.byte_index == self.dlc {
                    self.state = State::Crc;
                }
                Ok(Some(DecodeStep::ByteComplete { index, value }))
            }
            State::Crc => {
                self.crc_received = (self.crc_received << 1) | bit as u16;
                self.field_count += 1;
                if self.field_count < CRC_BITS {
                    return Ok(None);
                }
                self.events.crc_checked_index = i;
                if self.crc_received != self.crc_acc {
                    return Err(DecodeError::Crc {
                        computed: self.crc_acc,
                        received: self.crc_received,
                    });
                }
                // A run of five ending on the last CRC bit still carries its
                // stuff bit before the delimiter; in_stuffed_region keeps the
                // destuffer armed for exactly that bit.
                self.state = State::CrcDelim;
                Ok(Some(DecodeStep::CrcValidated))
            }
            _ => unreachable!(),
        }
    }

    fn assemble_frame(&self) -> CanFrame {
        if self.is_remote {
            CanFrame::remote(self.id, self.dlc).expect("decoded remote frame fields are in range")
        } else {
            CanFrame::new(self.id, &self.payload[..self.dlc as usize])
                .expect("decoded data frame fields are in range")
        }
    }
}

/// Decodes one complete frame. Leading recessive bits are bus idle and are
/// skipped; anything after the interframe space must be recessive idle.
pub fn decode_frame(bits: &BitStream) -> Result<(CanFrame, DecodeEvents), DecodeError> {
    let mut dec = FrameDecoder::new();
    let mut complete = None;
    for &bit in bits.bits() {
        if let Some(DecodeStep::FrameComplete(boxed)) = dec.push(bit)? {
            complete = Some(*boxed);
        }
    }
    complete.ok_or(DecodeError::Truncated {
        field: dec.field_name(),
    })
}
