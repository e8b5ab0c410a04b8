//! CAN CRC-15 over unstuffed bits.

/// Truncated generator polynomial x^15 + x^14 + x^10 + x^8 + x^7 + x^4 + x^3 + 1.
pub const CRC15_POLY: u16 = 0x4599;

const CRC15_MASK: u16 = 0x7FFF;

/// Advances the CRC register by one bit.
#[must_use]
pub fn crc15_step(crc: u16, bit: bool) -> u16 {
    let crc_nxt = bit != (crc & 0x4000 != 0);
    let shifted = (crc << 1) & CRC15_MASK;
    if crc_nxt {
        shifted ^ CRC15_POLY
    } else {
        shifted
    }
}

/// CRC-15 of an unstuffed bit sequence (SOF through the last data bit when
/// checksumming a frame).
#[must_use]
pub fn crc15(bits: &[bool]) -> u16 {
    bits.iter().fold(0, |crc, &bit| crc15_step(crc, bit))
}
