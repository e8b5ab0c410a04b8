//! Frame to bus bits.

use super::{
    crc15, stuff, BitStream, CanFrame, DOMINANT, EOF_BITS, IFS_BITS, RECESSIVE,
};

fn push_bits_msb(out: &mut Vec<bool>, value: u16, width: usize) {
    for i in (0..width).rev() {
        out.push((value >> i) & 1 == 1);
    }
}

/// Serializes a frame: SOF..CRC bit-stuffed, then the fixed tail (recessive
/// CRC delimiter, a dominant ACK slot since the modeled node is the receiver
/// and always acknowledges, recessive ACK delimiter, 7 EOF bits, 3 IFS bits).
#[must_use]
pub fn encode_frame(frame: &CanFrame) -> BitStream {
    let mut content = Vec::with_capacity(19 + 8 * frame.dlc() as usize + 15);
    content.push(DOMINANT); // SOF
    push_bits_msb(&mut content, frame.id(), 11);
    content.push(frame.is_remote()); // RTR: recessive for remote frames
    content.push(DOMINANT); // IDE: standard identifier
    content.push(DOMINANT); // r0
    push_bits_msb(&mut content, frame.dlc() as u16, 4);
    for &byte in frame.payload() {
        push_bits_msb(&mut content, byte as u16, 8);
    }
    let crc = crc15(&content);
    push_bits_msb(&mut content, crc, 15);

    let mut bits = stuff(&content);
    let stuffed_region_end = bits.len();

    bits.push(RECESSIVE); // CRC delimiter
    bits.push(DOMINANT); // ACK slot
    bits.push(RECESSIVE); // ACK delimiter
    bits.extend(std::iter::repeat_n(RECESSIVE, EOF_BITS));
    bits.extend(std::iter::repeat_n(RECESSIVE, IFS_BITS));

    BitStream::from_parts(bits, stuffed_region_end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame_codec::{unstuff, HEADER_BITS, TAIL_BITS};

    #[test]
    fn dlc0_frame_is_44_bits_plus_stuffing_and_ifs() {
        let frame = CanFrame::new(0x123, &[]).unwrap();
        let bits = encode_frame(&frame);
        let unstuffed = unstuff(&bits.bits()[..bits.stuffed_region_end()]).unwrap();
        // 44 unstuffed bits excluding IFS: 34 stuffed-region content + 10 tail.
        assert_eq!(unstuffed.len() + TAIL_BITS - IFS_BITS, 44);
        let stuff_bits = bits.stuffed_region_end() - unstuffed.len();
        assert_eq!(bits.len(), 44 + stuff_bits + IFS_BITS);
    }

    #[test]
    fn dlc8_frame_is_108_unstuffed_bits_excluding_ifs() {
        let frame = CanFrame::new(0x555, &[0x11; 8]).unwrap();
        let bits = encode_frame(&frame);
        let unstuffed = unstuff(&bits.bits()[..bits.stuffed_region_end()]).unwrap();
        assert_eq!(unstuffed.len() + TAIL_BITS - IFS_BITS, 108);
    }

    #[test]
    fn tail_is_thirteen_bits_with_dominant_ack() {
        let frame = CanFrame::new(0x0, &[]).unwrap();
        let bits = encode_frame(&frame);
        let tail = &bits.bits()[bits.stuffed_region_end()..];
        assert_eq!(tail.len(), TAIL_BITS);
        assert_eq!(tail[0], RECESSIVE); // CRC delimiter
        assert_eq!(tail[1], DOMINANT); // ACK slot
        assert!(tail[2..].iter().all(|&b| b == RECESSIVE));
    }

    #[test]
    fn remote_frame_carries_no_data_bits() {
        let data = encode_frame(&CanFrame::new(0x321, &[0xAA; 4]).unwrap());
        let remote = encode_frame(&CanFrame::remote(0x321, 4).unwrap());
        let data_content = unstuff(&data.bits()[..data.stuffed_region_end()]).unwrap();
        let remote_content = unstuff(&remote.bits()[..remote.stuffed_region_end()]).unwrap();
        assert_eq!(data_content.len() - remote_content.len(), 32);
        // RTR bit sits right after SOF + identifier.
        assert_eq!(remote_content[HEADER_BITS - 7], RECESSIVE);
        assert_eq!(data_content[HEADER_BITS - 7], DOMINANT);
    }
}
