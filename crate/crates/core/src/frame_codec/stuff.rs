//! Bit stuffing for the SOF..CRC region.

use thiserror::Error;

/// Six identical consecutive bits inside the stuffed region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("six consecutive identical bits at stuffed index {position}")]
pub struct StuffError {
    /// Index of the sixth identical bit in the stuffed stream.
    pub position: usize,
}

/// Inserts a complement bit after every run of five identical bits. The
/// inserted bit starts a new run, and a run ending on the final input bit
/// still gets its stuff bit appended.
#[must_use]
pub fn stuff(bits: &[bool]) -> Vec<bool> {
    let mut out = Vec::with_capacity(bits.len() + bits.len() / 4 + 1);
    let mut run_val = None;
    let mut run_len = 0usize;
    for &b in bits {
        out.push(b);
        if run_val == Some(b) {
            run_len += 1;
        } else {
            run_val = Some(b);
            run_len = 1;
        }
        if run_len == 5 {
            out.push(!b);
            run_val = Some(!b);
            run_len = 1;
        }
    }
    out
}

/// Inverse of [`stuff`]: drops the complement bit that follows every run of
/// five identical bits. A sixth identical bit where the complement belongs is
/// a [`StuffError`]. A stream that ends immediately after a five-run (so the
/// stuff bit never arrived) is tolerated; such streams are outside the image
/// of [`stuff`].
pub fn unstuff(bits: &[bool]) -> Result<Vec<bool>, StuffError> {
    let mut out = Vec::with_capacity(bits.len());
    let mut run_val = None;
    let mut run_len = 0usize;
    let mut expect_stuff = false;
    for (i, &b) in bits.iter().enumerate() {
        if expect_stuff {
            if Some(b) == run_val {
                return Err(StuffError { position: i });
            }
            expect_stuff = false;
            run_val = Some(b);
            run_len = 1;
            continue;
        }
        out.push(b);
        if run_val == Some(b) {
            run_len += 1;
        } else {
            run_val = Some(b);
            run_len = 1;
        }
        if run_len == 5 {
            expect_stuff = true;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_identical_bits_get_one_stuff_bit() {
        assert_eq!(
            stuff(&[false; 5]),
            vec![false, false, false, false, false, true]
        );
    }

    #[test]
    fn ten_identical_bits_get_two_stuff_bits() {
        let expected = vec![
            true, true, true, true, true, false, true, true, true, true, true, false,
        ];
        assert_eq!(stuff(&[true; 10]), expected);
    }

    #[test]
    fn four_bit_run_passes_untouched() {
        assert_eq!(stuff(&[true; 4]), vec![true; 4]);
    }

    #[test]
    fn unstuff_removes_the_inserted_bit() {
        let original = vec![false, false, false, false, false, false];
        let stuffed = stuff(&original);
        assert_eq!(unstuff(&stuffed).unwrap(), original);
    }

    #[test]
    fn six_identical_bits_are_an_error() {
        let bad = vec![true; 6];
        assert_eq!(unstuff(&bad), Err(StuffError { position: 5 }));
    }

    #[test]
    fn six_run_after_clean_prefix_reports_sixth_bit_position() {
        let mut bad = vec![true, false, true];
        bad.extend_from_slice(&[false; 6]);
        assert_eq!(unstuff(&bad), Err(StuffError { position: 8 }));
    }
}
