//! Block-shuffled train/validation/test splitting.
//!
//! CAN traffic is heavily autocorrelated, so record-level shuffling leaks
//! near-duplicate neighbors across splits. Instead each split's quota is cut
//! into a handful of contiguous blocks and the blocks are shuffled, which
//! keeps local context together while still mixing capture regions between
//! splits. Quotas use largest-remainder rounding so the three sizes always
//! sum to the input size, and within each split the original record order is
//! preserved.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

/// Maximum number of contiguous blocks each split is cut into.
const BLOCKS_PER_SPLIT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.75,
            val: 0.15,
            test: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("split ratios sum to {sum}, expected 1")]
    RatioSum { sum: f64 },
    #[error("{part} split would be empty with {total} records")]
    DegenerateSplit { part: &'static str, total: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

const PART_NAMES: [&str; 3] = ["train", "val", "test"];

/// Largest-remainder quotas: floors first, then the leftover records go to
/// the parts with the largest fractional remainders, ties broken in
/// train, val, test order.
fn quotas(total: usize, ratios: SplitRatios) -> Result<[usize; 3], SplitError> {
    let parts = [ratios.train, ratios.val, ratios.test];
    for r in parts {
        if !r.is_finite() || r < 0.0 {
            let sum = parts.iter().sum();
            return Err(SplitError::RatioSum { sum });
        }
    }
    let sum: f64 = parts.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SplitError::RatioSum { sum });
    }
    let mut quota = [0usize; 3];
    let mut fracs = [(0.0f64, 0usize); 3];
    for (i, r) in parts.iter().enumerate() {
        let exact = total as f64 * r;
        quota[i] = exact.floor() as usize;
        fracs[i] = (exact - exact.floor(), i);
    }
    let assigned: usize = quota.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        fracs[b]
            .0
            .partial_cmp(&fracs[a].0)
            .expect("fractions are finite")
            .then(a.cmp(&b))
    });
    for k in 0..total.saturating_sub(assigned) {
        quota[order[k % 3]] += 1;
    }
    for (i, q) in quota.iter().enumerate() {
        if *q == 0 {
            return Err(SplitError::DegenerateSplit {
                part: PART_NAMES[i],
                total,
            });
        }
    }
    Ok(quota)
}

/// Near-even block sizes for one split: `count` records over
/// `min(BLOCKS_PER_SPLIT, count)` blocks, earlier blocks absorbing the
/// remainder.
fn block_sizes(count: usize) -> Vec<usize> {
    let blocks = count.min(BLOCKS_PER_SPLIT);
    let base = count / blocks;
    let extra = count % blocks;
    (0..blocks)
        .map(|b| base + usize::from(b < extra))
        .collect()
}

/// Split `records` into train, validation and test sets.
pub fn split<T: Clone>(
    records: &[T],
    ratios: SplitRatios,
    seed: u64,
) -> Result<Split<T>, SplitError> {
    let quota = quotas(records.len(), ratios)?;
    let mut descriptors: Vec<(usize, usize)> = Vec::new();
    for (part, count) in quota.iter().enumerate() {
        for size in block_sizes(*count) {
            descriptors.push((part, size));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    descriptors.shuffle(&mut rng);

    let mut out = Split {
        train: Vec::with_capacity(quota[0]),
        val: Vec::with_capacity(quota[1]),
        test: Vec::with_capacity(quota[2]),
    };
    let mut cursor = 0usize;
    for (part, size) in descriptors {
        let chunk = &records[cursor..cursor + size];
        cursor += size;
        match part {
            0 => out.train.extend_from_slice(chunk),
            1 => out.val.extend_from_slice(chunk),
            _ => out.test.extend_from_slice(chunk),
        }
    }
    debug_assert_eq!(cursor, records.len());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn indices(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    /// Maximal contiguous runs in a strictly increasing index list.
    fn runs(xs: &[usize]) -> usize {
        if xs.is_empty() {
            return 0;
        }
        1 + xs.windows(2).filter(|w| w[1] != w[0] + 1).count()
    }

    #[test]
    fn default_ratios_split_one_hundred_exactly() {
        let s = split(&indices(100), SplitRatios::default(), 9).unwrap();
        assert_eq!(s.train.len(), 75);
        assert_eq!(s.val.len(), 15);
        assert_eq!(s.test.len(), 10);
    }

    #[test]
    fn per_split_order_is_preserved_and_blocked() {
        let s = split(&indices(200), SplitRatios::default(), 1234).unwrap();
        for part in [&s.train, &s.val, &s.test] {
            assert!(part.windows(2).all(|w| w[0] < w[1]), "order preserved");
            assert!(runs(part) <= 4, "at most four contiguous blocks");
        }
    }

    #[test]
    fn every_record_lands_in_exactly_one_split() {
        let s = split(&indices(137), SplitRatios::default(), 5).unwrap();
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(s.val.iter())
            .chain(s.test.iter())
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, indices(137));
    }

    #[test]
    fn largest_remainder_breaks_ties_toward_earlier_parts() {
        let ratios = SplitRatios {
            train: 0.5,
            val: 0.25,
            test: 0.25,
        };
        let s = split(&indices(7), ratios, 0).unwrap();
        assert_eq!(
            (s.train.len(), s.val.len(), s.test.len()),
            (3, 2, 2),
            "fractions .5/.75/.75 hand out the two leftovers to val and test"
        );
    }

    #[test]
    fn tiny_inputs_are_rejected_rather_than_silently_empty() {
        let err = split(&indices(3), SplitRatios::default(), 0).unwrap_err();
        assert!(matches!(err, SplitError::DegenerateSplit { part: "val", .. } | SplitError::DegenerateSplit { part: "test", .. }));
    }

    #[test]
    fn ratio_sum_must_be_one() {
        let bad = SplitRatios {
            train: 0.8,
            val: 0.3,
            test: 0.1,
        };
        let err = split(&indices(10), bad, 0).unwrap_err();
        assert!(matches!(err, SplitError::RatioSum { .. }));
    }

    #[test]
    fn same_seed_is_deterministic_and_seeds_differ() {
        let data = indices(100);
        let a = split(&data, SplitRatios::default(), 7).unwrap();
        let b = split(&data, SplitRatios::default(), 7).unwrap();
        assert_eq!(a, b);
        let c = split(&data, SplitRatios::default(), 8).unwrap();
        assert_ne!(a, c, "a different seed shuffles blocks differently");
    }
}
