//! Shared oracles and generators for the integration suite. Everything here
//! is written independently of the library internals it checks: the CRC
//! oracle is polynomial long division rather than a shift register, and the
//! inference oracle re-derives the fixed-point pipeline from the stored
//! layer parameters.

#![allow(dead_code)]

use canids::frame_codec::CanFrame;
use canids::qnn::{QuantizedMlp, INPUT_SCALE, REQUANT_SHIFT};
use rand::Rng;

/// CRC-15 by long division: append 15 zero coefficients, divide by the full
/// 16-bit generator polynomial, keep the remainder.
pub fn oracle_crc15(bits: &[bool]) -> u16 {
    const DIVISOR: u16 = 0xC599;
    let generator: Vec<bool> = (0..16).rev().map(|k| (DIVISOR >> k) & 1 == 1).collect();
    let mut work: Vec<bool> = bits.to_vec();
    work.extend(std::iter::repeat_n(false, 15));
    for i in 0..bits.len() {
        if work[i] {
            for (j, g) in generator.iter().enumerate() {
                work[i + j] ^= g;
            }
        }
    }
    work[bits.len()..]
        .iter()
        .fold(0u16, |acc, b| (acc << 1) | u16::from(*b))
}

/// The unstuffed bit layout of a frame from start-of-frame through the last
/// data bit: the exact span the CRC covers.
pub fn frame_body_bits(frame: &CanFrame) -> Vec<bool> {
    let mut v = vec![false];
    for k in (0..11).rev() {
        v.push((frame.id() >> k) & 1 == 1);
    }
    v.push(frame.is_remote());
    v.push(false);
    v.push(false);
    for k in (0..4).rev() {
        v.push((frame.dlc() >> k) & 1 == 1);
    }
    if !frame.is_remote() {
        for b in frame.payload() {
            for k in (0..8).rev() {
                v.push((b >> k) & 1 == 1);
            }
        }
    }
    v
}

pub fn random_data_frame(rng: &mut impl Rng) -> CanFrame {
    let id = rng.gen_range(0..=0x7FF);
    let dlc = rng.gen_range(0..=8usize);
    let payload: Vec<u8> = (0..dlc).map(|_| rng.gen()).collect();
    CanFrame::new(id, &payload).expect("generated fields are in range")
}

/// Valid frame, remote roughly one time in ten.
pub fn random_frame(rng: &mut impl Rng) -> CanFrame {
    if rng.gen_bool(0.1) {
        CanFrame::remote(rng.gen_range(0..=0x7FF), rng.gen_range(0..=8))
            .expect("generated fields are in range")
    } else {
        random_data_frame(rng)
    }
}

pub fn round_half_even_div(p: i128, shift: u32) -> i64 {
    let floor = p >> shift;
    let rem = p - (floor << shift);
    let half = 1i128 << (shift - 1);
    let q = if rem > half || (rem == half && (floor & 1) == 1) {
        floor + 1
    } else {
        floor
    };
    q as i64
}

/// Re-derive the whole integer inference pipeline from the stored layer
/// parameters: byte quantization, per-layer accumulate, fixed-point
/// requantization with round-half-even, final raw logit accumulator.
pub fn oracle_logit_acc(mlp: &QuantizedMlp, bytes: &[u8]) -> i64 {
    let mut acts: Vec<i64> = bytes
        .iter()
        .map(|&b| {
            let x = f64::from(b) / 255.0;
            let q = (x / INPUT_SCALE).round_ties_even();
            q.clamp(0.0, 15.0) as i64
        })
        .collect();
    let mut in_scale = INPUT_SCALE;
    let last = mlp.layers().len() - 1;
    for (li, layer) in mlp.layers().iter().enumerate() {
        let mut next = Vec::with_capacity(layer.out_dim);
        for o in 0..layer.out_dim {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut acc = i64::from(layer.biases[o]);
            for (w, a) in row.iter().zip(&acts) {
                acc += i64::from(*w) * a;
            }
            if li == last {
                return acc;
            }
            let ratio = in_scale * layer.weight_scale / layer.activation_scale;
            let mult = (ratio * (1u64 << REQUANT_SHIFT) as f64).round_ties_even() as i128;
            let q = round_half_even_div(i128::from(acc) * mult, REQUANT_SHIFT);
            next.push(q.clamp(0, 15));
        }
        acts = next;
        in_scale = layer.activation_scale;
    }
    unreachable!("loop returns at the final layer");
}
