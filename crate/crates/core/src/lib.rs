//! Bit-accurate simulator of a CAN 2.0A receive datapath with an embedded
//! quantized-MLP intrusion detector.
//!
//! The crate models the path a frame takes through a receiving controller:
//! [`frame_codec`] turns frames into stuffed bus bit streams and back,
//! [`timing`] maps bit positions to bus time and controller clock cycles,
//! [`controller`] replays the receive-side signal sequence (header detect,
//! per-byte writes, feature collection, detector verdict), [`qnn`] is the
//! 4-bit quantized MLP that produces the verdict, [`traffic`] loads and
//! synthesizes labeled CAN traces, and [`harness`] replays traces end to end
//! and scores the detector.

pub mod config;
pub mod controller;
pub mod frame_codec;
pub mod harness;
pub mod qnn;
pub mod timing;
pub mod traffic;
