//! Synthetic labeled traffic: a periodic benign fleet with injected attacks.
//!
//! Benign traffic comes from a fixed table of ECUs, each broadcasting one
//! identifier at a fixed period with slowly varying counter-based payloads
//! whose bytes stay below 0x40. Attack frames are interleaved by a seeded
//! Bernoulli draw per emitted frame, so the injected fraction converges on
//! the configured rate. All output is deterministic in the seed.

use super::{Label, TraceRecord};
use crate::frame_codec::CanFrame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use thiserror::Error;

/// One periodic benign transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EcuProfile {
    pub id: u16,
    pub period_us: u64,
    pub dlc: u8,
}

/// A plausible passenger-car broadcast set: ten identifiers spanning 10 ms
/// to 500 ms periods.
#[must_use]
pub fn default_fleet() -> Vec<EcuProfile> {
    vec![
        EcuProfile { id: 0x043, period_us: 10_000, dlc: 8 },
        EcuProfile { id: 0x0F0, period_us: 10_000, dlc: 8 },
        EcuProfile { id: 0x130, period_us: 20_000, dlc: 6 },
        EcuProfile { id: 0x131, period_us: 20_000, dlc: 8 },
        EcuProfile { id: 0x140, period_us: 20_000, dlc: 8 },
        EcuProfile { id: 0x260, period_us: 50_000, dlc: 8 },
        EcuProfile { id: 0x2A0, period_us: 50_000, dlc: 4 },
        EcuProfile { id: 0x316, period_us: 100_000, dlc: 8 },
        EcuProfile { id: 0x43F, period_us: 200_000, dlc: 8 },
        EcuProfile { id: 0x545, period_us: 500_000, dlc: 2 },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    /// Highest-priority flood: identifier 0x000, eight zero bytes.
    DosFlood,
    /// Uniform random identifier, DLC and payload.
    Fuzzing,
    /// Frames on a legitimate identifier with payload bytes in 0xA0..=0xFF,
    /// far outside the benign byte range.
    Malfunction,
    /// Replay of the victim's most recent benign frame.
    Flooding,
}

impl AttackKind {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::DosFlood => "dos_flood",
            AttackKind::Fuzzing => "fuzzing",
            AttackKind::Malfunction => "malfunction",
            AttackKind::Flooding => "flooding",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dos_flood" | "dos" => Ok(AttackKind::DosFlood),
            "fuzzing" => Ok(AttackKind::Fuzzing),
            "malfunction" => Ok(AttackKind::Malfunction),
            "flooding" => Ok(AttackKind::Flooding),
            other => Err(format!(
                "unknown attack {other:?}, expected dos_flood, fuzzing, malfunction or flooding"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackProfile {
    pub kind: AttackKind,
    /// Expected fraction of emitted frames that are attacks, in [0, 1].
    pub injection_rate: f64,
    /// Victim identifier for malfunction and flooding; defaults to the
    /// first fleet entry.
    pub target_id: Option<u16>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("benign fleet is empty")]
    EmptyFleet,
    #[error("injection rate {rate} must lie in [0, 1]")]
    InvalidRate { rate: f64 },
    #[error("no attack profiles supplied")]
    NoAttacks,
}

fn benign_payload(ecu: &EcuProfile, counter: u64) -> [u8; 8] {
    let mut p = [0u8; 8];
    for (j, slot) in p.iter_mut().enumerate().take(ecu.dlc as usize) {
        *slot = match j {
            0 => (counter & 0x3F) as u8,
            1 => ((counter >> 6) & 0x3F) as u8,
            _ => ((ecu.id as u64 + j as u64 * 7) & 0x3F) as u8,
        };
    }
    p
}

fn benign_frame(ecu: &EcuProfile, counter: u64) -> CanFrame {
    let payload = benign_payload(ecu, counter);
    CanFrame::new(ecu.id, &payload[..ecu.dlc as usize]).expect("fleet entries are valid frames")
}

/// Generate `total` frames of mixed benign and attack traffic.
pub fn synthesize(
    fleet: &[EcuProfile],
    profile: &AttackProfile,
    total: usize,
) -> Result<Vec<TraceRecord>, SynthError> {
    if fleet.is_empty() {
        return Err(SynthError::EmptyFleet);
    }
    let rate = profile.injection_rate;
    if !rate.is_finite() || !(0.0..=1.0).contains(&rate) {
        return Err(SynthError::InvalidRate { rate });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(profile.seed);
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = fleet
        .iter()
        .enumerate()
        .map(|(k, _)| Reverse(((k as u64 + 1) * 311, k)))
        .collect();
    let mut counters = vec![0u64; fleet.len()];
    let victim_id = profile.target_id.unwrap_or(fleet[0].id);
    let victim = fleet
        .iter()
        .find(|e| e.id == victim_id)
        .copied()
        .unwrap_or(EcuProfile {
            id: victim_id,
            period_us: 100_000,
            dlc: 8,
        });
    let mut last_victim_frame = benign_frame(&victim, 0);

    let mut out = Vec::with_capacity(total);
    let mut last_us = 0u64;
    while out.len() < total {
        if rng.gen::<f64>() < rate {
            let timestamp_us = last_us + rng.gen_range(50..150);
            let frame = match profile.kind {
                AttackKind::DosFlood => {
                    CanFrame::new(0x000, &[0u8; 8]).expect("constant frame is valid")
                }
                AttackKind::Fuzzing => {
                    let id = rng.gen_range(0..=0x7FF);
                    let dlc = rng.gen_range(0..=8usize);
                    let payload: Vec<u8> = (0..dlc).map(|_| rng.gen()).collect();
                    CanFrame::new(id, &payload).expect("fuzz fields are in range")
                }
                AttackKind::Malfunction => {
                    let payload: Vec<u8> = (0..victim.dlc as usize)
                        .map(|_| rng.gen_range(0xA0..=0xFF))
                        .collect();
                    CanFrame::new(victim.id, &payload).expect("victim fields are in range")
                }
                AttackKind::Flooding => last_victim_frame,
            };
            out.push(TraceRecord {
                timestamp_us,
                frame,
                label: Label::Attack,
            });
            last_us = timestamp_us;
        } else {
            let Reverse((scheduled, k)) = heap.pop().expect("fleet is non-empty");
            let timestamp_us = scheduled.max(last_us);
            let frame = benign_frame(&fleet[k], counters[k]);
            counters[k] += 1;
            if fleet[k].id == victim_id {
                last_victim_frame = frame;
            }
            out.push(TraceRecord {
                timestamp_us,
                frame,
                label: Label::Benign,
            });
            heap.push(Reverse((scheduled + fleet[k].period_us, k)));
            last_us = timestamp_us;
        }
    }
    Ok(out)
}

/// Stitch one phase per attack profile into a single trace of `total`
/// frames, phases separated by a 10 ms quiet gap.
pub fn synthesize_mixed(
    fleet: &[EcuProfile],
    profiles: &[AttackProfile],
    total: usize,
) -> Result<Vec<TraceRecord>, SynthError> {
    if profiles.is_empty() {
        return Err(SynthError::NoAttacks);
    }
    let base = total / profiles.len();
    let extra = total % profiles.len();
    let mut out = Vec::with_capacity(total);
    let mut offset = 0u64;
    for (i, profile) in profiles.iter().enumerate() {
        let quota = base + usize::from(i < extra);
        let phase = synthesize(fleet, profile, quota)?;
        if let Some(last) = phase.last() {
            let phase_end = last.timestamp_us;
            out.extend(phase.into_iter().map(|mut r| {
                r.timestamp_us += offset;
                r
            }));
            offset += phase_end + 10_000;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame_codec::encode_frame;

    fn profile(kind: AttackKind, rate: f64, seed: u64) -> AttackProfile {
        AttackProfile {
            kind,
            injection_rate: rate,
            target_id: None,
            seed,
        }
    }

    #[test]
    fn same_seed_reproduces_the_trace() {
        let fleet = default_fleet();
        let p = profile(AttackKind::Fuzzing, 0.3, 99);
        let a = synthesize(&fleet, &p, 2_000).unwrap();
        let b = synthesize(&fleet, &p, 2_000).unwrap();
        assert_eq!(a, b);
        let c = synthesize(&fleet, &profile(AttackKind::Fuzzing, 0.3, 100), 2_000).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn injection_rate_converges() {
        let fleet = default_fleet();
        let trace = synthesize(&fleet, &profile(AttackKind::DosFlood, 0.3, 7), 10_000).unwrap();
        let attacks = trace.iter().filter(|r| r.label.is_attack()).count();
        let rate = attacks as f64 / trace.len() as f64;
        assert!((rate - 0.3).abs() <= 0.02, "observed rate {rate}");
    }

    #[test]
    fn dos_frames_are_top_priority_zeros() {
        let fleet = default_fleet();
        let trace = synthesize(&fleet, &profile(AttackKind::DosFlood, 0.4, 3), 3_000).unwrap();
        for r in trace.iter().filter(|r| r.label.is_attack()) {
            assert_eq!(r.frame.id(), 0x000);
            assert_eq!(r.frame.payload(), &[0u8; 8]);
        }
    }

    #[test]
    fn benign_payload_bytes_stay_below_the_attack_band() {
        let fleet = default_fleet();
        let trace = synthesize(&fleet, &profile(AttackKind::Malfunction, 0.2, 5), 5_000).unwrap();
        for r in &trace {
            if r.label == Label::Benign {
                assert!(r.frame.payload().iter().all(|b| *b < 0x40));
            }
        }
    }

    #[test]
    fn malfunction_hits_the_target_with_high_bytes() {
        let fleet = default_fleet();
        let p = AttackProfile {
            kind: AttackKind::Malfunction,
            injection_rate: 0.25,
            target_id: Some(0x316),
            seed: 11,
        };
        let trace = synthesize(&fleet, &p, 4_000).unwrap();
        let attacks: Vec<_> = trace.iter().filter(|r| r.label.is_attack()).collect();
        assert!(!attacks.is_empty());
        for r in attacks {
            assert_eq!(r.frame.id(), 0x316);
            assert!(r.frame.payload().iter().all(|b| *b >= 0xA0));
        }
    }

    #[test]
    fn flooding_replays_recent_victim_content() {
        let fleet = default_fleet();
        let p = AttackProfile {
            kind: AttackKind::Flooding,
            injection_rate: 0.2,
            target_id: Some(0x043),
            seed: 13,
        };
        let trace = synthesize(&fleet, &p, 4_000).unwrap();
        for r in trace.iter().filter(|r| r.label.is_attack()) {
            assert_eq!(r.frame.id(), 0x043);
            assert!(r.frame.payload().iter().all(|b| *b < 0x40), "replayed benign bytes");
        }
    }

    #[test]
    fn every_frame_is_encodable_and_time_ordered() {
        let fleet = default_fleet();
        let trace = synthesize(&fleet, &profile(AttackKind::Fuzzing, 0.35, 21), 5_000).unwrap();
        let mut last = 0u64;
        for r in &trace {
            let stream = encode_frame(&r.frame);
            assert!(!stream.is_empty());
            assert!(r.timestamp_us >= last, "timestamps never run backwards");
            last = r.timestamp_us;
        }
    }

    #[test]
    fn all_fleet_ids_eventually_appear() {
        let fleet = default_fleet();
        let trace = synthesize(&fleet, &profile(AttackKind::DosFlood, 0.0, 1), 5_000).unwrap();
        for ecu in &fleet {
            assert!(
                trace.iter().any(|r| r.frame.id() == ecu.id),
                "id {:#05x} missing",
                ecu.id
            );
        }
    }

    #[test]
    fn mixed_traces_carry_each_attack_phase() {
        let fleet = default_fleet();
        let profiles = [
            profile(AttackKind::DosFlood, 0.3, 40),
            profile(AttackKind::Fuzzing, 0.3, 41),
        ];
        let trace = synthesize_mixed(&fleet, &profiles, 1_001).unwrap();
        assert_eq!(trace.len(), 1_001);
        let dos = trace
            .iter()
            .filter(|r| r.label.is_attack() && r.frame.id() == 0)
            .count();
        let fuzz = trace
            .iter()
            .filter(|r| r.label.is_attack() && r.frame.id() != 0)
            .count();
        assert!(dos > 0, "dos phase missing");
        assert!(fuzz > 0, "fuzzing phase missing");
        let mut last = 0u64;
        for r in &trace {
            assert!(r.timestamp_us >= last);
            last = r.timestamp_us;
        }
        assert!(matches!(
            synthesize_mixed(&fleet, &[], 100),
            Err(SynthError::NoAttacks)
        ));
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let fleet = default_fleet();
        assert_eq!(
            synthesize(&[], &profile(AttackKind::DosFlood, 0.1, 0), 10),
            Err(SynthError::EmptyFleet)
        );
        assert_eq!(
            synthesize(&fleet, &profile(AttackKind::DosFlood, 1.5, 0), 10),
            Err(SynthError::InvalidRate { rate: 1.5 })
        );
        assert!(
            synthesize(&fleet, &profile(AttackKind::DosFlood, f64::NAN, 0), 10)
                .unwrap_err()
                .to_string()
                .contains("injection rate")
        );
    }
}
