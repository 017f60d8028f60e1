//! Alice and Bob as blocking state machines.
//!
//! Per frame, after the pulses cross the link:
//!
//! 1. Bob -> `BASIS_ANNOUNCE` (clicks and bases)
//! 2. Alice -> `SIFT_MAP` (kept positions, chip carriers)
//! 3. Alice -> `SAMPLE_REQUEST`, Bob -> `SAMPLE_DISCLOSE`
//! 4. Alice -> `ABORT` if the QBER monitor trips, else `FRAME_META`
//! 5. Bob decodes and answers with `REPORT`
//! 6. Both sides commit the frame to their key pools.
//!
//! Chips ride only on signal pulses; decoy and vacuum pulses carry random
//! bits. Disclosed samples are erased before decoding and yield no key.

use super::ledger::{ledger_commit, FrameCommit, KeyLedger, KeyPool};
use super::link::{QuantumChannel, QuantumLink};
use super::phase::{encode_pulse, Basis};
use super::pipeline::{decode, preprocess, DecodeError, Frame, FrameParams, Masking, FRAME_BYTES};
use super::session::SessionConfig;
use super::sifting::{measure_pulse, sample_size, Decision, QberMonitor};
use super::transport::Transport;
use super::wire::{FrameStatus, Message};
use super::ProtocolError;
use crate::pulse_mc::PulseClass;
use crate::rng::SimRng;

const CLASS_STREAM: u64 = 0;
const PAYLOAD_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

/// Alice's view of a finished (or aborted) session.
#[derive(Debug, Clone, PartialEq)]
pub struct AliceSummary {
    pub pulses: u64,
    pub frames: u64,
    pub signal_sent: u64,
    pub signal_clicks: u64,
    pub kept_signal: u64,
    pub samples: u64,
    pub sample_errors: u64,
    pub frames_ok: u64,
    pub frames_lost: u64,
    pub frames_corrupt: u64,
    /// Frames Bob reported as decoded whose digest disagrees with the payload.
    pub digest_mismatches: u64,
    pub abort_reason: Option<String>,
    pub ledger: KeyLedger,
    pub payloads: Vec<[u8; FRAME_BYTES]>,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BobSummary {
    /// `(frame_id, payload)` for every frame that decoded.
    pub decoded: Vec<(u64, [u8; FRAME_BYTES])>,
    /// Pulses Bob discarded: no click or wrong basis.
    pub discarded: u64,
    pub aborted: bool,
    pub ledger: KeyLedger,
}

fn unexpected(want: &str, got: &Message) -> ProtocolError {
    ProtocolError::Unexpected(format!("expected {want}, got {}", got.name()))
}

fn masking(cfg: &SessionConfig) -> Masking {
    if cfg.settings.masking {
        Masking::keyed(cfg.seeds.mask)
    } else {
        Masking::none()
    }
}

fn check_frame(want: u64, got: u64) -> Result<(), ProtocolError> {
    if want == got {
        Ok(())
    } else {
        Err(ProtocolError::Unexpected(format!("message for frame {got} during frame {want}")))
    }
}

pub fn run_alice<T: Transport, L: QuantumLink>(
    cfg: &SessionConfig,
    transport: &mut T,
    link: &mut L,
) -> Result<AliceSummary, ProtocolError> {
    let s = &cfg.settings;
    let mut class_rng = SimRng::for_stream(cfg.seeds.alice, CLASS_STREAM);
    let mut payload_rng = SimRng::for_stream(cfg.seeds.alice, PAYLOAD_STREAM);
    let mut sample_rng = SimRng::for_stream(cfg.seeds.alice, SAMPLE_STREAM);
    let mut channel = QuantumChannel::new(cfg.eta, cfg.source, cfg.detector, cfg.loss.clone(), cfg.seeds.channel);
    let mut pool = KeyPool::new(s.initial_key_bits, cfg.seeds.key);
    let mut monitor = QberMonitor::new(s.threshold, s.check_block);
    let mask = masking(cfg);
    let mut sum = AliceSummary {
        pulses: 0,
        frames: 0,
        signal_sent: 0,
        signal_clicks: 0,
        kept_signal: 0,
        samples: 0,
        sample_errors: 0,
        frames_ok: 0,
        frames_lost: 0,
        frames_corrupt: 0,
        digest_mismatches: 0,
        abort_reason: None,
        ledger: *pool.ledger(),
        payloads: Vec::new(),
        bytes_sent: 0,
        bytes_received: 0,
    };

    let mut frame_id = 0u64;
    while !cfg.limits.reached(frame_id, sum.pulses) {
        let mut payload = [0u8; FRAME_BYTES];
        payload.iter_mut().for_each(|b| *b = payload_rng.next_u64() as u8);
        let frame = Frame::new(&payload, frame_id, s.fec_ratio, s.spread_ratio)?;
        let key = pool.take(frame.chip_count() as u64)?;
        let enc = preprocess(&frame, &key, &mask)?;

        let start = sum.pulses;
        let mut classes = Vec::with_capacity(enc.chips.len() * 11 / 10);
        let mut symbols = Vec::with_capacity(enc.chips.len() * 11 / 10);
        let mut next_chip = 0;
        while next_chip < enc.chips.len() {
            let class = PulseClass::draw(&cfg.source.mix_ratio, &mut class_rng);
            let basis = Basis::from_bit(class_rng.bit());
            let bit = if class == PulseClass::Signal {
                next_chip += 1;
                enc.chips[next_chip - 1]
            } else {
                class_rng.bit()
            };
            classes.push(class);
            symbols.push(encode_pulse(bit, basis));
        }
        let n = classes.len();
        link.send(channel.transmit(frame_id, start, &classes, &symbols))?;
        sum.pulses += n as u64;
        sum.frames += 1;

        let (clicks, bases) = match transport.recv()? {
            Message::BasisAnnounce { frame_id: f, start: st, clicks, bases } => {
                check_frame(frame_id, f)?;
                if st != start || clicks.len() != n || bases.len() != n {
                    return Err(ProtocolError::Unexpected("basis announcement does not cover the frame".into()));
                }
                (clicks, bases)
            }
            m => return Err(unexpected("BASIS_ANNOUNCE", &m)),
        };
        let carriers: Vec<bool> = classes.iter().map(|&c| c == PulseClass::Signal).collect();
        let kept: Vec<bool> = (0..n)
            .map(|i| clicks[i] && Basis::from_bit(u8::from(bases[i])) == symbols[i].basis)
            .collect();
        sum.signal_sent += enc.chips.len() as u64;
        sum.signal_clicks += (0..n).filter(|&i| carriers[i] && clicks[i]).count() as u64;
        transport.send(&Message::SiftMap {
            frame_id,
            start,
            kept: kept.clone(),
            carriers: carriers.clone(),
        })?;

        let kept_signal: Vec<usize> = (0..n).filter(|&i| kept[i] && carriers[i]).collect();
        let k = sample_size(kept_signal.len(), s.sample_fraction);
        let sampled: Vec<usize> = sample_rng
            .sample_indices(kept_signal.len(), k)
            .into_iter()
            .map(|j| kept_signal[j])
            .collect();
        transport.send(&Message::SampleRequest {
            frame_id,
            indices: sampled.iter().map(|&i| start + i as u64).collect(),
        })?;
        let disclosed = match transport.recv()? {
            Message::SampleDisclose { frame_id: f, bits } => {
                check_frame(frame_id, f)?;
                if bits.len() != k {
                    return Err(ProtocolError::Unexpected("wrong number of disclosed bits".into()));
                }
                bits
            }
            m => return Err(unexpected("SAMPLE_DISCLOSE", &m)),
        };
        let errors = sampled
            .iter()
            .zip(&disclosed)
            .filter(|(&i, &b)| symbols[i].bit != u8::from(b))
            .count() as u64;
        sum.samples += k as u64;
        sum.sample_errors += errors;

        if let Some((Decision::Abort, est)) = monitor.add(errors, k as u64) {
            let reason = format!(
                "sampled QBER {:.4} exceeds threshold {:.4} at frame {frame_id}",
                est, s.threshold
            );
            transport.send(&Message::Abort { reason: reason.clone() })?;
            sum.abort_reason = Some(reason);
            break;
        }

        transport.send(&Message::FrameMeta {
            frame_id,
            fec_ratio: s.fec_ratio,
            spread_ratio: s.spread_ratio,
            integrity_tag: enc.integrity_tag,
        })?;
        match transport.recv()? {
            Message::Report { frame_id: f, status, digest } => {
                check_frame(frame_id, f)?;
                match status {
                    FrameStatus::Ok => {
                        sum.frames_ok += 1;
                        sum.digest_mismatches += u64::from(digest != crc32fast::hash(&payload));
                    }
                    FrameStatus::Lost => sum.frames_lost += 1,
                    FrameStatus::Corrupt => sum.frames_corrupt += 1,
                }
            }
            m => return Err(unexpected("REPORT", &m)),
        }

        let retained: Vec<bool> = (0..n).filter(|&i| carriers[i]).map(|i| kept[i]).collect();
        sum.kept_signal += kept_signal.len() as u64;
        sum.ledger = ledger_commit(
            &mut pool,
            &FrameCommit {
                key_bits: &key,
                retained: &retained,
                fresh_bits: (kept_signal.len() - k) as u64,
            },
        )?;
        sum.payloads.push(payload);
        frame_id += 1;
    }
    sum.ledger = *pool.ledger();
    sum.bytes_sent = transport.bytes_sent();
    sum.bytes_received = transport.bytes_received();
    Ok(sum)
}

pub fn run_bob<T: Transport, L: QuantumLink>(
    cfg: &SessionConfig,
    transport: &mut T,
    link: &mut L,
) -> Result<BobSummary, ProtocolError> {
    let s = &cfg.settings;
    let mut basis_rng = SimRng::seed_from_u64(cfg.seeds.bob);
    let mut pool = KeyPool::new(s.initial_key_bits, cfg.seeds.key);
    let mask = masking(cfg);
    let mut sum = BobSummary {
        decoded: Vec::new(),
        discarded: 0,
        aborted: false,
        ledger: *pool.ledger(),
    };

    while let Some(batch) = link.recv()? {
        let frame_id = batch.frame_id;
        let start = batch.start;
        let n = batch.pulses.len();
        let records: Vec<_> = batch
            .pulses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let basis = Basis::from_bit(basis_rng.bit());
                measure_pulse(start + i as u64, &p.symbol, basis, p.outcome, p.coin)
            })
            .collect();
        sum.discarded += records.iter().filter(|r| !r.kept).count() as u64;
        transport.send(&Message::BasisAnnounce {
            frame_id,
            start,
            clicks: records.iter().map(|r| r.clicked).collect(),
            bases: records.iter().map(|r| r.bob_basis == Basis::X).collect(),
        })?;

        let (kept, carriers) = match transport.recv()? {
            Message::SiftMap { frame_id: f, start: st, kept, carriers } => {
                check_frame(frame_id, f)?;
                if st != start || kept.len() != n || carriers.len() != n {
                    return Err(ProtocolError::Unexpected("sift map does not cover the frame".into()));
                }
                (kept, carriers)
            }
            m => return Err(unexpected("SIFT_MAP", &m)),
        };
        // The simulation can afford to check that both sides agree on the
        // discard set: exactly the no-click and basis-mismatch pulses.
        if let Some(i) = (0..n).find(|&i| kept[i] != records[i].kept) {
            return Err(ProtocolError::Unexpected(format!(
                "sift map disagrees with measurement at pulse {}",
                start + i as u64
            )));
        }

        let mut disclosed = vec![false; n];
        let indices = match transport.recv()? {
            Message::SampleRequest { frame_id: f, indices } => {
                check_frame(frame_id, f)?;
                indices
            }
            m => return Err(unexpected("SAMPLE_REQUEST", &m)),
        };
        let mut bits = Vec::with_capacity(indices.len());
        for idx in indices {
            let i = idx
                .checked_sub(start)
                .filter(|&i| (i as usize) < n && kept[i as usize])
                .ok_or_else(|| ProtocolError::Unexpected(format!("sample index {idx} is not a kept pulse")))?
                as usize;
            disclosed[i] = true;
            bits.push(records[i].bob_bit == 1);
        }
        let k = bits.len();
        transport.send(&Message::SampleDisclose { frame_id, bits })?;

        let (params, tag) = match transport.recv()? {
            Message::Abort { .. } => {
                sum.aborted = true;
                break;
            }
            Message::FrameMeta { frame_id: f, fec_ratio, spread_ratio, integrity_tag } => {
                check_frame(frame_id, f)?;
                (FrameParams { frame_id, fec_ratio, spread_ratio }, integrity_tag)
            }
            m => return Err(unexpected("FRAME_META", &m)),
        };
        let chip_pulses: Vec<usize> = (0..n).filter(|&i| carriers[i]).collect();
        if chip_pulses.len() != params.chip_count() {
            return Err(ProtocolError::Unexpected(format!(
                "{} carriers for {} chips",
                chip_pulses.len(),
                params.chip_count()
            )));
        }
        let key = pool.take(params.chip_count() as u64)?;
        let received: Vec<Option<u8>> = chip_pulses
            .iter()
            .map(|&i| (kept[i] && !disclosed[i]).then_some(records[i].bob_bit))
            .collect();
        let (status, digest) = match decode(&received, &params, &key, &mask, tag) {
            Ok(p) => {
                sum.decoded.push((frame_id, p));
                (FrameStatus::Ok, crc32fast::hash(&p))
            }
            Err(DecodeError::FrameLost { .. }) => (FrameStatus::Lost, 0),
            Err(DecodeError::FrameCorrupt) => (FrameStatus::Corrupt, 0),
        };
        transport.send(&Message::Report { frame_id, status, digest })?;

        let retained: Vec<bool> = chip_pulses.iter().map(|&i| kept[i]).collect();
        let kept_signal = chip_pulses.iter().filter(|&&i| kept[i]).count();
        sum.ledger = ledger_commit(
            &mut pool,
            &FrameCommit {
                key_bits: &key,
                retained: &retained,
                fresh_bits: (kept_signal - k) as u64,
            },
        )?;
    }
    sum.ledger = *pool.ledger();
    Ok(sum)
}
