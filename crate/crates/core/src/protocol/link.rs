//! Simulated quantum link between the endpoints.
//!
//! The sender applies the channel (loss schedule plus detector model) and
//! ships the detector-side result of every pulse. Bob still picks his own
//! bases; the phase is passed along only so that [`measure_pulse`] can
//! resolve matched-basis outcomes.
//!
//! [`measure_pulse`]: super::sifting::measure_pulse

use std::io::{ErrorKind, Read, Write};
use std::sync::mpsc::{channel, Receiver, Sender};

use serde::{Deserialize, Serialize};

use super::phase::{Phase, PhaseSymbol};
use super::transport::io_err;
use super::wire::{encode_frame, FrameDecoder};
use super::ProtocolError;
use crate::optics::JitterSpec;
use crate::pulse_mc::{ClickModel, ClickOutcome, PulseClass};
use crate::rate::{DetectorConfig, SourceConfig};
use crate::rng::SimRng;

/// Frame type of pulse batches on a stream link. Outside the classical
/// message space on purpose: the link is a separate connection.
pub const PULSE_BATCH: u8 = 0x80;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrivedPulse {
    pub symbol: PhaseSymbol,
    pub outcome: ClickOutcome,
    /// Outcome of a wrong-basis measurement.
    pub coin: u8,
}

impl ArrivedPulse {
    /// Bits 0-1 phase, 2 click, 3 error, 4 coin.
    pub fn to_byte(self) -> u8 {
        self.symbol.phase.quarter_turns()
            | u8::from(self.outcome.clicked) << 2
            | u8::from(self.outcome.error) << 3
            | (self.coin & 1) << 4
    }

    pub fn from_byte(b: u8) -> Self {
        Self {
            symbol: PhaseSymbol::from_phase(Phase::from_quarter_turns(b & 3)),
            outcome: ClickOutcome {
                clicked: b & 4 != 0,
                error: b & 8 != 0,
            },
            coin: (b >> 4) & 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PulseBatch {
    pub frame_id: u64,
    /// Global index of the first pulse.
    pub start: u64,
    pub pulses: Vec<ArrivedPulse>,
}

/// Extra loss on top of the base transmittance, in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LossSchedule {
    Static,
    /// Bounded random excursion, stepped once per frame.
    Jitter(JitterSpec),
    /// Extra loss per frame index; frames past the end get none.
    Scripted(Vec<f64>),
}

/// Channel plus detector, driven by its own seeded generator.
#[derive(Debug, Clone)]
pub struct QuantumChannel {
    base_eta: f64,
    src: SourceConfig,
    det: DetectorConfig,
    schedule: LossSchedule,
    rng: SimRng,
    excursion_db: f64,
}

impl QuantumChannel {
    pub fn new(base_eta: f64, src: SourceConfig, det: DetectorConfig, schedule: LossSchedule, seed: u64) -> Self {
        Self {
            base_eta,
            src,
            det,
            schedule,
            rng: SimRng::seed_from_u64(seed),
            excursion_db: 0.0,
        }
    }

    pub fn extra_loss_db(&self, frame_id: u64) -> f64 {
        match &self.schedule {
            LossSchedule::Static => 0.0,
            LossSchedule::Jitter(_) => self.excursion_db,
            LossSchedule::Scripted(v) => v.get(frame_id as usize).copied().unwrap_or(0.0),
        }
    }

    pub fn frame_eta(&self, frame_id: u64) -> f64 {
        self.base_eta * 10f64.powf(-self.extra_loss_db(frame_id) / 10.0)
    }

    /// Sends one frame's pulses through the channel.
    pub fn transmit(
        &mut self,
        frame_id: u64,
        start: u64,
        classes: &[PulseClass],
        symbols: &[PhaseSymbol],
    ) -> PulseBatch {
        let model = ClickModel::new(self.frame_eta(frame_id), &self.src, &self.det);
        let pulses = classes
            .iter()
            .zip(symbols)
            .map(|(&class, &symbol)| {
                let outcome = model.sample(class, &mut self.rng);
                let coin = if outcome.clicked { self.rng.bit() } else { 0 };
                ArrivedPulse { symbol, outcome, coin }
            })
            .collect();
        if let LossSchedule::Jitter(spec) = &self.schedule {
            let dt = classes.len() as f64 / (self.src.rep_rate * self.src.duty_cycle);
            self.excursion_db = spec.step(self.excursion_db, dt, &mut self.rng);
        }
        PulseBatch { frame_id, start, pulses }
    }
}

pub trait QuantumLink {
    fn send(&mut self, batch: PulseBatch) -> Result<(), ProtocolError>;
    /// Next batch, or `None` once the sender has closed the link.
    fn recv(&mut self) -> Result<Option<PulseBatch>, ProtocolError>;
}

/// Sending half of an in-process link.
#[derive(Debug)]
pub struct LinkSender(Sender<PulseBatch>);

/// Receiving half of an in-process link.
#[derive(Debug)]
pub struct LinkReceiver(Receiver<PulseBatch>);

pub fn link_pair() -> (LinkSender, LinkReceiver) {
    let (tx, rx) = channel();
    (LinkSender(tx), LinkReceiver(rx))
}

impl QuantumLink for LinkSender {
    fn send(&mut self, batch: PulseBatch) -> Result<(), ProtocolError> {
        self.0.send(batch).map_err(|_| ProtocolError::TransportClosed)
    }

    fn recv(&mut self) -> Result<Option<PulseBatch>, ProtocolError> {
        Err(ProtocolError::Io("recv on the sending half of a link".into()))
    }
}

impl QuantumLink for LinkReceiver {
    fn send(&mut self, _: PulseBatch) -> Result<(), ProtocolError> {
        Err(ProtocolError::Io("send on the receiving half of a link".into()))
    }

    fn recv(&mut self) -> Result<Option<PulseBatch>, ProtocolError> {
        Ok(self.0.recv().ok())
    }
}

/// Link over a byte stream: one byte per pulse inside a length-prefixed frame.
#[derive(Debug)]
pub struct StreamLink<S> {
    stream: S,
    decoder: FrameDecoder,
}

impl<S: Read + Write> StreamLink<S> {
    pub fn new(stream: S) -> Self {
        Self {
            stream,
            decoder: FrameDecoder::new(),
        }
    }
}

impl<S: Read + Write> QuantumLink for StreamLink<S> {
    fn send(&mut self, batch: PulseBatch) -> Result<(), ProtocolError> {
        let mut payload = Vec::with_capacity(16 + batch.pulses.len());
        payload.extend_from_slice(&batch.frame_id.to_be_bytes());
        payload.extend_from_slice(&batch.start.to_be_bytes());
        payload.extend(batch.pulses.iter().map(|p| p.to_byte()));
        self.stream.write_all(&encode_frame(PULSE_BATCH, &payload)).map_err(io_err)?;
        self.stream.flush().map_err(io_err)
    }

    fn recv(&mut self) -> Result<Option<PulseBatch>, ProtocolError> {
        let mut buf = [0u8; 64 * 1024];
        loop {
            if let Some((ty, p)) = self.decoder.next_frame()? {
                if ty != PULSE_BATCH || p.len() < 16 {
                    return Err(ProtocolError::Unexpected(format!("link frame type 0x{ty:02x}")));
                }
                return Ok(Some(PulseBatch {
                    frame_id: u64::from_be_bytes(p[..8].try_into().unwrap()),
                    start: u64::from_be_bytes(p[8..16].try_into().unwrap()),
                    pulses: p[16..].iter().map(|&b| ArrivedPulse::from_byte(b)).collect(),
                }));
            }
            match self.stream.read(&mut buf) {
                Ok(0) if self.decoder.buffered() == 0 => return Ok(None),
                Ok(0) => return Err(ProtocolError::TransportClosed),
                Ok(n) => self.decoder.push(&buf[..n]),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(io_err(e)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::phase::{encode_pulse, Basis};
    use crate::rate::fixtures;

    #[test]
    fn pulse_byte_roundtrip() {
        for b in 0u8..32 {
            let p = ArrivedPulse::from_byte(b);
            if p.outcome.clicked || b & 0b11000 == 0 {
                assert_eq!(p.to_byte(), b);
            }
        }
    }

    #[test]
    fn scripted_loss_applies_per_frame() {
        let ch = QuantumChannel::new(
            0.5,
            fixtures::source(),
            fixtures::detector(),
            LossSchedule::Scripted(vec![0.0, 10.0]),
            1,
        );
        assert_eq!(ch.frame_eta(0), 0.5);
        assert!((ch.frame_eta(1) - 0.05).abs() < 1e-12);
        assert_eq!(ch.frame_eta(2), 0.5);
    }

    #[test]
    fn stream_link_roundtrip() {
        let mut ch = QuantumChannel::new(0.3, fixtures::source(), fixtures::detector(), LossSchedule::Static, 9);
        let classes = vec![PulseClass::Signal; 500];
        let symbols: Vec<_> = (0..500).map(|i| encode_pulse((i % 2) as u8, Basis::from_bit((i / 2) as u8))).collect();
        let batch = ch.transmit(4, 1000, &classes, &symbols);
        let mut buf = Vec::new();
        StreamLink::new(std::io::Cursor::new(&mut buf)).send(batch.clone()).unwrap();
        let mut rx = StreamLink::new(std::io::Cursor::new(buf));
        assert_eq!(rx.recv().unwrap(), Some(batch));
        assert_eq!(rx.recv().unwrap(), None);
    }

    #[test]
    fn jitter_stays_bounded() {
        let spec = JitterSpec {
            max_db: 3.0,
            volatility: 50.0,
            reversion: 1.0,
        };
        let mut ch = QuantumChannel::new(0.5, fixtures::source(), fixtures::detector(), LossSchedule::Jitter(spec), 3);
        for f in 0..200 {
            ch.transmit(f, 0, &[PulseClass::Signal; 10], &[encode_pulse(0, Basis::Z); 10]);
            assert!(ch.extra_loss_db(f).abs() <= 3.0);
        }
    }
}
