//! Session configuration, reporting and drivers (in-process and TCP).

use std::net::{TcpListener, TcpStream, ToSocketAddrs};

use serde::{Deserialize, Serialize};

use super::endpoint::{run_alice, run_bob, AliceSummary, BobSummary};
use super::ledger::KeyLedger;
use super::link::{link_pair, LossSchedule, StreamLink};
use super::transport::{loopback_pair, StreamTransport};
use super::ProtocolError;
use crate::rate::{DetectorConfig, SourceConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSettings {
    pub fec_ratio: u32,
    pub spread_ratio: u32,
    /// QBER abort threshold.
    pub threshold: f64,
    /// Fraction of kept signal records disclosed per frame.
    pub sample_fraction: f64,
    /// Samples pooled before each abort decision.
    pub check_block: u64,
    pub initial_key_bits: u64,
    pub masking: bool,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        Self {
            fec_ratio: 1,
            spread_ratio: 1920,
            threshold: 0.05,
            sample_fraction: 0.1,
            check_block: 2000,
            initial_key_bits: 1 << 23,
            masking: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSeeds {
    pub alice: u64,
    pub bob: u64,
    pub channel: u64,
    pub mask: u64,
    pub key: u64,
}

impl SessionSeeds {
    /// Distinct seeds derived from one master seed.
    pub fn from_master(seed: u64) -> Self {
        use crate::rng::split_seed;
        Self {
            alice: split_seed(seed, 0),
            bob: split_seed(seed, 1),
            channel: split_seed(seed, 2),
            mask: split_seed(seed, 3),
            key: split_seed(seed, 4),
        }
    }
}

/// The session stops before starting a frame once either limit is reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SessionLimits {
    pub max_frames: Option<u64>,
    pub max_pulses: Option<u64>,
}

impl SessionLimits {
    pub fn reached(&self, frames: u64, pulses: u64) -> bool {
        self.max_frames.is_some_and(|m| frames >= m) || self.max_pulses.is_some_and(|m| pulses >= m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub source: SourceConfig,
    pub detector: DetectorConfig,
    /// End-to-end transmittance including receiver optics and detector.
    pub eta: f64,
    pub settings: ProtocolSettings,
    pub loss: LossSchedule,
    pub seeds: SessionSeeds,
    pub limits: SessionLimits,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::InvalidConfig(m));
        self.source.validate().map_err(|e| ProtocolError::InvalidConfig(e.to_string()))?;
        self.detector.validate().map_err(|e| ProtocolError::InvalidConfig(e.to_string()))?;
        let s = &self.settings;
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta = {} outside [0, 1]", self.eta));
        }
        if s.fec_ratio == 0 || s.spread_ratio == 0 {
            return bad("fec_ratio and spread_ratio must be >= 1".into());
        }
        super::sifting::check_sample_fraction(s.sample_fraction)?;
        if !(0.0..=1.0).contains(&s.threshold) {
            return bad(format!("threshold = {} outside [0, 1]", s.threshold));
        }
        if let LossSchedule::Jitter(j) = &self.loss {
            j.validate().map_err(|e| ProtocolError::InvalidConfig(e.to_string()))?;
        }
        if self.limits.max_frames.is_none() && self.limits.max_pulses.is_none() {
            return bad("a frame or pulse limit is required".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    /// Error fraction over all disclosed samples.
    pub qber: f64,
    pub qber_se: f64,
    pub samples: u64,
    pub pulses: u64,
    pub frames: u64,
    /// Measured signal gain.
    pub q_mu_hat: f64,
    /// Simulated seconds: pulses / (rep_rate * duty_cycle).
    pub sim_time: f64,
    /// Delivered message bits per second.
    pub comm_rate: f64,
    pub key_gen_rate: f64,
    /// Net key consumption, (consumed - recycled) per second.
    pub key_cons_rate: f64,
    pub p_rec_empirical: f64,
    /// `1 - q_mu_hat / 2`.
    pub p_rec_expected: f64,
    pub frames_ok: u64,
    pub frames_failed: u64,
    pub frames_lost: u64,
    pub frames_corrupt: u64,
    /// Decoded frames whose payload differs from what Alice sent.
    pub payload_mismatches: u64,
    pub aborted: bool,
    pub abort_reason: Option<String>,
    pub ledger: KeyLedger,
    pub classical_bytes: u64,
}

impl SessionReport {
    fn build(cfg: &SessionConfig, a: &AliceSummary, payload_mismatches: u64) -> Self {
        let sim_time = a.pulses as f64 / (cfg.source.rep_rate * cfg.source.duty_cycle);
        let per_s = |x: u64| if sim_time > 0.0 { x as f64 / sim_time } else { 0.0 };
        let q_mu_hat = if a.signal_sent > 0 {
            a.signal_clicks as f64 / a.signal_sent as f64
        } else {
            0.0
        };
        let qber = if a.samples > 0 {
            a.sample_errors as f64 / a.samples as f64
        } else {
            0.0
        };
        Self {
            qber,
            qber_se: if a.samples > 0 {
                (qber * (1.0 - qber) / a.samples as f64).sqrt()
            } else {
                0.0
            },
            samples: a.samples,
            pulses: a.pulses,
            frames: a.frames,
            q_mu_hat,
            sim_time,
            comm_rate: per_s(a.frames_ok * super::pipeline::FRAME_BITS as u64),
            key_gen_rate: per_s(a.ledger.generated),
            key_cons_rate: per_s(a.ledger.net_consumed()),
            p_rec_empirical: a.ledger.p_rec(),
            p_rec_expected: 1.0 - q_mu_hat / 2.0,
            frames_ok: a.frames_ok,
            frames_failed: a.frames_lost + a.frames_corrupt,
            frames_lost: a.frames_lost,
            frames_corrupt: a.frames_corrupt,
            payload_mismatches,
            aborted: a.abort_reason.is_some(),
            abort_reason: a.abort_reason.clone(),
            ledger: a.ledger,
            classical_bytes: a.bytes_sent + a.bytes_received,
        }
    }
}

fn finish(cfg: &SessionConfig, alice: AliceSummary, bob: Option<&BobSummary>) -> Result<SessionReport, ProtocolError> {
    let mismatches = match bob {
        Some(b) => b
            .decoded
            .iter()
            .filter(|(f, p)| alice.payloads.get(*f as usize) != Some(p))
            .count() as u64,
        None => alice.digest_mismatches,
    };
    let report = SessionReport::build(cfg, &alice, mismatches);
    match &report.abort_reason {
        Some(reason) => Err(ProtocolError::Aborted {
            reason: reason.clone(),
            report: Box::new(report),
        }),
        None => Ok(report),
    }
}

/// Runs both endpoints on scoped threads over an in-process transport.
pub fn run_session(cfg: &SessionConfig) -> Result<SessionReport, ProtocolError> {
    cfg.validate()?;
    let (mut ta, mut tb) = loopback_pair();
    let (mut la, mut lb) = link_pair();
    let (alice, bob) = std::thread::scope(|s| {
        let bob = s.spawn(move || run_bob(cfg, &mut tb, &mut lb));
        let alice = run_alice(cfg, &mut ta, &mut la);
        // Closing the link ends Bob's loop.
        drop(la);
        drop(ta);
        (alice, bob.join().expect("bob thread panicked"))
    });
    let (alice, bob) = match (alice, bob) {
        (Ok(a), Ok(b)) => (a, b),
        // A failing Bob shows up on Alice's side as a closed transport.
        (Err(ProtocolError::TransportClosed), Err(e)) | (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    finish(cfg, alice, Some(&bob))
}

/// Alice side of a cross-process session: classical connection first, then
/// the quantum link.
pub fn run_alice_tcp<A: ToSocketAddrs>(cfg: &SessionConfig, addr: A) -> Result<SessionReport, ProtocolError> {
    cfg.validate()?;
    let addrs: Vec<_> = addr.to_socket_addrs().map_err(super::transport::io_err)?.collect();
    let classical = TcpStream::connect(&addrs[..]).map_err(super::transport::io_err)?;
    let quantum = TcpStream::connect(&addrs[..]).map_err(super::transport::io_err)?;
    classical.set_nodelay(true).ok();
    let mut t = StreamTransport::new(classical);
    let mut l = StreamLink::new(quantum);
    let alice = run_alice(cfg, &mut t, &mut l)?;
    drop(l);
    finish(cfg, alice, None)
}

/// Bob side of a cross-process session: accepts the classical connection,
/// then the quantum link.
pub fn run_bob_tcp(cfg: &SessionConfig, listener: &TcpListener) -> Result<BobSummary, ProtocolError> {
    cfg.validate()?;
    let (classical, _) = listener.accept().map_err(super::transport::io_err)?;
    let (quantum, _) = listener.accept().map_err(super::transport::io_err)?;
    classical.set_nodelay(true).ok();
    let mut t = StreamTransport::new(classical);
    let mut l = StreamLink::new(quantum);
    run_bob(cfg, &mut t, &mut l)
}
