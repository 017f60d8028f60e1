//! Message transmission with in-band key distribution and key recycling.
//!
//! Alice encrypts each 125-byte frame with key bits from a pre-shared pool,
//! sends it chip by chip on four-phase weak coherent pulses, and both sides
//! return to the pool every key bit whose chip Bob never kept. Fresh key from
//! the retained pulses tops the pool up.

pub mod endpoint;
pub mod ledger;
pub mod link;
pub mod phase;
pub mod pipeline;
pub mod session;
pub mod sifting;
pub mod transport;
pub mod wire;

use thiserror::Error;

pub use endpoint::{run_alice, run_bob, AliceSummary, BobSummary};
pub use ledger::{ledger_commit, FrameCommit, KeyLedger, KeyPool};
pub use link::{LossSchedule, QuantumChannel};
pub use phase::{encode_pulse, Basis, Phase, PhaseSymbol};
pub use pipeline::{decode, preprocess, DecodeError, EncodedFrame, Frame, FrameParams, Masking, FRAME_BITS, FRAME_BYTES};
pub use session::{
    run_alice_tcp, run_bob_tcp, run_session, ProtocolSettings, SessionConfig, SessionLimits, SessionReport,
    SessionSeeds,
};
pub use sifting::{measure_pulse, security_check, Decision, QberMonitor, SecurityCheck, SiftRecord};
pub use transport::{loopback_pair, Loopback, StreamTransport, Transport};
pub use wire::{FrameDecoder, FrameStatus, Message, WireError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("key pool exhausted: {requested} bits requested, {available} available")]
    KeyPoolExhausted { requested: u64, available: u64 },
    #[error("ledger invariant violated: {0}")]
    NegativeBalance(String),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("no kept records to sample")]
    EmptySift,
    #[error("sample fraction {0} outside (0, 1]")]
    InvalidSampleFraction(f64),
    #[error("invalid session configuration: {0}")]
    InvalidConfig(String),
    #[error("session aborted: {reason}")]
    Aborted { reason: String, report: Box<SessionReport> },
    #[error("transport closed")]
    TransportClosed,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("protocol violation: {0}")]
    Unexpected(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}
