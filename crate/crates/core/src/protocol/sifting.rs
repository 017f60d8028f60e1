//! Basis measurement, sifting and the sampled QBER check.

use serde::{Deserialize, Serialize};

use super::phase::{Basis, PhaseSymbol};
use super::ProtocolError;
use crate::pulse_mc::ClickOutcome;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftRecord {
    pub timestamp_index: u64,
    pub alice_basis: Basis,
    pub bob_basis: Basis,
    pub clicked: bool,
    /// Bob's bit; a fair coin when the bases differ, 0 without a click.
    pub bob_bit: u8,
    pub kept: bool,
}

/// Bob's measurement of one pulse. `coin` decides the outcome when the bases
/// disagree.
pub fn measure_pulse(
    timestamp_index: u64,
    symbol: &PhaseSymbol,
    bob_basis: Basis,
    outcome: ClickOutcome,
    coin: u8,
) -> SiftRecord {
    let matched = symbol.basis == bob_basis;
    let bob_bit = match (outcome.clicked, matched) {
        (false, _) => 0,
        (true, true) => symbol.bit ^ u8::from(outcome.error),
        (true, false) => coin & 1,
    };
    SiftRecord {
        timestamp_index,
        alice_basis: symbol.basis,
        bob_basis,
        clicked: outcome.clicked,
        bob_bit,
        kept: outcome.clicked && matched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Proceed,
    Abort,
}

/// Result of one sampled check. `disclosed` holds positions into the kept set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityCheck {
    pub disclosed: Vec<usize>,
    pub errors: u64,
    pub estimate: f64,
    pub decision: Decision,
}

/// Abort iff the estimate strictly exceeds the threshold.
pub fn qber_decision(errors: u64, samples: u64, threshold: f64) -> Decision {
    if samples > 0 && errors as f64 > threshold * samples as f64 {
        Decision::Abort
    } else {
        Decision::Proceed
    }
}

/// Number of records disclosed for a kept set of size `n`.
pub fn sample_size(n: usize, sample_fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((sample_fraction * n as f64).ceil() as usize).clamp(1, n)
}

pub fn check_sample_fraction(f: f64) -> Result<(), ProtocolError> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(ProtocolError::InvalidSampleFraction(f))
    }
}

/// Estimates the QBER on a random subset of the kept records.
///
/// `alice_bits[i]` is Alice's bit for `records[i]`. Disclosed records must not
/// be used afterwards for message or key material.
pub fn security_check(
    records: &[SiftRecord],
    alice_bits: &[u8],
    sample_fraction: f64,
    threshold: f64,
    rng: &mut SimRng,
) -> Result<SecurityCheck, ProtocolError> {
    check_sample_fraction(sample_fraction)?;
    assert_eq!(records.len(), alice_bits.len(), "one Alice bit per record");
    let kept: Vec<usize> = (0..records.len()).filter(|&i| records[i].kept).collect();
    if kept.is_empty() {
        return Err(ProtocolError::EmptySift);
    }
    let k = sample_size(kept.len(), sample_fraction);
    let disclosed: Vec<usize> = rng.sample_indices(kept.len(), k).into_iter().map(|j| kept[j]).collect();
    let errors = disclosed
        .iter()
        .filter(|&&i| records[i].bob_bit != alice_bits[i])
        .count() as u64;
    Ok(SecurityCheck {
        estimate: errors as f64 / k as f64,
        decision: qber_decision(errors, k as u64, threshold),
        errors,
        disclosed,
    })
}

/// Pools disclosed samples across frames and decides once per block, so that
/// frames with few detections do not trigger aborts on tiny samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberMonitor {
    pub threshold: f64,
    pub block: u64,
    pending_errors: u64,
    pending_samples: u64,
    pub total_errors: u64,
    pub total_samples: u64,
}

impl QberMonitor {
    pub fn new(threshold: f64, block: u64) -> Self {
        Self {
            threshold,
            block: block.max(1),
            pending_errors: 0,
            pending_samples: 0,
            total_errors: 0,
            total_samples: 0,
        }
    }

    /// Adds a frame's sample. Returns a decision when a block completes.
    pub fn add(&mut self, errors: u64, samples: u64) -> Option<(Decision, f64)> {
        self.pending_errors += errors;
        self.pending_samples += samples;
        self.total_errors += errors;
        self.total_samples += samples;
        if self.pending_samples < self.block {
            return None;
        }
        let est = self.pending_errors as f64 / self.pending_samples as f64;
        let d = qber_decision(self.pending_errors, self.pending_samples, self.threshold);
        self.pending_errors = 0;
        self.pending_samples = 0;
        Some((d, est))
    }

    pub fn qber(&self) -> f64 {
        if self.total_samples == 0 {
            0.0
        } else {
            self.total_errors as f64 / self.total_samples as f64
        }
    }

    /// Standard error of [`QberMonitor::qber`].
    pub fn qber_se(&self) -> f64 {
        if self.total_samples == 0 {
            return 0.0;
        }
        let e = self.qber();
        (e * (1.0 - e) / self.total_samples as f64).sqrt()
    }
}
