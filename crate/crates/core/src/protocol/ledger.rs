//! Key-pool accounting.
//!
//! Each chip of a codeword is encrypted with one key bit taken from the pool.
//! After the frame, bits whose chip was never retained (lost in the channel or
//! measured in the wrong basis) go back to the pool; retained chips leave their
//! key bits spent. Fresh key material from retained, undisclosed signal
//! pulses is appended. Both endpoints apply the same operations in the same
//! order, so their pools stay identical.
//!
//! Fresh bits stand for reconciled, privacy-amplified key and are drawn from
//! a keystream both sides share; reconciliation itself is not simulated.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use super::ProtocolError;
use crate::rng::SimRng;

const INITIAL_STREAM: u64 = 0;
const FRESH_STREAM: u64 = 1;

/// Running totals, all in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeyLedger {
    pub initial: u64,
    pub pool_bits: u64,
    pub consumed: u64,
    pub generated: u64,
    pub recycled: u64,
}

impl KeyLedger {
    pub fn new(initial: u64) -> Self {
        Self {
            initial,
            pool_bits: initial,
            ..Self::default()
        }
    }

    /// Whether `initial + generated + recycled - consumed == pool_bits` and
    /// `recycled <= consumed`.
    pub fn is_conserved(&self) -> bool {
        let credit = self.initial as u128 + self.generated as u128 + self.recycled as u128;
        credit >= self.consumed as u128
            && credit - self.consumed as u128 == self.pool_bits as u128
            && self.recycled <= self.consumed
    }

    /// Recovered fraction of consumed key; 1 when nothing was consumed.
    pub fn p_rec(&self) -> f64 {
        if self.consumed == 0 {
            1.0
        } else {
            self.recycled as f64 / self.consumed as f64
        }
    }

    /// Key bits permanently spent on retained positions.
    pub fn net_consumed(&self) -> u64 {
        self.consumed - self.recycled
    }
}

/// Outcome of one frame as seen by the ledger.
#[derive(Debug, Clone, Copy)]
pub struct FrameCommit<'a> {
    /// Key bits debited for the frame, one per chip.
    pub key_bits: &'a [u8],
    /// Whether each chip's carrier was detected in the matching basis.
    pub retained: &'a [bool],
    /// Fresh key bits distilled from this frame.
    pub fresh_bits: u64,
}

/// Key bits held by one endpoint plus its ledger.
#[derive(Debug, Clone)]
pub struct KeyPool {
    bits: VecDeque<u8>,
    ledger: KeyLedger,
    fresh: SimRng,
}

impl KeyPool {
    /// Pool pre-shared from `key_seed`; both endpoints pass the same seed.
    pub fn new(initial_bits: u64, key_seed: u64) -> Self {
        let mut init = SimRng::for_stream(key_seed, INITIAL_STREAM);
        let bits = (0..initial_bits).map(|_| init.bit()).collect();
        Self {
            bits,
            ledger: KeyLedger::new(initial_bits),
            fresh: SimRng::for_stream(key_seed, FRESH_STREAM),
        }
    }

    pub fn ledger(&self) -> &KeyLedger {
        &self.ledger
    }

    pub fn available(&self) -> u64 {
        self.bits.len() as u64
    }

    /// Debits `n` key bits from the front of the pool.
    pub fn take(&mut self, n: u64) -> Result<Vec<u8>, ProtocolError> {
        if n > self.available() {
            return Err(ProtocolError::KeyPoolExhausted {
                requested: n,
                available: self.available(),
            });
        }
        self.ledger.consumed += n;
        self.ledger.pool_bits -= n;
        Ok(self.bits.drain(..n as usize).collect())
    }
}

/// Applies a processed frame to the pool: recycles unretained key bits and
/// appends fresh material. Returns the updated ledger.
pub fn ledger_commit(pool: &mut KeyPool, commit: &FrameCommit<'_>) -> Result<KeyLedger, ProtocolError> {
    if commit.key_bits.len() != commit.retained.len() {
        return Err(ProtocolError::NegativeBalance(format!(
            "{} key bits but {} retention flags",
            commit.key_bits.len(),
            commit.retained.len()
        )));
    }
    let mut recycled = 0u64;
    for (&bit, &kept) in commit.key_bits.iter().zip(commit.retained) {
        if !kept {
            pool.bits.push_back(bit);
            recycled += 1;
        }
    }
    for _ in 0..commit.fresh_bits {
        let b = pool.fresh.bit();
        pool.bits.push_back(b);
    }
    let l = &mut pool.ledger;
    l.recycled += recycled;
    l.generated += commit.fresh_bits;
    l.pool_bits += recycled + commit.fresh_bits;
    if !l.is_conserved() || l.pool_bits != pool.bits.len() as u64 {
        return Err(ProtocolError::NegativeBalance(format!("ledger out of balance: {l:?}")));
    }
    Ok(*l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_detected_recycles_everything() {
        let mut pool = KeyPool::new(1000, 1);
        let key = pool.take(400).unwrap();
        let retained = vec![false; 400];
        let l = ledger_commit(&mut pool, &FrameCommit { key_bits: &key, retained: &retained, fresh_bits: 0 })
            .unwrap();
        assert_eq!(l.recycled, l.consumed);
        assert_eq!(l.p_rec(), 1.0);
        assert_eq!(l.pool_bits, 1000);
    }

    #[test]
    fn everything_retained_recycles_nothing() {
        let mut pool = KeyPool::new(1000, 1);
        let key = pool.take(400).unwrap();
        let retained = vec![true; 400];
        let l = ledger_commit(&mut pool, &FrameCommit { key_bits: &key, retained: &retained, fresh_bits: 400 })
            .unwrap();
        assert_eq!(l.p_rec(), 0.0);
        assert_eq!(l.pool_bits, 1000);
        assert!(l.is_conserved());
    }

    #[test]
    fn exhaustion_is_reported() {
        let mut pool = KeyPool::new(10, 1);
        assert_eq!(
            pool.take(11),
            Err(ProtocolError::KeyPoolExhausted { requested: 11, available: 10 })
        );
        assert_eq!(pool.ledger().consumed, 0);
    }

    #[test]
    fn mirrored_pools_stay_identical() {
        let mut a = KeyPool::new(500, 77);
        let mut b = KeyPool::new(500, 77);
        for round in 0..5u64 {
            let ka = a.take(100).unwrap();
            let kb = b.take(100).unwrap();
            assert_eq!(ka, kb);
            let retained: Vec<bool> = (0..100).map(|i| (i + round) % 3 == 0).collect();
            let c = FrameCommit { key_bits: &ka, retained: &retained, fresh_bits: 20 };
            ledger_commit(&mut a, &c).unwrap();
            ledger_commit(&mut b, &FrameCommit { key_bits: &kb, ..c }).unwrap();
        }
        assert_eq!(a.bits, b.bits);
        assert_eq!(a.ledger(), b.ledger());
    }

    #[test]
    fn mismatched_commit_is_rejected() {
        let mut pool = KeyPool::new(10, 1);
        let key = pool.take(4).unwrap();
        assert!(matches!(
            ledger_commit(&mut pool, &FrameCommit { key_bits: &key, retained: &[true], fresh_bits: 0 }),
            Err(ProtocolError::NegativeBalance(_))
        ));
    }
}
