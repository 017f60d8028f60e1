//! Four-phase encoding.
//!
//! Two cascaded modulators add `{0, pi/2}` and `{0, pi}`; their sum covers the
//! four phases. The Z basis uses `{0, pi}`, the X basis `{pi/2, 3pi/2}`, and
//! within each basis bit 0 takes the smaller phase.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub fn from_bit(b: u8) -> Self {
        if b & 1 == 0 {
            Basis::Z
        } else {
            Basis::X
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }
}

/// Phase in quarter turns: 0, pi/2, pi, 3pi/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Zero,
    HalfPi,
    Pi,
    ThreeHalfPi,
}

impl Phase {
    pub fn quarter_turns(self) -> u8 {
        self as u8
    }

    pub fn from_quarter_turns(q: u8) -> Self {
        match q & 3 {
            0 => Phase::Zero,
            1 => Phase::HalfPi,
            2 => Phase::Pi,
            _ => Phase::ThreeHalfPi,
        }
    }

    pub fn radians(self) -> f64 {
        self.quarter_turns() as f64 * FRAC_PI_2
    }

    /// Settings of the two cascaded modulators, in quarter turns:
    /// the first adds 0 or 1, the second 0 or 2.
    pub fn modulator_settings(self) -> (u8, u8) {
        let q = self.quarter_turns();
        (q & 1, q & 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSymbol {
    pub phase: Phase,
    pub basis: Basis,
    pub bit: u8,
}

impl PhaseSymbol {
    /// Recovers basis and bit from a phase; the inverse of [`encode_pulse`].
    pub fn from_phase(phase: Phase) -> Self {
        let q = phase.quarter_turns();
        Self {
            phase,
            basis: Basis::from_bit(q & 1),
            bit: q >> 1,
        }
    }
}

/// Maps a chip bit onto a phase in the chosen basis.
pub fn encode_pulse(chip_bit: u8, basis: Basis) -> PhaseSymbol {
    let bit = chip_bit & 1;
    let phase = Phase::from_quarter_turns(basis.bit() | (bit << 1));
    PhaseSymbol { phase, basis, bit }
}
