//! Simulation toolkit for a phase-encoded quantum link that carries a fibre
//! segment and a free-space segment.
//!
//! * [`optics`]: atmospheric link budget and loss jitter
//! * [`rate`]: decoy-state estimation and secret key rate
//! * [`pulse_mc`]: photon-level Monte Carlo of the detector statistics
//! * [`protocol`]: message transmission with key recycling between two endpoints
//! * [`config`] and [`harness`]: scenario files, CLI tables and result records

pub mod config;
pub mod harness;
pub mod optics;
pub mod protocol;
pub mod pulse_mc;
pub mod rate;
pub mod rng;
