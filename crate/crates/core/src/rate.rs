//! Decoy-state model and secrecy capacity.
//!
//! The forward model gives the gain `Q_a = Y0 + 1 - exp(-eta a)` and the
//! error-weighted gain `E_a Q_a = e0 Y0 + e_err (1 - exp(-eta a))` for a pulse
//! of mean photon number `a`. From the signal/decoy pair the vacuum + weak
//! decoy estimator bounds the single-photon gain `Q1` from below and its error
//! rate `e1` from above; the secrecy capacity per pulse is then
//! `q Q_mu [ -f H2(E_mu) + (Q1 / Q_mu)(1 - H2(e1)) ]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optics::{self, AtmosphereParams, BeamParams, LinkGeometry, OpticsError};

/// Error rate of background (dark) clicks.
pub const E0: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("binary entropy argument {0} is outside [0, 1]")]
    DomainError(f64),
    #[error("single-photon gain bound collapsed (Q1 = {q1:e}); channel too lossy or noisy")]
    EstimatorCollapse { q1: f64 },
    #[error("signal and decoy intensities coincide (mu = nu = {0})")]
    DegenerateIntensities(f64),
    #[error("invalid observables: {0}")]
    InvalidObservables(String),
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

fn check(ok: bool, name: &'static str, value: f64, reason: &'static str) -> Result<(), RateError> {
    if ok {
        Ok(())
    } else {
        Err(RateError::InvalidParameter { name, value, reason })
    }
}

/// Signal : decoy : vacuum pulse proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixRatio {
    pub signal: u32,
    pub decoy: u32,
    pub vacuum: u32,
}

impl MixRatio {
    pub const fn new(signal: u32, decoy: u32, vacuum: u32) -> Self {
        Self { signal, decoy, vacuum }
    }

    pub fn total(&self) -> u32 {
        self.signal + self.decoy + self.vacuum
    }

    pub fn signal_fraction(&self) -> f64 {
        self.signal as f64 / self.total() as f64
    }
}

impl std::fmt::Display for MixRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.signal, self.decoy, self.vacuum)
    }
}

impl std::str::FromStr for MixRatio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format!("expected signal:decoy:vacuum, got {s:?}"));
        }
        let mut v = [0u32; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p.parse().map_err(|_| format!("not a positive integer: {p:?}"))?;
        }
        Ok(Self::new(v[0], v[1], v[2]))
    }
}

/// Weak coherent source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub mu: f64,
    pub nu: f64,
    /// Vacuum intensity; always zero.
    pub vac: f64,
    pub mix_ratio: MixRatio,
    /// Pulses per second.
    pub rep_rate: f64,
    /// Sifting factor.
    pub q: f64,
    /// Fraction of wall-clock time spent emitting pulses.
    pub duty_cycle: f64,
}

impl SourceConfig {
    pub fn validate(&self) -> Result<(), RateError> {
        check(self.nu > 0.0, "nu", self.nu, "must be > 0")?;
        check(self.mu > self.nu, "mu", self.mu, "must exceed nu")?;
        check(self.vac == 0.0, "vac", self.vac, "vacuum intensity is fixed at 0")?;
        let m = self.mix_ratio;
        check(
            m.signal > 0 && m.decoy > 0 && m.vacuum > 0,
            "mix_ratio",
            0.0,
            "entries must be positive",
        )?;
        check(self.rep_rate > 0.0, "rep_rate", self.rep_rate, "must be > 0")?;
        check(self.q > 0.0 && self.q <= 1.0, "q", self.q, "must be in (0, 1]")?;
        check(
            self.duty_cycle > 0.0 && self.duty_cycle <= 1.0,
            "duty_cycle",
            self.duty_cycle,
            "must be in (0, 1]",
        )
    }

    /// Signal pulses per second of wall-clock time.
    pub fn signal_rate(&self) -> f64 {
        self.rep_rate * self.duty_cycle * self.mix_ratio.signal_fraction()
    }
}

/// Detector and post-processing constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Dark count probability per gate.
    pub p_d: f64,
    pub eta_d: f64,
    /// Interference visibility.
    pub visibility: f64,
    /// Misalignment error added on top of the visibility-limited error.
    pub e_mis: f64,
    /// Error-correction inefficiency.
    pub f_ec: f64,
    /// Receiver internal transmittance.
    pub eta_b: f64,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), RateError> {
        check((0.0..1.0).contains(&self.p_d), "p_d", self.p_d, "must be in [0, 1)")?;
        check(self.eta_d > 0.0 && self.eta_d <= 1.0, "eta_d", self.eta_d, "must be in (0, 1]")?;
        check(
            (0.0..=1.0).contains(&self.visibility),
            "visibility",
            self.visibility,
            "must be in [0, 1]",
        )?;
        check(
            self.e_mis >= 0.0 && self.e_det() + self.e_mis <= 0.5,
            "e_mis",
            self.e_mis,
            "e_det + e_mis must lie in [0, 0.5]",
        )?;
        check(self.f_ec >= 1.0, "f_ec", self.f_ec, "must be >= 1")?;
        check(self.eta_b > 0.0 && self.eta_b <= 1.0, "eta_b", self.eta_b, "must be in (0, 1]")
    }

    /// Vacuum yield, two detectors each contributing `p_d`.
    pub fn y0(&self) -> f64 {
        2.0 * self.p_d
    }

    /// Visibility-limited intrinsic error.
    pub fn e_det(&self) -> f64 {
        (1.0 - self.visibility) / 2.0
    }

    /// Total optical error probability of a detected photon.
    pub fn e_optical(&self) -> f64 {
        self.e_det() + self.e_mis
    }
}

/// Gains and QBERs of the signal and decoy classes plus the vacuum yield.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyObservables {
    pub q_mu: f64,
    pub e_mu: f64,
    pub q_nu: f64,
    pub e_nu: f64,
    pub y0: f64,
}

impl DecoyObservables {
    pub fn validate(&self) -> Result<(), RateError> {
        let bad = |m: String| Err(RateError::InvalidObservables(m));
        for (name, g) in [("q_mu", self.q_mu), ("q_nu", self.q_nu)] {
            if !(g > 0.0 && g < 1.0) {
                return bad(format!("{name} = {g} outside (0, 1)"));
            }
        }
        for (name, e) in [("e_mu", self.e_mu), ("e_nu", self.e_nu)] {
            if !(0.0..=0.5).contains(&e) {
                return bad(format!("{name} = {e} outside [0, 0.5]"));
            }
        }
        if !(self.y0 >= 0.0 && self.y0 <= self.q_nu && self.q_nu <= self.q_mu) {
            return bad(format!(
                "expected y0 <= q_nu <= q_mu, got {} / {} / {}",
                self.y0, self.q_nu, self.q_mu
            ));
        }
        Ok(())
    }
}

/// Single-photon bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyEstimate {
    /// Lower bound on the single-photon gain.
    pub q1: f64,
    /// Upper bound on the single-photon error rate, capped to `[0, 0.5]`.
    pub e1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecrecyCapacity {
    /// Unclamped value; negative means no secure key.
    pub cs_raw: f64,
    pub cs_per_pulse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub cs_per_pulse: f64,
    pub cs_raw: f64,
    /// Secure key bits per second.
    pub key_gen_rate: f64,
    /// Key bits per second spent on retained (detected, basis-matched) signal pulses.
    pub key_cons_rate: f64,
    /// Secure message bits per second; bounded by the same capacity as the key.
    pub comm_rate: f64,
    pub p_rec: f64,
}

/// Binary Shannon entropy in bits, with `H2(0) = H2(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64, RateError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(RateError::DomainError(x));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Gain and QBER of a pulse with mean photon number `intensity` at transmittance `eta`.
pub fn gain_and_qber(eta: f64, intensity: f64, det: &DetectorConfig) -> (f64, f64) {
    let y0 = det.y0();
    let photon = -(-eta * intensity).exp_m1();
    let gain = y0 + photon;
    if gain == 0.0 {
        return (0.0, E0);
    }
    let qber = (E0 * y0 + det.e_optical() * photon) / gain;
    (gain, qber)
}

/// Closed-form signal and decoy observables at end-to-end transmittance `eta`.
pub fn forward_gains(eta: f64, src: &SourceConfig, det: &DetectorConfig) -> DecoyObservables {
    let (q_mu, e_mu) = gain_and_qber(eta, src.mu, det);
    let (q_nu, e_nu) = gain_and_qber(eta, src.nu, det);
    DecoyObservables {
        q_mu,
        e_mu,
        q_nu,
        e_nu,
        y0: det.y0(),
    }
}

/// Vacuum + weak decoy bounds on the single-photon gain and error rate.
pub fn decoy_estimate(obs: &DecoyObservables, src: &SourceConfig) -> Result<DecoyEstimate, RateError> {
    let (mu, nu) = (src.mu, src.nu);
    if mu == nu {
        return Err(RateError::DegenerateIntensities(mu));
    }
    obs.validate()?;
    let mu2 = mu * mu;
    let nu2 = nu * nu;
    let q1 = mu2 * (-mu).exp() / (mu * nu - nu2)
        * (obs.q_nu * nu.exp() - obs.q_mu * mu.exp() * nu2 / mu2 - (mu2 - nu2) / mu2 * obs.y0);
    if !(q1 > 0.0) {
        return Err(RateError::EstimatorCollapse { q1 });
    }
    let e1 = mu * (-mu).exp() * (obs.e_nu * obs.q_nu * nu.exp() - E0 * obs.y0) / (nu * q1);
    Ok(DecoyEstimate {
        q1,
        e1: e1.clamp(0.0, 0.5),
    })
}

/// Secrecy capacity per emitted signal pulse.
pub fn secrecy_capacity(
    obs: &DecoyObservables,
    est: &DecoyEstimate,
    src: &SourceConfig,
    det: &DetectorConfig,
) -> Result<SecrecyCapacity, RateError> {
    let leak = det.f_ec * binary_entropy(obs.e_mu)?;
    let single = est.q1 / obs.q_mu * (1.0 - binary_entropy(est.e1)?);
    let cs_raw = src.q * obs.q_mu * (single - leak);
    Ok(SecrecyCapacity {
        cs_raw,
        cs_per_pulse: cs_raw.max(0.0),
    })
}

/// Fraction of consumed key bits recovered when every undetected or
/// basis-mismatched carrier returns its key: `1 - Q_mu / 2`.
pub fn recycling_fraction(q_mu: f64) -> f64 {
    1.0 - q_mu / 2.0
}

/// Absolute rates from a per-pulse capacity.
pub fn rate_report(obs: &DecoyObservables, cs: SecrecyCapacity, src: &SourceConfig) -> RateReport {
    let signal_rate = src.signal_rate();
    let key_gen_rate = signal_rate * cs.cs_per_pulse;
    RateReport {
        cs_per_pulse: cs.cs_per_pulse,
        cs_raw: cs.cs_raw,
        key_gen_rate,
        key_cons_rate: signal_rate * obs.q_mu * src.q,
        comm_rate: key_gen_rate,
        p_rec: recycling_fraction(obs.q_mu),
    }
}

/// One grid point of a distance sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub d_fs: f64,
    pub eta: f64,
    pub observables: DecoyObservables,
    /// `None` when the estimator collapsed; the point then carries zero rate.
    pub estimate: Option<DecoyEstimate>,
    pub report: RateReport,
}

impl SweepPoint {
    pub fn collapsed(&self) -> bool {
        self.estimate.is_none()
    }
}

/// Full chain for one link: budget, forward model, estimate, capacity.
pub fn evaluate_link(
    geom: &LinkGeometry,
    atm: &AtmosphereParams,
    beam: &BeamParams,
    src: &SourceConfig,
    det: &DetectorConfig,
) -> Result<SweepPoint, RateError> {
    let budget = optics::transmittance(geom, atm, beam, det.eta_b, det.eta_d)?;
    let obs = forward_gains(budget.eta_total, src, det);
    let (estimate, cs) = match decoy_estimate(&obs, src) {
        Ok(est) => (Some(est), secrecy_capacity(&obs, &est, src, det)?),
        Err(RateError::EstimatorCollapse { .. }) => {
            // No single-photon contribution can be certified.
            let worst = DecoyEstimate { q1: 0.0, e1: 0.5 };
            (None, secrecy_capacity(&obs, &worst, src, det)?)
        }
        Err(e) => return Err(e),
    };
    let mut report = rate_report(&obs, cs, src);
    if estimate.is_none() {
        report.key_gen_rate = 0.0;
        report.comm_rate = 0.0;
        report.cs_per_pulse = 0.0;
    }
    Ok(SweepPoint {
        d_fs: geom.d_fs,
        eta: budget.eta_total,
        observables: obs,
        estimate,
        report,
    })
}

/// Rate versus free-space distance with the fiber length held fixed.
///
/// `geom` supplies everything except the two distances. Points whose
/// estimator collapses are reported with zero rate; a regime violation at
/// any point fails the sweep.
pub fn rate_sweep(
    geom: &LinkGeometry,
    atm: &AtmosphereParams,
    beam: &BeamParams,
    src: &SourceConfig,
    det: &DetectorConfig,
    d_fs_grid: &[f64],
    d_fiber: f64,
) -> Result<Vec<SweepPoint>, RateError> {
    src.validate()?;
    det.validate()?;
    if let Some(w) = d_fs_grid.windows(2).find(|w| !(w[0] < w[1])) {
        return Err(RateError::InvalidParameter {
            name: "d_fs_grid",
            value: w[1],
            reason: "grid must be strictly ascending",
        });
    }
    d_fs_grid
        .par_iter()
        .map(|&d_fs| {
            let g = LinkGeometry { d_fs, d_fiber, ..*geom };
            evaluate_link(&g, atm, beam, src, det)
        })
        .collect()
}
