//! Free-space + fiber link budget.
//!
//! A Gaussian beam leaves the transmitting telescope with waist `w0 * gamma`,
//! spreads by diffraction and turbulence over the free-space hop, is clipped
//! by the receiver aperture, and is then coupled into fiber. Turbulence enters
//! through the Rytov variance and is only valid while the free-space distance
//! stays below the critical distance `1 / (Cn2 k^2 l0^(5/3))`.
//!
//! All lengths are in metres, attenuation coefficients in dB/km.

mod jitter;

pub use jitter::{loss_trace, JitterSpec};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpticsError {
    #[error("channel has no turbulence (cn2 = 0); critical distance is unbounded")]
    NonTurbulentChannel,
    #[error("free-space distance {d_fs} m is not below the critical distance {critical} m")]
    RegimeViolation { d_fs: f64, critical: f64 },
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("bad jitter spec: {0}")]
    BadJitterSpec(String),
}

pub(crate) fn check(
    ok: bool,
    name: &'static str,
    value: f64,
    reason: &'static str,
) -> Result<(), OpticsError> {
    if ok {
        Ok(())
    } else {
        Err(OpticsError::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}

/// Turbulence and attenuation of the free-space hop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtmosphereParams {
    /// Refractive-index structure constant, m^(-2/3).
    pub cn2: f64,
    /// Turbulence inner scale, m.
    pub l0: f64,
    /// Free-space attenuation, dB/km.
    pub alpha_fs: f64,
}

impl AtmosphereParams {
    pub fn validate(&self) -> Result<(), OpticsError> {
        check(self.cn2 >= 0.0 && self.cn2.is_finite(), "cn2", self.cn2, "must be >= 0")?;
        check(self.l0 > 0.0, "l0", self.l0, "must be > 0")?;
        check(self.alpha_fs >= 0.0, "alpha_fs", self.alpha_fs, "must be >= 0")
    }
}

/// Transmitted beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    /// Emission beam waist before the telescope, m.
    pub w0: f64,
    /// Telescope magnification.
    pub gamma: f64,
    /// Central wavelength, m.
    pub wavelength: f64,
}

impl BeamParams {
    pub fn validate(&self) -> Result<(), OpticsError> {
        check(self.w0 > 0.0, "w0", self.w0, "must be > 0")?;
        check(self.gamma >= 1.0, "gamma", self.gamma, "must be >= 1")?;
        check(self.wavelength > 0.0, "wavelength", self.wavelength, "must be > 0")
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Waist leaving the transmitting telescope, `w0 * gamma`.
    pub fn launch_waist(&self) -> f64 {
        self.w0 * self.gamma
    }
}

/// Distances, aperture and fixed losses of the cascaded link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    /// Free-space distance, m.
    pub d_fs: f64,
    /// Fiber distance, m.
    pub d_fiber: f64,
    /// Receiver aperture radius, m.
    pub a_r: f64,
    /// Combined fiber/free-space conversion loss of both telescopes, dB.
    pub conv_loss_db: f64,
    /// Fiber adapter loss at the receiver interface, dB.
    pub adapter_loss_db: f64,
    /// Fiber attenuation, dB/km.
    pub alpha_fiber: f64,
}

impl LinkGeometry {
    pub fn validate(&self) -> Result<(), OpticsError> {
        check(self.d_fs >= 0.0, "d_fs", self.d_fs, "must be >= 0")?;
        check(self.d_fiber >= 0.0, "d_fiber", self.d_fiber, "must be >= 0")?;
        check(self.a_r > 0.0, "a_r", self.a_r, "must be > 0")?;
        check(self.conv_loss_db >= 0.0, "conv_loss_db", self.conv_loss_db, "must be >= 0")?;
        check(
            self.adapter_loss_db >= 0.0,
            "adapter_loss_db",
            self.adapter_loss_db,
            "must be >= 0",
        )?;
        check(self.alpha_fiber >= 0.0, "alpha_fiber", self.alpha_fiber, "must be >= 0")
    }

    pub fn with_d_fs(mut self, d_fs: f64) -> Self {
        self.d_fs = d_fs;
        self
    }
}

/// Itemized losses in dB. Every entry is `>= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub geometric_db: f64,
    pub atmospheric_db: f64,
    pub conversion_db: f64,
    pub fiber_db: f64,
    pub adapter_db: f64,
    pub receiver_db: f64,
    pub detector_db: f64,
}

impl LossBreakdown {
    /// Channel loss: everything up to the receiver's fiber input.
    pub fn channel_db(&self) -> f64 {
        self.geometric_db + self.atmospheric_db + self.conversion_db + self.fiber_db + self.adapter_db
    }

    pub fn total_db(&self) -> f64 {
        self.channel_db() + self.receiver_db + self.detector_db
    }

    /// `(name, dB)` pairs in a fixed order.
    pub fn items(&self) -> [(&'static str, f64); 7] {
        [
            ("geometric", self.geometric_db),
            ("atmospheric", self.atmospheric_db),
            ("conversion", self.conversion_db),
            ("fiber", self.fiber_db),
            ("adapter", self.adapter_db),
            ("receiver", self.receiver_db),
            ("detector", self.detector_db),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// End-to-end transmittance including receiver optics and detector.
    pub eta_total: f64,
    pub breakdown: LossBreakdown,
    /// Effective beam waist at the receiver, m.
    pub w_eff: f64,
    pub rytov: f64,
}

impl LinkBudget {
    /// Transmittance of the channel alone (no receiver optics, no detector).
    pub fn eta_channel(&self) -> f64 {
        db_to_linear(self.breakdown.channel_db())
    }
}

/// `10^(-db/10)`.
#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// `-10 log10(x)`.
#[inline]
pub fn linear_to_db(x: f64) -> f64 {
    -10.0 * x.log10()
}

/// Rytov variance `1.23 Cn2 k^(7/6) d^(11/6)` of the free-space hop.
pub fn rytov_variance(atm: &AtmosphereParams, beam: &BeamParams, d_fs: f64) -> f64 {
    1.23 * atm.cn2 * beam.wavenumber().powf(7.0 / 6.0) * d_fs.powf(11.0 / 6.0)
}

/// Distance at which the transverse coherence radius shrinks to the inner scale.
pub fn critical_distance(atm: &AtmosphereParams, beam: &BeamParams) -> Result<f64, OpticsError> {
    if atm.cn2 == 0.0 {
        return Err(OpticsError::NonTurbulentChannel);
    }
    let k = beam.wavenumber();
    Ok(1.0 / (atm.cn2 * k * k * atm.l0.powf(5.0 / 3.0)))
}

/// Rayleigh length of the expanded beam, `pi (w0 gamma)^2 / lambda`.
pub fn rayleigh_length(beam: &BeamParams) -> f64 {
    let w = beam.launch_waist();
    PI * w * w / beam.wavelength
}

/// Fails with [`OpticsError::RegimeViolation`] unless `d_fs` is strictly below
/// the critical distance. Turbulence-free channels always pass.
pub fn check_regime(atm: &AtmosphereParams, beam: &BeamParams, d_fs: f64) -> Result<(), OpticsError> {
    match critical_distance(atm, beam) {
        Ok(critical) if d_fs >= critical => Err(OpticsError::RegimeViolation { d_fs, critical }),
        _ => Ok(()),
    }
}

/// Beam waist at the receiver after diffraction and turbulence spreading.
pub fn effective_waist(atm: &AtmosphereParams, beam: &BeamParams, d_fs: f64) -> Result<f64, OpticsError> {
    check_regime(atm, beam, d_fs)?;
    let w_launch = beam.launch_waist();
    let d_r = rayleigh_length(beam);
    let k = beam.wavenumber();
    let diffraction = 1.0 + (d_fs / d_r).powi(2);
    // Turbulence broadening weight; vanishes at the launch plane.
    let theta = 2.0 * d_fs * d_r * d_r / (k * w_launch * w_launch * (d_r * d_r + d_fs * d_fs));
    let turbulence = 1.0 + 1.63 * rytov_variance(atm, beam, d_fs).powf(6.0 / 5.0) * theta;
    Ok(w_launch * diffraction.sqrt() * turbulence.sqrt())
}

/// Fraction of a Gaussian beam of waist `w` captured by a circular aperture of radius `a_r`.
pub fn capture_fraction(a_r: f64, w: f64) -> f64 {
    -(-2.0 * a_r * a_r / (w * w)).exp_m1()
}

/// End-to-end link budget.
///
/// `eta_b` is the receiver's internal transmittance and `eta_d` the detector
/// efficiency; both are linear probabilities in `(0, 1]`.
pub fn transmittance(
    geom: &LinkGeometry,
    atm: &AtmosphereParams,
    beam: &BeamParams,
    eta_b: f64,
    eta_d: f64,
) -> Result<LinkBudget, OpticsError> {
    geom.validate()?;
    atm.validate()?;
    beam.validate()?;
    check(eta_b > 0.0 && eta_b <= 1.0, "eta_b", eta_b, "must be in (0, 1]")?;
    check(eta_d > 0.0 && eta_d <= 1.0, "eta_d", eta_d, "must be in (0, 1]")?;

    let w_eff = effective_waist(atm, beam, geom.d_fs)?;
    let capture = capture_fraction(geom.a_r, w_eff);
    let breakdown = LossBreakdown {
        geometric_db: linear_to_db(capture),
        atmospheric_db: atm.alpha_fs * geom.d_fs / 1000.0,
        conversion_db: geom.conv_loss_db,
        fiber_db: geom.alpha_fiber * geom.d_fiber / 1000.0,
        adapter_db: geom.adapter_loss_db,
        receiver_db: linear_to_db(eta_b),
        detector_db: linear_to_db(eta_d),
    };
    let eta_total = capture
        * db_to_linear(breakdown.atmospheric_db)
        * db_to_linear(breakdown.conversion_db)
        * db_to_linear(breakdown.fiber_db)
        * db_to_linear(breakdown.adapter_db)
        * eta_b
        * eta_d;
    Ok(LinkBudget {
        eta_total,
        breakdown,
        w_eff,
        rytov: rytov_variance(atm, beam, geom.d_fs),
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn atmosphere() -> AtmosphereParams {
        AtmosphereParams {
            cn2: 1.28e-14,
            l0: 1e-3,
            alpha_fs: 0.2,
        }
    }

    pub fn beam() -> BeamParams {
        BeamParams {
            w0: 1.74e-3,
            gamma: 27.1,
            wavelength: 1549.32e-9,
        }
    }

    pub fn geometry() -> LinkGeometry {
        LinkGeometry {
            d_fs: 1400.0,
            d_fiber: 10_000.0,
            a_r: 0.06,
            conv_loss_db: 15.4,
            adapter_loss_db: 0.42,
            alpha_fiber: 0.2,
        }
    }
}
