use serde::{Deserialize, Serialize};

use super::{check, transmittance, AtmosphereParams, BeamParams, LinkGeometry, OpticsError};
use crate::rng::SimRng;

/// Bounded loss fluctuation around the static channel loss.
///
/// The excursion `x(t)` follows a mean-reverting random walk in dB,
/// `dx = -reversion * x dt + volatility * sqrt(dt) * N(0, 1)`,
/// reflected at `+-max_db`. It models slow bounded drift, not scintillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    /// Reflecting bound on the excursion, dB.
    pub max_db: f64,
    /// Diffusion strength, dB per sqrt(s).
    pub volatility: f64,
    /// Mean-reversion rate, 1/s.
    pub reversion: f64,
}

impl JitterSpec {
    pub fn none() -> Self {
        Self {
            max_db: 0.0,
            volatility: 0.0,
            reversion: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(self.max_db >= 0.0) {
            return Err(OpticsError::BadJitterSpec(format!("max_db = {} must be >= 0", self.max_db)));
        }
        if !(self.volatility >= 0.0) || !(self.reversion >= 0.0) {
            return Err(OpticsError::BadJitterSpec(
                "volatility and reversion must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Advances an excursion by one step of length `dt`.
    pub(crate) fn step(&self, x: f64, dt: f64, rng: &mut SimRng) -> f64 {
        if self.max_db == 0.0 {
            return 0.0;
        }
        let drift = -self.reversion * x * dt;
        let mut next = x + drift + self.volatility * dt.sqrt() * rng.standard_normal();
        let m = self.max_db;
        // Reflect until inside; a huge step could cross the band several times.
        while next.abs() > m {
            next = if next > m { 2.0 * m - next } else { -2.0 * m - next };
        }
        next
    }
}

/// Time series of total channel loss (dB) sampled every `dt` seconds.
///
/// Samples are the static channel loss from [`transmittance`] plus a bounded
/// excursion. Receiver optics and detector are not included.
pub fn loss_trace(
    geom: &LinkGeometry,
    atm: &AtmosphereParams,
    beam: &BeamParams,
    jitter: &JitterSpec,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<f64>, OpticsError> {
    jitter.validate()?;
    check(dt > 0.0, "dt", dt, "must be > 0")?;
    check(duration >= dt, "duration", duration, "must be >= dt")?;
    let static_db = transmittance(geom, atm, beam, 1.0, 1.0)?.breakdown.channel_db();
    let n = (duration / dt).floor() as usize;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut x = 0.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(static_db + x);
        x = jitter.step(x, dt, &mut rng);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    fn spec(max_db: f64) -> JitterSpec {
        JitterSpec {
            max_db,
            volatility: 1.0,
            reversion: 0.5,
        }
    }

    fn static_db() -> f64 {
        transmittance(&geometry(), &atmosphere(), &beam(), 1.0, 1.0)
            .unwrap()
            .breakdown
            .channel_db()
    }

    #[test]
    fn zero_envelope_is_constant() {
        let trace = loss_trace(&geometry(), &atmosphere(), &beam(), &spec(0.0), 10.0, 0.1, 1).unwrap();
        assert_eq!(trace.len(), 100);
        let s = static_db();
        assert!(trace.iter().all(|&x| x == s));
    }

    #[test]
    fn envelope_bounds_every_sample() {
        let trace = loss_trace(&geometry(), &atmosphere(), &beam(), &spec(3.2), 3000.0, 0.05, 7).unwrap();
        let s = static_db();
        assert!(trace.iter().all(|&x| (x - s).abs() <= 3.2));
        let mean = trace.iter().sum::<f64>() / trace.len() as f64;
        assert!((mean - s).abs() < 0.1, "mean offset {}", mean - s);
    }

    #[test]
    fn same_seed_same_trace() {
        let a = loss_trace(&geometry(), &atmosphere(), &beam(), &spec(2.0), 60.0, 0.1, 99).unwrap();
        let b = loss_trace(&geometry(), &atmosphere(), &beam(), &spec(2.0), 60.0, 0.1, 99).unwrap();
        let c = loss_trace(&geometry(), &atmosphere(), &beam(), &spec(2.0), 60.0, 0.1, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            loss_trace(&geometry(), &atmosphere(), &beam(), &spec(-1.0), 10.0, 0.1, 1),
            Err(OpticsError::BadJitterSpec(_))
        ));
        assert!(loss_trace(&geometry(), &atmosphere(), &beam(), &spec(1.0), 10.0, 0.0, 1).is_err());
        assert!(loss_trace(&geometry(), &atmosphere(), &beam(), &spec(1.0), 0.01, 0.1, 1).is_err());
    }
}
