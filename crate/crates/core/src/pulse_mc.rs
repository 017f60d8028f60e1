//! Photon-level Monte Carlo of emission, loss, detection and error flips.
//!
//! A pulse of mean photon number `a` clicks with the union probability
//! `1 - (1 - Y0) exp(-eta a)` (dark count or photon), which differs from the
//! additive closed form `Y0 + 1 - exp(-eta a)` by `Y0 (1 - exp(-eta a))`.
//! Given a click the result is wrong with probability
//! `(e0 Y0 + e_err (1 - exp(-eta a))) / Q_a`, so the empirical QBER converges
//! to the closed form exactly. Double clicks, afterpulsing and dead time are
//! not modelled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rate::{gain_and_qber, DecoyObservables, DetectorConfig, MixRatio, SourceConfig};
use crate::rng::SimRng;

pub use crate::rng::split_seed;

/// Pulses per independently seeded chunk of a batch.
pub const CHUNK_PULSES: usize = 1 << 18;

const SCHEDULE_STREAM: u64 = 0;
const OUTCOME_STREAM_BASE: u64 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),
    #[error("invalid pulse plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseClass {
    Signal,
    Decoy,
    Vacuum,
}

impl PulseClass {
    pub const ALL: [PulseClass; 3] = [PulseClass::Signal, PulseClass::Decoy, PulseClass::Vacuum];

    pub fn intensity(self, src: &SourceConfig) -> f64 {
        match self {
            PulseClass::Signal => src.mu,
            PulseClass::Decoy => src.nu,
            PulseClass::Vacuum => src.vac,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PulseClass::Signal => "signal",
            PulseClass::Decoy => "decoy",
            PulseClass::Vacuum => "vacuum",
        }
    }

    /// Draws a class with probabilities proportional to `mix`.
    pub fn draw(mix: &MixRatio, rng: &mut SimRng) -> Self {
        let r = rng.below(mix.total() as u64) as u32;
        if r < mix.signal {
            PulseClass::Signal
        } else if r < mix.signal + mix.decoy {
            PulseClass::Decoy
        } else {
            PulseClass::Vacuum
        }
    }
}

/// Detector response to one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClickOutcome {
    pub clicked: bool,
    /// Only meaningful when `clicked`.
    pub error: bool,
}

/// Per-class click and conditional error probabilities at one transmittance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickModel {
    p_click: [f64; 3],
    p_error: [f64; 3],
}

impl ClickModel {
    pub fn new(eta: f64, src: &SourceConfig, det: &DetectorConfig) -> Self {
        let y0 = det.y0();
        let mut p_click = [0.0; 3];
        let mut p_error = [0.0; 3];
        for class in PulseClass::ALL {
            let a = class.intensity(src);
            let photon = -(-eta * a).exp_m1();
            p_click[class.index()] = y0 + photon - y0 * photon;
            p_error[class.index()] = gain_and_qber(eta, a, det).1;
        }
        Self { p_click, p_error }
    }

    pub fn click_probability(&self, class: PulseClass) -> f64 {
        self.p_click[class.index()]
    }

    pub fn error_probability(&self, class: PulseClass) -> f64 {
        self.p_error[class.index()]
    }

    #[inline]
    pub fn sample(&self, class: PulseClass, rng: &mut SimRng) -> ClickOutcome {
        let i = class.index();
        if !rng.bernoulli(self.p_click[i]) {
            return ClickOutcome::default();
        }
        ClickOutcome {
            clicked: true,
            error: rng.bernoulli(self.p_error[i]),
        }
    }
}

/// Pulse classes for a batch, drawn from the mixing ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct PulsePlan {
    pub n_pulses: usize,
    pub intensity_schedule: Vec<PulseClass>,
    pub seed: u64,
}

impl PulsePlan {
    pub fn new(n_pulses: usize, mix: &MixRatio, seed: u64) -> Result<Self, McError> {
        if n_pulses == 0 {
            return Err(McError::InvalidPlan("n_pulses must be > 0".into()));
        }
        if mix.total() == 0 {
            return Err(McError::InvalidPlan("mixing ratio is all zero".into()));
        }
        let mut rng = SimRng::for_stream(seed, SCHEDULE_STREAM);
        let intensity_schedule = (0..n_pulses).map(|_| PulseClass::draw(mix, &mut rng)).collect();
        Ok(Self {
            n_pulses,
            intensity_schedule,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub sent: u64,
    pub clicked: u64,
    pub errored: u64,
}

impl ClassCounts {
    /// NaN when nothing was sent; likewise `qber` without clicks.
    pub fn gain(&self) -> f64 {
        self.clicked as f64 / self.sent as f64
    }

    pub fn qber(&self) -> f64 {
        self.errored as f64 / self.clicked as f64
    }

    /// Binomial standard error of the gain.
    pub fn gain_se(&self) -> f64 {
        let g = self.gain();
        (g * (1.0 - g) / self.sent as f64).sqrt()
    }

    /// Binomial standard error of the QBER among clicks.
    pub fn qber_se(&self) -> f64 {
        let e = self.qber();
        (e * (1.0 - e) / self.clicked as f64).sqrt()
    }

    fn merge(self, o: Self) -> Self {
        Self {
            sent: self.sent + o.sent,
            clicked: self.clicked + o.clicked,
            errored: self.errored + o.errored,
        }
    }

    pub(crate) fn record(&mut self, outcome: ClickOutcome) {
        self.sent += 1;
        if outcome.clicked {
            self.clicked += 1;
            if outcome.error {
                self.errored += 1;
            }
        }
    }
}

/// Per-class counts of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BatchStats {
    pub signal: ClassCounts,
    pub decoy: ClassCounts,
    pub vacuum: ClassCounts,
}

impl BatchStats {
    pub fn class(&self, class: PulseClass) -> &ClassCounts {
        match class {
            PulseClass::Signal => &self.signal,
            PulseClass::Decoy => &self.decoy,
            PulseClass::Vacuum => &self.vacuum,
        }
    }

    pub fn class_mut(&mut self, class: PulseClass) -> &mut ClassCounts {
        match class {
            PulseClass::Signal => &mut self.signal,
            PulseClass::Decoy => &mut self.decoy,
            PulseClass::Vacuum => &mut self.vacuum,
        }
    }

    pub fn merge(self, o: Self) -> Self {
        Self {
            signal: self.signal.merge(o.signal),
            decoy: self.decoy.merge(o.decoy),
            vacuum: self.vacuum.merge(o.vacuum),
        }
    }

    pub fn total_sent(&self) -> u64 {
        self.signal.sent + self.decoy.sent + self.vacuum.sent
    }
}

/// Runs every pulse of `plan` through the detector model.
///
/// The plan is cut into [`CHUNK_PULSES`]-sized chunks, chunk `i` drawing from
/// stream `1 + i` of the plan seed, so the result does not depend on how many
/// threads evaluate the chunks.
pub fn simulate_batch(
    plan: &PulsePlan,
    eta: f64,
    src: &SourceConfig,
    det: &DetectorConfig,
) -> BatchStats {
    let model = ClickModel::new(eta, src, det);
    plan.intensity_schedule
        .par_chunks(CHUNK_PULSES)
        .enumerate()
        .map(|(i, chunk)| {
            let mut rng = SimRng::for_stream(plan.seed, OUTCOME_STREAM_BASE + i as u64);
            let mut stats = BatchStats::default();
            for &class in chunk {
                let outcome = model.sample(class, &mut rng);
                stats.class_mut(class).record(outcome);
            }
            stats
        })
        .reduce(BatchStats::default, BatchStats::merge)
}

/// Empirical observables; the vacuum yield comes from the vacuum class.
pub fn stats_to_observables(stats: &BatchStats) -> Result<DecoyObservables, McError> {
    for class in PulseClass::ALL {
        if stats.class(class).sent == 0 {
            return Err(McError::InsufficientStatistics(format!(
                "no {} pulses were sent",
                class.name()
            )));
        }
    }
    for class in [PulseClass::Signal, PulseClass::Decoy] {
        if stats.class(class).clicked == 0 {
            return Err(McError::InsufficientStatistics(format!(
                "no {} pulse clicked",
                class.name()
            )));
        }
    }
    Ok(DecoyObservables {
        q_mu: stats.signal.gain(),
        e_mu: stats.signal.qber(),
        q_nu: stats.decoy.gain(),
        e_nu: stats.decoy.qber(),
        y0: stats.vacuum.gain(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate::fixtures::{detector, measured_eta, source};

    #[test]
    fn dark_free_zero_transmittance_never_clicks() {
        let det = DetectorConfig { p_d: 0.0, ..detector() };
        let plan = PulsePlan::new(100_000, &source().mix_ratio, 3).unwrap();
        let stats = simulate_batch(&plan, 0.0, &source(), &det);
        assert_eq!(stats.total_sent(), 100_000);
        assert_eq!(stats.signal.clicked + stats.decoy.clicked + stats.vacuum.clicked, 0);
    }

    #[test]
    fn plan_is_reproducible_and_follows_mix() {
        let mix = MixRatio::new(30, 2, 1);
        let a = PulsePlan::new(330_000, &mix, 11).unwrap();
        let b = PulsePlan::new(330_000, &mix, 11).unwrap();
        assert_eq!(a, b);
        let signal = a.intensity_schedule.iter().filter(|c| **c == PulseClass::Signal).count();
        let p: f64 = 30.0 / 33.0;
        let sd = (330_000.0 * p * (1.0 - p)).sqrt();
        assert!((signal as f64 - 330_000.0 * p).abs() < 4.0 * sd);
        assert!(PulsePlan::new(0, &mix, 1).is_err());
    }

    #[test]
    fn batch_is_reproducible() {
        let plan = PulsePlan::new(600_000, &source().mix_ratio, 21).unwrap();
        let a = simulate_batch(&plan, 0.01, &source(), &detector());
        let b = simulate_batch(&plan, 0.01, &source(), &detector());
        assert_eq!(a, b);
    }

    #[test]
    fn vacuum_class_is_background() {
        // Raise the dark rate so the vacuum class collects enough clicks quickly.
        let det = DetectorConfig { p_d: 5e-3, ..detector() };
        let plan = PulsePlan::new(2_000_000, &MixRatio::new(1, 1, 2), 8).unwrap();
        let stats = simulate_batch(&plan, measured_eta(), &source(), &det);
        let v = stats.vacuum;
        assert!((v.gain() - det.y0()).abs() < 3.0 * v.gain_se());
        assert!((v.qber() - 0.5).abs() < 3.0 * v.qber_se());
    }

    #[test]
    fn observables_errors_and_identity() {
        assert!(matches!(
            stats_to_observables(&BatchStats::default()),
            Err(McError::InsufficientStatistics(_))
        ));
        let zero_clicks = BatchStats {
            signal: ClassCounts { sent: 10, clicked: 0, errored: 0 },
            decoy: ClassCounts { sent: 10, clicked: 0, errored: 0 },
            vacuum: ClassCounts { sent: 10, clicked: 0, errored: 0 },
        };
        assert!(matches!(
            stats_to_observables(&zero_clicks),
            Err(McError::InsufficientStatistics(_))
        ));

        // Dyadic counts make every ratio exact in binary floating point.
        let stats = BatchStats {
            signal: ClassCounts { sent: 1 << 20, clicked: 512, errored: 16 },
            decoy: ClassCounts { sent: 1 << 18, clicked: 64, errored: 4 },
            vacuum: ClassCounts { sent: 1 << 19, clicked: 1, errored: 1 },
        };
        let obs = stats_to_observables(&stats).unwrap();
        assert_eq!(obs.q_mu, 512.0 / (1u64 << 20) as f64);
        assert_eq!(obs.e_mu, 16.0 / 512.0);
        assert_eq!(obs.q_nu, 64.0 / (1u64 << 18) as f64);
        assert_eq!(obs.e_nu, 4.0 / 64.0);
        assert_eq!(obs.y0, 1.0 / (1u64 << 19) as f64);
    }
}
