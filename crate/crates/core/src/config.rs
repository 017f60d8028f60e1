//! Scenario files: flat `section.key = value` lines, SI units.
//!
//! `#` and `;` start comments; blank lines are ignored. Every key must be
//! known and may appear once. [`ScenarioConfig::to_canonical`] writes every
//! resolved value back out, so parsing the canonical form gives the same
//! config.
//!
//! | key | unit |
//! |---|---|
//! | `atmosphere.cn2` | m^-2/3 |
//! | `atmosphere.l0` | m |
//! | `atmosphere.alpha_fs` | dB/km |
//! | `beam.w0`, `beam.wavelength` | m |
//! | `beam.gamma` | telescope magnification |
//! | `link.d_fs`, `link.d_fiber`, `link.a_r` | m (`a_r` is the aperture radius) |
//! | `link.conv_loss_db`, `link.adapter_loss_db` | dB |
//! | `link.alpha_fiber` | dB/km |
//! | `source.mu`, `source.nu` | mean photons per pulse |
//! | `source.mix_ratio` | `signal:decoy:vacuum` |
//! | `source.rep_rate` | Hz |
//! | `source.q`, `source.duty_cycle` | fraction (defaults 0.5 and 1) |
//! | `detector.p_d`, `detector.eta_d`, `detector.eta_b`, `detector.visibility`, `detector.e_mis` | probability (`e_mis` defaults to 0) |
//! | `detector.f_ec` | error-correction inefficiency |
//! | `protocol.*` | see [`ProtocolSettings`] |
//! | `jitter.max_db`, `jitter.volatility`, `jitter.reversion` | dB, dB/sqrt(s), 1/s; optional |
//! | `session.max_pulses`, `session.max_frames` | counts; optional |
//! | `seeds.master` and optional `seeds.alice/bob/channel/mask/key` | u64 |
//! | `sweep.start`, `sweep.stop`, `sweep.step` | m; optional |
//! | `simulate.pulses` | count |
//! | `measured.q_mu`, `measured.e_mu`, `measured.q_nu`, `measured.e_nu`, `measured.y0` | optional observed gains and QBERs |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::optics::{AtmosphereParams, BeamParams, JitterSpec, LinkGeometry};
use crate::protocol::{LossSchedule, ProtocolSettings, SessionConfig, SessionLimits, SessionSeeds};
use crate::rate::{DecoyObservables, DetectorConfig, MixRatio, SourceConfig};
use crate::rng::split_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}` (first set on line {first})")]
    Duplicate { line: usize, key: String, first: usize },
    #[error("line {line}: invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Inclusive distance grid `start:stop:step`. `start > stop` is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        if self.start > self.stop {
            return Vec::new();
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts[..] else {
            return Err(format!("expected start:stop:step, got `{s}`"));
        };
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
        let g = Grid {
            start: num(a)?,
            stop: num(b)?,
            step: num(c)?,
        };
        if !(g.step > 0.0 && g.start.is_finite() && g.stop.is_finite()) {
            return Err("step must be > 0 and bounds finite".into());
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedConfig {
    pub master: u64,
    pub alice: Option<u64>,
    pub bob: Option<u64>,
    pub channel: Option<u64>,
    pub mask: Option<u64>,
    pub key: Option<u64>,
}

impl SeedConfig {
    pub fn resolve(&self) -> SessionSeeds {
        let d = SessionSeeds::from_master(self.master);
        SessionSeeds {
            alice: self.alice.unwrap_or(d.alice),
            bob: self.bob.unwrap_or(d.bob),
            channel: self.channel.unwrap_or(d.channel),
            mask: self.mask.unwrap_or(d.mask),
            key: self.key.unwrap_or(d.key),
        }
    }

    /// Seed for the standalone Monte Carlo batch.
    pub fn simulate(&self) -> u64 {
        split_seed(self.master, 5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub id: String,
    pub atmosphere: AtmosphereParams,
    pub beam: BeamParams,
    pub link: LinkGeometry,
    pub source: SourceConfig,
    pub detector: DetectorConfig,
    pub protocol: ProtocolSettings,
    pub jitter: Option<JitterSpec>,
    pub session: SessionLimits,
    pub seeds: SeedConfig,
    pub sweep: Option<Grid>,
    pub simulate_pulses: u64,
    pub measured: Option<DecoyObservables>,
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split(['#', ';']).next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: format!("expected `section.key = value`, got `{body}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            let well_formed = k.split_once('.').is_some_and(|(s, f)| {
                !s.is_empty()
                    && !f.is_empty()
                    && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            });
            if !well_formed {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("malformed key `{k}`"),
                });
            }
            if v.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("empty value for `{k}`"),
                });
            }
            if let Some((first, _)) = map.get(k) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: k.to_string(),
                    first: *first,
                });
            }
            map.insert(k.to_string(), (line, v.to_string()));
        }
        Ok(Self { map })
    }

    fn take_raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take_raw(key) {
            None => Ok(None),
            Some((line, value)) => value.parse::<T>().map(Some).map_err(|e| ConfigError::InvalidValue {
                line,
                key: key.to_string(),
                reason: e.to_string(),
                value,
            }),
        }
    }

    fn req<T: FromStr>(&mut self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    fn has_section(&self, section: &str) -> bool {
        self.map.keys().any(|k| k.split('.').next() == Some(section))
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.map.into_iter().min_by_key(|(_, (line, _))| *line) {
            Some((key, (line, _))) => Err(ConfigError::UnknownKey { line, key }),
            None => Ok(()),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut e = Entries::parse(text)?;
        let id = e.opt::<String>("scenario.id")?.unwrap_or_else(|| "unnamed".into());
        let atmosphere = AtmosphereParams {
            cn2: e.req("atmosphere.cn2")?,
            l0: e.req("atmosphere.l0")?,
            alpha_fs: e.req("atmosphere.alpha_fs")?,
        };
        let beam = BeamParams {
            w0: e.req("beam.w0")?,
            gamma: e.req("beam.gamma")?,
            wavelength: e.req("beam.wavelength")?,
        };
        let link = LinkGeometry {
            d_fs: e.req("link.d_fs")?,
            d_fiber: e.req("link.d_fiber")?,
            a_r: e.req("link.a_r")?,
            conv_loss_db: e.req("link.conv_loss_db")?,
            adapter_loss_db: e.req("link.adapter_loss_db")?,
            alpha_fiber: e.req("link.alpha_fiber")?,
        };
        let source = SourceConfig {
            mu: e.req("source.mu")?,
            nu: e.req("source.nu")?,
            vac: 0.0,
            mix_ratio: e.req::<MixRatio>("source.mix_ratio")?,
            rep_rate: e.req("source.rep_rate")?,
            q: e.opt("source.q")?.unwrap_or(0.5),
            duty_cycle: e.opt("source.duty_cycle")?.unwrap_or(1.0),
        };
        let detector = DetectorConfig {
            p_d: e.req("detector.p_d")?,
            eta_d: e.req("detector.eta_d")?,
            visibility: e.req("detector.visibility")?,
            e_mis: e.opt("detector.e_mis")?.unwrap_or(0.0),
            f_ec: e.req("detector.f_ec")?,
            eta_b: e.req("detector.eta_b")?,
        };
        let d = ProtocolSettings::default();
        let protocol = ProtocolSettings {
            fec_ratio: e.opt("protocol.fec_ratio")?.unwrap_or(d.fec_ratio),
            spread_ratio: e.opt("protocol.spread_ratio")?.unwrap_or(d.spread_ratio),
            threshold: e.opt("protocol.threshold")?.unwrap_or(d.threshold),
            sample_fraction: e.opt("protocol.sample_fraction")?.unwrap_or(d.sample_fraction),
            check_block: e.opt("protocol.check_block")?.unwrap_or(d.check_block),
            initial_key_bits: e.opt("protocol.initial_key_bits")?.unwrap_or(d.initial_key_bits),
            masking: e.opt("protocol.masking")?.unwrap_or(d.masking),
        };
        let jitter = if e.has_section("jitter") {
            Some(JitterSpec {
                max_db: e.req("jitter.max_db")?,
                volatility: e.req("jitter.volatility")?,
                reversion: e.req("jitter.reversion")?,
            })
        } else {
            None
        };
        let mut session = SessionLimits {
            max_frames: e.opt("session.max_frames")?,
            max_pulses: e.opt("session.max_pulses")?,
        };
        if session == SessionLimits::default() {
            session.max_pulses = Some(10_000_000);
        }
        let seeds = SeedConfig {
            master: e.opt("seeds.master")?.unwrap_or(1),
            alice: e.opt("seeds.alice")?,
            bob: e.opt("seeds.bob")?,
            channel: e.opt("seeds.channel")?,
            mask: e.opt("seeds.mask")?,
            key: e.opt("seeds.key")?,
        };
        let sweep = if e.has_section("sweep") {
            let g = Grid {
                start: e.req("sweep.start")?,
                stop: e.req("sweep.stop")?,
                step: e.req("sweep.step")?,
            };
            if !(g.step > 0.0) {
                return Err(ConfigError::Invalid("sweep.step must be > 0".into()));
            }
            Some(g)
        } else {
            None
        };
        let simulate_pulses = e.opt("simulate.pulses")?.unwrap_or(10_000_000);
        let measured = if e.has_section("measured") {
            Some(DecoyObservables {
                q_mu: e.req("measured.q_mu")?,
                e_mu: e.req("measured.e_mu")?,
                q_nu: e.req("measured.q_nu")?,
                e_nu: e.req("measured.e_nu")?,
                y0: e.opt("measured.y0")?.unwrap_or_else(|| detector.y0()),
            })
        } else {
            None
        };
        e.finish()?;

        let cfg = Self {
            id,
            atmosphere,
            beam,
            link,
            source,
            detector,
            protocol,
            jitter,
            session,
            seeds,
            sweep,
            simulate_pulses,
            measured,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
            path: p.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.id.is_empty() || self.id.chars().any(|c| c.is_whitespace() || c == '#' || c == ';') {
            return Err(ConfigError::Invalid(format!("scenario.id `{}` must be a single word", self.id)));
        }
        self.atmosphere.validate().map_err(invalid)?;
        self.beam.validate().map_err(invalid)?;
        self.link.validate().map_err(invalid)?;
        self.source.validate().map_err(invalid)?;
        self.detector.validate().map_err(invalid)?;
        if let Some(m) = &self.measured {
            m.validate().map_err(invalid)?;
        }
        if self.simulate_pulses == 0 {
            return Err(ConfigError::Invalid("simulate.pulses must be > 0".into()));
        }
        // Protocol checks that do not depend on the channel.
        self.session_config(1.0).validate().map_err(invalid)
    }

    pub fn loss_schedule(&self) -> LossSchedule {
        match self.jitter {
            Some(j) => LossSchedule::Jitter(j),
            None => LossSchedule::Static,
        }
    }

    /// Session parameters for an end-to-end transmittance `eta`.
    pub fn session_config(&self, eta: f64) -> SessionConfig {
        SessionConfig {
            source: self.source,
            detector: self.detector,
            eta,
            settings: self.protocol,
            loss: self.loss_schedule(),
            seeds: self.seeds.resolve(),
            limits: self.session,
        }
    }

    /// Canonical text form; parsing it yields `self` again.
    pub fn to_canonical(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let f = |x: f64| format!("{x:?}");
        kv("scenario.id", self.id.clone());
        kv("atmosphere.cn2", f(self.atmosphere.cn2));
        kv("atmosphere.l0", f(self.atmosphere.l0));
        kv("atmosphere.alpha_fs", f(self.atmosphere.alpha_fs));
        kv("beam.w0", f(self.beam.w0));
        kv("beam.gamma", f(self.beam.gamma));
        kv("beam.wavelength", f(self.beam.wavelength));
        kv("link.d_fs", f(self.link.d_fs));
        kv("link.d_fiber", f(self.link.d_fiber));
        kv("link.a_r", f(self.link.a_r));
        kv("link.conv_loss_db", f(self.link.conv_loss_db));
        kv("link.adapter_loss_db", f(self.link.adapter_loss_db));
        kv("link.alpha_fiber", f(self.link.alpha_fiber));
        kv("source.mu", f(self.source.mu));
        kv("source.nu", f(self.source.nu));
        kv("source.mix_ratio", self.source.mix_ratio.to_string());
        kv("source.rep_rate", f(self.source.rep_rate));
        kv("source.q", f(self.source.q));
        kv("source.duty_cycle", f(self.source.duty_cycle));
        kv("detector.p_d", f(self.detector.p_d));
        kv("detector.eta_d", f(self.detector.eta_d));
        kv("detector.eta_b", f(self.detector.eta_b));
        kv("detector.visibility", f(self.detector.visibility));
        kv("detector.e_mis", f(self.detector.e_mis));
        kv("detector.f_ec", f(self.detector.f_ec));
        let p = &self.protocol;
        kv("protocol.fec_ratio", p.fec_ratio.to_string());
        kv("protocol.spread_ratio", p.spread_ratio.to_string());
        kv("protocol.threshold", f(p.threshold));
        kv("protocol.sample_fraction", f(p.sample_fraction));
        kv("protocol.check_block", p.check_block.to_string());
        kv("protocol.initial_key_bits", p.initial_key_bits.to_string());
        kv("protocol.masking", p.masking.to_string());
        if let Some(j) = &self.jitter {
            kv("jitter.max_db", f(j.max_db));
            kv("jitter.volatility", f(j.volatility));
            kv("jitter.reversion", f(j.reversion));
        }
        if let Some(n) = self.session.max_frames {
            kv("session.max_frames", n.to_string());
        }
        if let Some(n) = self.session.max_pulses {
            kv("session.max_pulses", n.to_string());
        }
        let s = &self.seeds;
        kv("seeds.master", s.master.to_string());
        for (name, v) in [
            ("alice", s.alice),
            ("bob", s.bob),
            ("channel", s.channel),
            ("mask", s.mask),
            ("key", s.key),
        ] {
            if let Some(v) = v {
                kv(&format!("seeds.{name}"), v.to_string());
            }
        }
        if let Some(g) = &self.sweep {
            kv("sweep.start", f(g.start));
            kv("sweep.stop", f(g.stop));
            kv("sweep.step", f(g.step));
        }
        kv("simulate.pulses", self.simulate_pulses.to_string());
        if let Some(m) = &self.measured {
            kv("measured.q_mu", f(m.q_mu));
            kv("measured.e_mu", f(m.e_mu));
            kv("measured.q_nu", f(m.q_nu));
            kv("measured.e_nu", f(m.e_nu));
            kv("measured.y0", f(m.y0));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BUNDLED: [&str; 3] = [
        include_str!("../configs/paper_tableS1.cfg"),
        include_str!("../configs/paper_fig4_upgraded.cfg"),
        include_str!("../configs/desk_session.cfg"),
    ];

    fn base() -> ScenarioConfig {
        ScenarioConfig::parse(BUNDLED[0]).unwrap()
    }

    #[test]
    fn bundled_configs_parse_and_roundtrip() {
        for text in BUNDLED {
            let c = ScenarioConfig::parse(text).unwrap();
            let canon = c.to_canonical();
            let again = ScenarioConfig::parse(&canon).unwrap();
            assert_eq!(again, c);
            assert_eq!(again.to_canonical(), canon);
        }
    }

    #[test]
    fn diagnostics_name_the_problem() {
        let text = base().to_canonical();
        let missing = text.replace("beam.gamma", "# beam.gamma");
        assert_eq!(ScenarioConfig::parse(&missing), Err(ConfigError::Missing("beam.gamma".into())));

        let unknown = format!("{text}beam.colour = red\n");
        assert!(matches!(
            ScenarioConfig::parse(&unknown),
            Err(ConfigError::UnknownKey { key, .. }) if key == "beam.colour"
        ));

        let dup = format!("{text}link.d_fs = 5\n");
        assert!(matches!(
            ScenarioConfig::parse(&dup),
            Err(ConfigError::Duplicate { first: 8, .. })
        ));

        let bad = text.replace("source.mu = 0.71", "source.mu = lots");
        assert!(matches!(
            ScenarioConfig::parse(&bad),
            Err(ConfigError::InvalidValue { line: 14, key, .. }) if key == "source.mu"
        ));

        assert!(matches!(
            ScenarioConfig::parse("just words\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));

        let neg = text.replace("beam.w0 = 0.00174", "beam.w0 = -1.0");
        assert!(matches!(ScenarioConfig::parse(&neg), Err(ConfigError::Invalid(m)) if m.contains("w0")));
    }

    #[test]
    fn grids() {
        assert_eq!("0:1000:250".parse::<Grid>().unwrap().points(), vec![0.0, 250.0, 500.0, 750.0, 1000.0]);
        assert_eq!("5:1:1".parse::<Grid>().unwrap().points(), Vec::<f64>::new());
        assert_eq!("0:0.3:0.1".parse::<Grid>().unwrap().points().len(), 4);
        assert!("0:1".parse::<Grid>().is_err());
        assert!("0:1:0".parse::<Grid>().is_err());
        assert!("a:1:1".parse::<Grid>().is_err());
    }

    proptest! {
        #[test]
        fn canonical_form_is_a_fixed_point(
            cn2 in 0.0f64..1e-12,
            d_fs in 0.0f64..30_000.0,
            mu in 0.3f64..1.0,
            spread in 1u32..4000,
            master in any::<u64>(),
            alice in proptest::option::of(any::<u64>()),
            jitter in proptest::option::of((0.0f64..5.0, 0.0f64..10.0, 0.0f64..2.0)),
            frames in proptest::option::of(1u64..1000),
        ) {
            let mut c = base();
            c.atmosphere.cn2 = cn2;
            c.link.d_fs = d_fs;
            c.source.mu = mu;
            c.source.nu = mu / 3.0;
            c.protocol.spread_ratio = spread;
            c.seeds.master = master;
            c.seeds.alice = alice;
            c.jitter = jitter.map(|(max_db, volatility, reversion)| JitterSpec { max_db, volatility, reversion });
            c.session.max_frames = frames;
            let text = c.to_canonical();
            let parsed = ScenarioConfig::parse(&text).unwrap();
            prop_assert_eq!(&parsed, &c);
            prop_assert_eq!(parsed.to_canonical(), text);
        }
    }
}
