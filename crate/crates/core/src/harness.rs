//! Tables behind the CLI subcommands and the persisted result record.
//!
//! Every table is rendered from the config and seeds alone, so identical
//! inputs give byte-identical CSV. Only the record's timestamp varies; set
//! `SOURCE_DATE_EPOCH` to pin it.

use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, Grid, ScenarioConfig};
use crate::optics::{self, OpticsError};
use crate::protocol::{run_session, ProtocolError, SessionReport};
use crate::pulse_mc::{simulate_batch, McError, PulseClass, PulsePlan};
use crate::rate::{self, RateError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_REGIME: i32 = 3;
pub const EXIT_ABORT: i32 = 4;

/// Column order of `rate-sweep` output.
pub const SWEEP_HEADER: [&str; 8] = ["d_fs_m", "key_gen_rate_bps", "cs_raw", "q_mu", "e_mu", "q1", "e1", "collapsed"];
pub const LINK_BUDGET_HEADER: [&str; 3] = ["quantity", "value", "unit"];
pub const SIMULATE_HEADER: [&str; 12] = [
    "class",
    "sent",
    "clicked",
    "errored",
    "gain",
    "gain_se",
    "gain_model",
    "gain_z",
    "qber",
    "qber_se",
    "qber_model",
    "qber_z",
];
pub const SESSION_HEADER: [&str; 2] = ["quantity", "value"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    MonteCarlo(#[from] McError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

impl HarnessError {
    pub fn is_regime_violation(&self) -> bool {
        matches!(
            self,
            HarnessError::Optics(OpticsError::RegimeViolation { .. })
                | HarnessError::Rate(RateError::Optics(OpticsError::RegimeViolation { .. }))
        )
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Usage(_) => EXIT_CONFIG,
            HarnessError::Protocol(ProtocolError::Aborted { .. }) => EXIT_ABORT,
            e if e.is_regime_violation() => EXIT_REGIME,
            _ => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// Shortest representation that parses back to the same `f64`; undefined
/// values (no events) are left empty.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:?}")
    }
}

fn kv(t: &mut Table, name: &str, value: String, unit: &str) {
    t.push(vec![name.into(), value, unit.into()]);
}

pub fn link_budget_table(cfg: &ScenarioConfig) -> Result<Table, HarnessError> {
    let b = optics::transmittance(&cfg.link, &cfg.atmosphere, &cfg.beam, cfg.detector.eta_b, cfg.detector.eta_d)?;
    let mut t = Table::new("link_budget", &LINK_BUDGET_HEADER);
    for (name, db) in b.breakdown.items() {
        kv(&mut t, &format!("{name}_loss"), num(db), "dB");
    }
    kv(&mut t, "channel_loss", num(b.breakdown.channel_db()), "dB");
    kv(&mut t, "total_loss", num(b.breakdown.total_db()), "dB");
    kv(&mut t, "eta_channel", num(b.eta_channel()), "1");
    kv(&mut t, "eta_total", num(b.eta_total), "1");
    kv(&mut t, "w_eff", num(b.w_eff), "m");
    kv(&mut t, "rytov_variance", num(b.rytov), "1");
    kv(&mut t, "rayleigh_length", num(optics::rayleigh_length(&cfg.beam)), "m");
    if let Ok(d) = optics::critical_distance(&cfg.atmosphere, &cfg.beam) {
        kv(&mut t, "critical_distance", num(d), "m");
    }
    let fwd = rate::forward_gains(b.eta_total, &cfg.source, &cfg.detector);
    kv(&mut t, "model_q_mu", num(fwd.q_mu), "1");
    kv(&mut t, "model_e_mu", num(fwd.e_mu), "1");
    kv(&mut t, "model_p_rec", num(rate::recycling_fraction(fwd.q_mu)), "1");
    if let Some(m) = &cfg.measured {
        let est = rate::decoy_estimate(m, &cfg.source)?;
        let cs = rate::secrecy_capacity(m, &est, &cfg.source, &cfg.detector)?;
        let r = rate::rate_report(m, cs, &cfg.source);
        kv(&mut t, "measured_q1", num(est.q1), "1");
        kv(&mut t, "measured_e1", num(est.e1), "1");
        kv(&mut t, "measured_cs_raw", num(cs.cs_raw), "bit/pulse");
        kv(&mut t, "measured_key_gen_rate", num(r.key_gen_rate), "bit/s");
        kv(&mut t, "measured_p_rec", num(r.p_rec), "1");
    }
    Ok(t)
}

pub fn rate_sweep_table(cfg: &ScenarioConfig, grid: Option<Grid>) -> Result<Table, HarnessError> {
    let grid = grid
        .or(cfg.sweep)
        .ok_or_else(|| HarnessError::Usage("no grid: pass --grid or set sweep.start/stop/step".into()))?;
    let pts = rate::rate_sweep(
        &cfg.link,
        &cfg.atmosphere,
        &cfg.beam,
        &cfg.source,
        &cfg.detector,
        &grid.points(),
        cfg.link.d_fiber,
    )?;
    let mut t = Table::new("rate_sweep", &SWEEP_HEADER);
    for p in pts {
        let est = p.estimate.unwrap_or(rate::DecoyEstimate { q1: 0.0, e1: 0.5 });
        t.push(vec![
            num(p.d_fs),
            num(p.report.key_gen_rate),
            num(p.report.cs_raw),
            num(p.observables.q_mu),
            num(p.observables.e_mu),
            num(est.q1),
            num(est.e1),
            u8::from(p.collapsed()).to_string(),
        ]);
    }
    Ok(t)
}

pub fn simulate_table(cfg: &ScenarioConfig, pulses: u64) -> Result<Table, HarnessError> {
    let b = optics::transmittance(&cfg.link, &cfg.atmosphere, &cfg.beam, cfg.detector.eta_b, cfg.detector.eta_d)?;
    let plan = PulsePlan::new(pulses as usize, &cfg.source.mix_ratio, cfg.seeds.simulate())?;
    let stats = simulate_batch(&plan, b.eta_total, &cfg.source, &cfg.detector);
    let mut t = Table::new("simulate", &SIMULATE_HEADER);
    for class in PulseClass::ALL {
        let c = stats.class(class);
        let (gain_model, qber_model) = rate::gain_and_qber(b.eta_total, class.intensity(&cfg.source), &cfg.detector);
        let z = |x: f64, model: f64, se: f64| if se > 0.0 { (x - model) / se } else { f64::NAN };
        t.push(vec![
            class.name().into(),
            c.sent.to_string(),
            c.clicked.to_string(),
            c.errored.to_string(),
            num(c.gain()),
            num(c.gain_se()),
            num(gain_model),
            num(z(c.gain(), gain_model, c.gain_se())),
            num(c.qber()),
            num(c.qber_se()),
            num(qber_model),
            num(z(c.qber(), qber_model, c.qber_se())),
        ]);
    }
    Ok(t)
}

pub fn session_table(r: &SessionReport) -> Table {
    let mut t = Table::new("session", &SESSION_HEADER);
    let mut row = |k: &str, v: String| t.push(vec![k.into(), v]);
    row("pulses", r.pulses.to_string());
    row("frames", r.frames.to_string());
    row("frames_ok", r.frames_ok.to_string());
    row("frames_failed", r.frames_failed.to_string());
    row("frames_lost", r.frames_lost.to_string());
    row("frames_corrupt", r.frames_corrupt.to_string());
    row("payload_mismatches", r.payload_mismatches.to_string());
    row("qber", num(r.qber));
    row("qber_se", num(r.qber_se));
    row("samples", r.samples.to_string());
    row("q_mu_hat", num(r.q_mu_hat));
    row("p_rec_empirical", num(r.p_rec_empirical));
    row("p_rec_expected", num(r.p_rec_expected));
    row("sim_time_s", num(r.sim_time));
    row("comm_rate_bps", num(r.comm_rate));
    row("key_gen_rate_bps", num(r.key_gen_rate));
    row("key_cons_rate_bps", num(r.key_cons_rate));
    row("key_consumed_bits", r.ledger.consumed.to_string());
    row("key_recycled_bits", r.ledger.recycled.to_string());
    row("key_generated_bits", r.ledger.generated.to_string());
    row("key_pool_bits", r.ledger.pool_bits.to_string());
    row("classical_bytes", r.classical_bytes.to_string());
    row("aborted", r.aborted.to_string());
    // Commas would break the two-column layout.
    row("abort_reason", r.abort_reason.clone().unwrap_or_default().replace(',', ";"));
    t
}

/// Runs a loopback session for the scenario. An abort still yields the
/// report's table alongside the error.
pub fn run_scenario_session(cfg: &ScenarioConfig) -> Result<(SessionReport, Table), (HarnessError, Option<Table>)> {
    let eta = optics::transmittance(&cfg.link, &cfg.atmosphere, &cfg.beam, cfg.detector.eta_b, cfg.detector.eta_d)
        .map_err(|e| (e.into(), None))?
        .eta_total;
    match run_session(&cfg.session_config(eta)) {
        Ok(r) => {
            let t = session_table(&r);
            Ok((r, t))
        }
        Err(ProtocolError::Aborted { reason, report }) => {
            let t = session_table(&report);
            Err((ProtocolError::Aborted { reason, report }.into(), Some(t)))
        }
        Err(e) => Err((e.into(), None)),
    }
}

/// SHA-256 of the canonical config with git blob framing.
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    let text = cfg.to_canonical();
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", text.len()).as_bytes());
    h.update(text.as_bytes());
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResultRecord {
    pub scenario: String,
    pub command: String,
    pub config_hash: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub tables: Vec<Table>,
}

impl ResultRecord {
    pub fn new(cfg: &ScenarioConfig, command: &str, tables: Vec<Table>) -> Self {
        let timestamp = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()));
        Self {
            scenario: cfg.id.clone(),
            command: command.into(),
            config_hash: config_hash(cfg),
            timestamp,
            tables,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serializes");
        s.push('\n');
        s
    }
}
