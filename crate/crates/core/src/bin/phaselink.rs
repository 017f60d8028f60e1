use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use phaselink_core::config::{Grid, ScenarioConfig};
use phaselink_core::harness::{self, HarnessError, ResultRecord, Table};
use phaselink_core::optics;
use phaselink_core::protocol::{run_alice_tcp, run_bob_tcp};

#[derive(Parser)]
#[command(name = "phaselink", version, about = "Link budgets, key rates and protocol sessions for a phase-encoded quantum link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Role {
    Alice,
    Bob,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seeds.master`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Itemized loss budget and transmittance.
    LinkBudget {
        #[command(flatten)]
        common: Common,
    },
    /// Key rate against free-space distance.
    RateSweep {
        #[command(flatten)]
        common: Common,
        /// Free-space distances in metres, `start:stop:step`, inclusive.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Photon-level Monte Carlo batch against the closed-form gains.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Overrides `simulate.pulses`.
        #[arg(long)]
        pulses: Option<u64>,
    },
    /// End-to-end session; in-process unless `--role` is given.
    Session {
        #[command(flatten)]
        common: Common,
        /// Run one endpoint over TCP: Bob listens on `--addr`, Alice connects.
        #[arg(long, value_enum, requires = "addr")]
        role: Option<Role>,
        #[arg(long)]
        addr: Option<String>,
    },
}

fn load(common: &Common) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seeds.master = s;
    }
    Ok(cfg)
}

fn emit(common: &Common, cfg: &ScenarioConfig, command: &str, table: Table) -> Result<(), HarnessError> {
    let text = match common.format {
        Format::Csv => table.to_csv(),
        Format::Json => ResultRecord::new(cfg, command, vec![table]).to_json(),
    };
    match &common.out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(p) => std::fs::write(p, text).map_err(|e| HarnessError::Io {
            path: p.display().to_string(),
            msg: e.to_string(),
        }),
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::LinkBudget { common } => {
            let cfg = load(&common)?;
            let t = harness::link_budget_table(&cfg)?;
            emit(&common, &cfg, "link-budget", t)
        }
        Command::RateSweep { common, grid } => {
            let cfg = load(&common)?;
            let grid = grid
                .map(|g| g.parse::<Grid>().map_err(|e| HarnessError::Usage(format!("--grid: {e}"))))
                .transpose()?;
            let t = harness::rate_sweep_table(&cfg, grid)?;
            emit(&common, &cfg, "rate-sweep", t)
        }
        Command::Simulate { common, pulses } => {
            let cfg = load(&common)?;
            let t = harness::simulate_table(&cfg, pulses.unwrap_or(cfg.simulate_pulses))?;
            emit(&common, &cfg, "simulate", t)
        }
        Command::Session { common, role, addr } => {
            let cfg = load(&common)?;
            match role {
                None => match harness::run_scenario_session(&cfg) {
                    Ok((_, t)) => emit(&common, &cfg, "session", t),
                    Err((e, t)) => {
                        if let Some(t) = t {
                            emit(&common, &cfg, "session", t)?;
                        }
                        Err(e)
                    }
                },
                Some(role) => {
                    let addr = addr.expect("clap enforces --addr");
                    let eta = optics::transmittance(
                        &cfg.link,
                        &cfg.atmosphere,
                        &cfg.beam,
                        cfg.detector.eta_b,
                        cfg.detector.eta_d,
                    )?
                    .eta_total;
                    let scfg = cfg.session_config(eta);
                    match role {
                        Role::Alice => {
                            let r = run_alice_tcp(&scfg, addr.as_str())?;
                            emit(&common, &cfg, "session", harness::session_table(&r))
                        }
                        Role::Bob => {
                            let listener = TcpListener::bind(addr.as_str()).map_err(|e| HarnessError::Io {
                                path: addr.clone(),
                                msg: e.to_string(),
                            })?;
                            let b = run_bob_tcp(&scfg, &listener)?;
                            eprintln!(
                                "bob: {} frames decoded, aborted = {}, pool = {} bits",
                                b.decoded.len(),
                                b.aborted,
                                b.ledger.pool_bits
                            );
                            Ok(())
                        }
                    }
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(harness::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
