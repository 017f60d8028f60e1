//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use phaselink_core::config::ScenarioConfig;
use phaselink_core::harness;
use phaselink_core::optics::{self, db_to_linear};
use phaselink_core::pulse_mc::{simulate_batch, PulseClass, PulsePlan};
use phaselink_core::rate::{self, DecoyObservables, E0};

fn config(name: &str) -> ScenarioConfig {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "configs", name].iter().collect();
    ScenarioConfig::load(p).expect("bundled config")
}

fn measured_eta(cfg: &ScenarioConfig) -> f64 {
    db_to_linear(17.83 + 6.5) * cfg.detector.eta_d
}

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn c1() -> Outcome {
    let cfg = config("paper_tableS1.cfg");
    let d = optics::critical_distance(&cfg.atmosphere, &cfg.beam).map_err(|e| e.to_string())?;
    let rel = (d - 4.75e5).abs() / 4.75e5;
    let msg = format!("critical distance {d:.1} m (rel. dev. {rel:.4})");
    if rel <= 0.01 { Ok(msg) } else { Err(msg) }
}

fn c2() -> Outcome {
    let cfg = config("paper_tableS1.cfg");
    let b = optics::transmittance(&cfg.link, &cfg.atmosphere, &cfg.beam, cfg.detector.eta_b, cfg.detector.eta_d)
        .map_err(|e| e.to_string())?;
    let ch = b.breakdown.channel_db();
    let msg = format!("channel loss {ch:.3} dB vs measured 17.83 dB");
    if (ch - 17.83).abs() <= 1.5 { Ok(msg) } else { Err(msg) }
}

fn c3() -> Outcome {
    let cfg = config("paper_tableS1.cfg");
    let g = rate::forward_gains(measured_eta(&cfg), &cfg.source, &cfg.detector);
    let (dm, dn) = ((g.q_mu / 5.31e-4 - 1.0).abs(), (g.q_nu / 2.09e-4 - 1.0).abs());
    let msg = format!("Q_mu {:.4e} ({:+.2}%), Q_nu {:.4e} ({:+.2}%)", g.q_mu, dm * 100.0, g.q_nu, dn * 100.0);
    if dm <= 0.02 && dn <= 0.02 { Ok(msg) } else { Err(msg) }
}

fn c4() -> Outcome {
    let p = rate::recycling_fraction(5.31e-4);
    let msg = format!("P_rec = {p:.6}");
    if (p - 0.99973).abs() <= 1e-5 { Ok(msg) } else { Err(msg) }
}

fn c5() -> Outcome {
    let cfg = config("paper_tableS1.cfg");
    let m = cfg.measured.ok_or("config lacks measured observables")?;
    let est = rate::decoy_estimate(&m, &cfg.source).map_err(|e| e.to_string())?;
    let cs = rate::secrecy_capacity(&m, &est, &cfg.source, &cfg.detector).map_err(|e| e.to_string())?;
    let kbps = cs.cs_raw * 1.25e9 * 30.0 / 33.0 / 1e3;
    let rel = (cs.cs_raw / 1.44e-5 - 1.0).abs();
    let msg = format!("cs_raw {:.4e} (rel. dev. {rel:.4}), {kbps:.2} kbps", cs.cs_raw);
    if rel <= 0.03 && (13.51..=30.42).contains(&kbps) { Ok(msg) } else { Err(msg) }
}

fn c6() -> Outcome {
    let cfg = config("paper_fig4_upgraded.cfg");
    let geom = cfg.link.with_d_fs(30_000.0);
    let geom = optics::LinkGeometry { d_fiber: 10_000.0, ..geom };
    let p = rate::evaluate_link(&geom, &cfg.atmosphere, &cfg.beam, &cfg.source, &cfg.detector)
        .map_err(|e| e.to_string())?;
    let msg = format!("key_gen_rate at 30 km = {:.1} bit/s", p.report.key_gen_rate);
    if p.report.key_gen_rate > 0.0 { Ok(msg) } else { Err(msg) }
}

fn c7() -> Outcome {
    let cfg = config("paper_tableS1.cfg");
    let eta = measured_eta(&cfg);
    let plan = PulsePlan::new(10_000_000, &cfg.source.mix_ratio, 7).map_err(|e| e.to_string())?;
    let stats = simulate_batch(&plan, eta, &cfg.source, &cfg.detector);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for class in [PulseClass::Signal, PulseClass::Decoy] {
        let c = stats.class(class);
        let (q, e) = rate::gain_and_qber(eta, class.intensity(&cfg.source), &cfg.detector);
        let zq = (c.gain() - q) / c.gain_se();
        let ze = (c.qber() - e) / c.qber_se();
        worst = worst.max(zq.abs()).max(ze.abs());
        parts.push(format!("{} z(Q) {zq:+.2} z(E) {ze:+.2}", class.name()));
    }
    let msg = format!("{}; max |z| {worst:.2}", parts.join(", "));
    if worst < 4.0 { Ok(msg) } else { Err(msg) }
}

fn c8() -> Outcome {
    let cfg = config("paper_tableS1.cfg");
    let mut det = cfg.detector;
    det.e_mis = 0.0;
    let (mu, y0) = (cfg.source.mu, det.y0());
    let mut n = 0;
    for i in 0..10 {
        let eta = 10f64.powf(-6.0 + 6.0 * i as f64 / 9.0);
        for j in 0..10 {
            det.visibility = 0.9 + 0.1 * j as f64 / 9.0;
            let obs: DecoyObservables = rate::forward_gains(eta, &cfg.source, &det);
            let est = rate::decoy_estimate(&obs, &cfg.source)
                .map_err(|e| format!("eta {eta:.1e}, V {:.3}: {e}", det.visibility))?;
            let y1 = y0 + eta;
            let q1_true = y1 * mu * (-mu).exp();
            let e1_true = (E0 * y0 + det.e_optical() * eta) / y1;
            let ok = est.q1 > 0.0 && est.q1 <= q1_true * (1.0 + 1e-12) && est.e1 >= e1_true * (1.0 - 1e-12);
            if !ok {
                return Err(format!(
                    "eta {eta:.1e}, V {:.3}: q1 {:.4e} vs {:.4e}, e1 {:.4e} vs {:.4e}",
                    det.visibility, est.q1, q1_true, est.e1, e1_true
                ));
            }
            n += 1;
        }
    }
    Ok(format!("{n} grid points satisfy 0 < Q1 <= true and e1 >= true"))
}

fn c9() -> Outcome {
    let cfg = config("desk_session.cfg");
    let (r, _) = harness::run_scenario_session(&cfg).map_err(|(e, _)| e.to_string())?;
    let target = cfg.detector.e_optical();
    let zq = (r.qber - target) / r.qber_se;
    let dp = (r.p_rec_empirical - (1.0 - r.q_mu_hat / 2.0)).abs();
    let msg = format!(
        "{} pulses, {}/{} frames delivered, {} mismatches, QBER {:.5} (z {zq:+.2}), |dp_rec| {dp:.2e}",
        r.pulses, r.frames_ok, r.frames, r.payload_mismatches, r.qber
    );
    let ok = r.pulses >= 10_000_000
        && r.frames_ok > 0
        && r.payload_mismatches == 0
        && zq.abs() <= 3.0
        && dp <= 1e-3
        && r.ledger.is_conserved();
    if ok { Ok(msg) } else { Err(msg) }
}

fn c10() -> Outcome {
    let render = || -> Result<Vec<String>, String> {
        let s1 = config("paper_tableS1.cfg");
        let up = config("paper_fig4_upgraded.cfg");
        let mut desk = config("desk_session.cfg");
        desk.session.max_pulses = Some(1_000_000);
        let e = |e: harness::HarnessError| e.to_string();
        Ok(vec![
            harness::link_budget_table(&s1).map_err(e)?.to_csv(),
            harness::rate_sweep_table(&s1, None).map_err(e)?.to_csv(),
            harness::rate_sweep_table(&up, None).map_err(e)?.to_csv(),
            harness::simulate_table(&s1, 1_000_000).map_err(e)?.to_csv(),
            harness::run_scenario_session(&desk).map_err(|(x, _)| x.to_string())?.1.to_csv(),
        ])
    };
    let a = render()?;
    let b = render()?;
    let msg = format!("{} scenario outputs compared", a.len());
    if a == b { Ok(msg) } else { Err(msg) }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "critical distance", Duration::from_secs(1), c1),
        (2, "link budget", Duration::from_secs(1), c2),
        (3, "gain reconstruction", Duration::from_secs(1), c3),
        (4, "recycling law", Duration::from_secs(1), c4),
        (5, "secrecy capacity", Duration::from_secs(1), c5),
        (6, "30 km feasibility", Duration::from_secs(1), c6),
        (7, "Monte Carlo vs closed form", Duration::from_secs(60), c7),
        (8, "estimator bound", Duration::from_secs(10), c8),
        (9, "end-to-end session", Duration::from_secs(120), c9),
        (10, "determinism", Duration::from_secs(120), c10),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let t = Instant::now();
        let outcome = run();
        let dt = t.elapsed();
        let (pass, detail) = match outcome {
            Ok(m) if dt <= budget => (true, m),
            Ok(m) => (false, format!("{m}; over time budget {budget:?}")),
            Err(m) => (false, m),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} {}: {name}: {detail} [{:.3} s]",
            if pass { "PASS" } else { "FAIL" },
            dt.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
