use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phaselink_core::harness::{EXIT_ABORT, EXIT_CONFIG, EXIT_OK, EXIT_REGIME, SWEEP_HEADER};

fn bundled(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "configs", name].iter().collect()
}

fn phaselink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phaselink"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("spawn phaselink")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Copies a bundled config into `dir`, applying `edit` to its text.
fn variant(dir: &Path, name: &str, edit: impl Fn(String) -> String) -> PathBuf {
    let text = std::fs::read_to_string(bundled(name)).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, edit(text)).unwrap();
    p
}

#[test]
fn sweep_header_is_stable() {
    let cfg = bundled("paper_tableS1.cfg");
    let o = phaselink(&["rate-sweep", "--config", cfg.to_str().unwrap(), "--grid", "1000:1400:200"]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), SWEEP_HEADER.join(","));
    assert!(lines.all(|l| l.split(',').count() == SWEEP_HEADER.len()));
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().nth(1).unwrap().starts_with("1000.0,"));
}

#[test]
fn empty_grid_prints_header_only() {
    let cfg = bundled("paper_tableS1.cfg");
    let o = phaselink(&["rate-sweep", "--config", cfg.to_str().unwrap(), "--grid", "1:0:1"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    assert_eq!(stdout(&o), format!("{}\n", SWEEP_HEADER.join(",")));
}

#[test]
fn missing_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = variant(dir.path(), "paper_tableS1.cfg", |t| {
        t.lines().filter(|l| !l.starts_with("source.mu ")).collect::<Vec<_>>().join("\n")
    });
    let o = phaselink(&["link-budget", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&o).contains("source.mu"), "{}", stderr(&o));
}

#[test]
fn bad_value_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = variant(dir.path(), "paper_tableS1.cfg", |t| t.replace("link.a_r = 0.06", "link.a_r = wide"));
    let o = phaselink(&["link-budget", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let err = stderr(&o);
    assert!(err.contains("link.a_r") && err.contains("line"), "{err}");
}

#[test]
fn beyond_critical_distance_is_a_regime_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = variant(dir.path(), "paper_tableS1.cfg", |t| t.replace("link.d_fs = 1400", "link.d_fs = 480000"));
    let o = phaselink(&["link-budget", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_REGIME), "{}", stderr(&o));
}

#[test]
fn noisy_session_aborts_with_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = variant(dir.path(), "desk_session.cfg", |t| {
        t.replace("detector.e_mis = 0.01", "detector.e_mis = 0.12")
            .replace("session.max_pulses = 10000000", "session.max_pulses = 1000000")
    });
    let o = phaselink(&["session", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_ABORT), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("quantity,value\n"));
    assert!(text.lines().any(|l| l == "aborted,true"), "{text}");
}

#[test]
fn out_files_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bundled("paper_tableS1.cfg");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = phaselink(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--pulses",
            "200000",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(EXIT_OK));
        assert!(o.stdout.is_empty());
        std::fs::read(out).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn seed_override_changes_simulation() {
    let cfg = bundled("paper_tableS1.cfg");
    let run = |seed: &str| {
        stdout(&phaselink(&["simulate", "--config", cfg.to_str().unwrap(), "--pulses", "200000", "--seed", seed]))
    };
    assert_ne!(run("1"), run("2"));
    assert_eq!(run("3"), run("3"));
}

#[test]
fn json_record_carries_config_hash() {
    let cfg = bundled("paper_fig4_upgraded.cfg");
    let o = phaselink(&["link-budget", "--config", cfg.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let hash = v["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(hash.bytes().all(|b| b.is_ascii_hexdigit()));
    assert_eq!(v["command"], "link-budget");
    assert_eq!(v["timestamp"], 1700000000);
    assert!(!v["tables"][0]["rows"].as_array().unwrap().is_empty());
}
