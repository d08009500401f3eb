use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use etrmpc_cli::{compare, load_config, output::trace_columns, run, Overrides};
use etrmpc_core::config::{ExperimentConfig, SetSpec};
use etrmpc_core::Method;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn etrmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etrmpc")).args(args).output().unwrap()
}

fn reference() -> ExperimentConfig {
    load_config(&config_path("batch_reactor.toml"), &Overrides::default()).unwrap()
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, cfg.to_toml().unwrap()).unwrap();
    p
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn bundled_configs_match_reference() {
    assert_eq!(reference(), ExperimentConfig::batch_reactor());
    for name in ["batch_reactor.toml", "batch_reactor_worst_case.toml", "batch_reactor_impulse.toml"] {
        let c = load_config(&config_path(name), &Overrides::default()).unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, back, "{name}");
    }
}

#[test]
fn validate_reference_reports_nilpotency() {
    let out = etrmpc(&["validate", "--config", config_path("batch_reactor.toml").to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.starts_with("‖L_4‖_F")).unwrap();
    let v: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!(v <= 1e-8);
}

#[test]
fn validate_rejects_oversized_disturbance() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = reference();
    c.sets.w = SetSpec::InfNorm { inf_norm: 3.0 };
    let p = write_config(dir.path(), &c);
    let out = etrmpc(&["validate", "--config", p.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("is empty"));
}

#[test]
fn validate_rejects_short_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = reference();
    c.controller.horizon = 4;
    let p = write_config(dir.path(), &c);
    let out = etrmpc(&["validate", "--config", p.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));
}

#[test]
fn parse_errors_carry_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    let text = fs::read_to_string(config_path("batch_reactor.toml")).unwrap().replace("horizon = 10", "horizon = \"ten\"");
    fs::write(&p, text).unwrap();
    let out = etrmpc(&["validate", "--config", p.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line") && err.contains("horizon"), "{err}");
}

#[test]
fn run_writes_all_outputs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("batch_reactor.toml");
    let mut bytes = Vec::new();
    for sub in ["a", "b"] {
        let o = dir.path().join(sub);
        let out = etrmpc(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", o.to_str().unwrap(), "--steps", "25"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        bytes.push(fs::read(o.join("trace.csv")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);

    let o = dir.path().join("a");
    let hash = load_config(&cfg, &Overrides { steps: Some(25), ..Default::default() }).unwrap().hash().unwrap();
    let first = format!("# config_hash={hash} seed=2024");
    for f in ["trace.csv", "plot_state_0.csv", "plot_state_3.csv", "plot_inputs.csv", "plot_value.csv"] {
        let text = fs::read_to_string(o.join(f)).unwrap();
        assert!(text.starts_with(&first), "{f}");
    }
    let text = fs::read_to_string(o.join("trace.csv")).unwrap();
    let header: Vec<String> = text.lines().nth(1).unwrap().split(',').map(String::from).collect();
    assert_eq!(header, trace_columns(4, 2));
    let rows = data_rows(&o.join("trace.csv"));
    assert_eq!(rows.len(), 25);
    assert_eq!(rows[0][8], "initial");
    for r in &rows {
        let v_star = &r[9];
        let cause = &r[8];
        assert_eq!(v_star.is_empty(), cause.is_empty());
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"], hash);
    assert_eq!(summary["seed"], 2024);
    assert_eq!(summary["steps"], 25);
    let sched: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("schedules.json")).unwrap()).unwrap();
    assert_eq!(sched["config_hash"], hash);
    assert_eq!(sched["schedules"][0]["boxes"].as_array().unwrap().len(), 9);
    assert_eq!(data_rows(&o.join("plot_state_2.csv")).len(), 26);
}

#[test]
fn overrides_reach_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("batch_reactor.toml");
    let o = dir.path().join("s");
    let out = etrmpc(&[
        "run", "--config", cfg.to_str().unwrap(), "--out-dir", o.to_str().unwrap(),
        "--seed", "7", "--method", "lp2", "--steps", "4",
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(o.join("trace.csv")).unwrap();
    assert!(text.lines().next().unwrap().contains("seed=7"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["method"], "LP2");
    assert_eq!(summary["steps"], 4);
    assert!(!etrmpc(&["run", "--config", cfg.to_str().unwrap(), "--method", "CP3"]).status.success());
}

#[test]
fn event_triggered_never_solves_more_than_periodic() {
    let dir = tempfile::tempdir().unwrap();
    let mut solves = Vec::new();
    for m in [Method::Periodic, Method::Cp1] {
        let mut c = reference();
        c.run.method = m;
        solves.push(run(&c, &dir.path().join(m.name())).unwrap().statistics.solves);
    }
    assert!(solves[1] <= solves[0], "{solves:?}");
}

#[test]
fn lp_boxes_dominated_at_common_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = reference();
    c.run.x0 = vec![0.3, 0.2, -0.1, 0.25];
    c.run.steps = 1;
    let mut vols = Vec::new();
    for m in [Method::Cp1, Method::Lp1] {
        c.run.method = m;
        let o = dir.path().join(m.name());
        run(&c, &o).unwrap();
        let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("schedules.json")).unwrap()).unwrap();
        let v: Vec<f64> = s["schedules"][0]["boxes"].as_array().unwrap().iter().map(|b| b["vol1"].as_f64().unwrap()).collect();
        vols.push(v);
    }
    for (j, (lp, cp)) in vols[1].iter().zip(&vols[0]).enumerate() {
        assert!(lp <= &(cp + 1e-9), "j={}: {} > {}", j + 1, lp, cp);
    }
}

#[test]
fn compare_zero_disturbance_is_mandatory_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = reference();
    c.disturbance.kind = etrmpc_core::config::DisturbanceKindSpec::Zero;
    c.run.steps = 30;
    let rows = compare(&c, &[Method::Cp1, Method::Lp1], dir.path()).unwrap();
    assert_eq!(rows[0].solves, 3);
    assert_eq!(rows[1].solves, 3);
    for m in ["CP1", "LP1"] {
        let s: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(m).join("summary.json")).unwrap()).unwrap();
        assert_eq!(s["trigger_times"], serde_json::json!([0, 10, 20]));
    }
}

#[test]
fn compare_replays_one_disturbance_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = reference();
    c.run.steps = 20;
    let rows = compare(&c, &[Method::Cp1, Method::Lp2, Method::Periodic], dir.path()).unwrap();
    assert!(rows.iter().all(|r| r.disturbance_digest == rows[0].disturbance_digest));
    let solo = run(&c, &dir.path().join("solo")).unwrap();
    assert_eq!(solo.disturbance_digest, rows[0].disturbance_digest);
    assert_eq!(
        fs::read(dir.path().join("solo").join("trace.csv")).unwrap(),
        fs::read(dir.path().join("CP1").join("trace.csv")).unwrap()
    );
    let table = data_rows(&dir.path().join("compare.csv"));
    assert_eq!(table.len(), 3);
    assert_eq!(table[2][0], "periodic");
    assert_eq!(table[2][1], "20");
}

#[test]
fn compare_cli_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = etrmpc(&[
        "compare", "--config", config_path("batch_reactor_worst_case.toml").to_str().unwrap(),
        "--out-dir", dir.path().to_str().unwrap(), "--steps", "12", "--methods", "CP1,LP1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("CP1")));
    assert!(text.lines().any(|l| l.starts_with("LP1")));
}

#[test]
fn impulse_config_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let c = load_config(&config_path("batch_reactor_impulse.toml"), &Overrides::default()).unwrap();
    let s = run(&c, dir.path()).unwrap();
    assert!(s.trigger_times.contains(&25));
    assert_eq!(s.recovery_events, 0);
    assert_eq!(s.statistics.decay_violations, 0);
}
