//! Command implementations behind the `etrmpc` binary.

pub mod output;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use etrmpc_core::config::ExperimentConfig;
use etrmpc_core::sim::DecayCheck;
use etrmpc_core::{
    run_closed_loop, trigger_statistics, DisturbanceKind, DisturbanceModel, Method, RmpcSetup, SimTrace,
    TriggerStatistics,
};
use rayon::prelude::*;
use serde::Serialize;

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub steps: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

pub fn load_config(path: &Path, ov: &Overrides) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(s) = ov.seed {
        cfg.run.seed = s;
    }
    if let Some(m) = ov.method {
        cfg.run.method = m;
    }
    if let Some(t) = ov.steps {
        cfg.run.steps = t;
    }
    if let Some(d) = &ov.out_dir {
        cfg.run.out_dir = Some(d.to_string_lossy().into_owned());
    }
    Ok(cfg)
}

pub fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(cfg.run.out_dir.as_deref().unwrap_or("out"))
}

/// Setup summary printed by `validate`.
pub fn validate(cfg: &ExperimentConfig) -> Result<(RmpcSetup, String)> {
    let setup = cfg.setup().context("building the tightened setup")?;
    let r = &setup.report;
    let mut s = String::new();
    let mut line = |t: String| {
        s.push_str(&t);
        s.push('\n');
    };
    line(format!("config hash      {}", cfg.hash()?));
    line(format!("n_x = {}, n_u = {}, N = {}, M = {}", setup.nx(), setup.nu(), setup.n, setup.m));
    line(format!("‖L_{}‖_F          {:.3e}", setup.m, r.nilpotency_residual));
    line(format!("ρ(A + BF)        {:.6}", r.spectral_radius_nominal));
    line(format!("X_f ⊆ X_N−1      margin {:+.6}", r.terminal_state_margin));
    line(format!("X_f ⊆ T^X_N−1    margin {:+.6}", r.terminal_target_state_margin));
    line(format!("F X_f ⊆ U_N−1    margin {:+.6}", r.terminal_input_margin));
    line(format!("F X_f ⊆ T^U_N−1  margin {:+.6}", r.terminal_target_input_margin));
    line(format!("(A+BF) X_f ⊆ X_f margin {:+.6} (not required)", r.terminal_invariance_margin));
    let tight = |offs: &[Vec<f64>]| -> String {
        offs.iter().map(|o| format!("{:.4}", o.iter().cloned().fold(f64::INFINITY, f64::min))).collect::<Vec<_>>().join(" ")
    };
    let o = &r.tightened_offsets;
    line(format!("min offset X_i   {}", tight(&o.x)));
    line(format!("min offset U_i   {}", tight(&o.u)));
    line(format!("min offset T^X_i {}", tight(&o.tx)));
    line(format!("min offset T^U_i {}", tight(&o.tu)));
    Ok((setup, s))
}

/// Everything `run` writes, also returned for callers.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub method: Method,
    pub steps: usize,
    pub statistics: TriggerStatistics,
    pub disturbance_digest: String,
    pub final_state: Vec<f64>,
    pub trigger_times: Vec<usize>,
    pub decay_checks: Vec<DecayCheck>,
    pub recovery_events: usize,
    pub setup: etrmpc_core::SetupReport,
}

pub fn summarize(cfg: &ExperimentConfig, setup: &RmpcSetup, trace: &SimTrace) -> Result<RunSummary> {
    Ok(RunSummary {
        config_hash: cfg.hash()?,
        seed: cfg.run.seed,
        method: trace.method,
        steps: trace.steps.len(),
        statistics: trigger_statistics(trace),
        disturbance_digest: trace.disturbance_digest(),
        final_state: trace.final_state.iter().copied().collect(),
        trigger_times: trace.trigger_times(),
        decay_checks: trace.decay_checks.clone(),
        recovery_events: trace.recovery_events.len(),
        setup: setup.report.clone(),
    })
}

fn simulate(cfg: &ExperimentConfig, setup: &RmpcSetup, method: Method, dist: &DisturbanceModel) -> Result<SimTrace> {
    let x0 = cfg.x0();
    run_closed_loop(setup, &x0, method, dist, cfg.run.steps).with_context(|| format!("simulating {method}"))
}

/// Run the configured method and write its files into `dir`.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    let setup = cfg.setup().context("building the tightened setup")?;
    let dist = cfg.disturbance()?;
    let trace = simulate(cfg, &setup, cfg.run.method, &dist)?;
    let summary = summarize(cfg, &setup, &trace)?;
    output::write_run(dir, cfg, &trace, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub method: Method,
    pub solves: usize,
    pub mean_inter_event: f64,
    pub max_inter_event: usize,
    pub final_value: Option<f64>,
    pub min_decay_margin: Option<f64>,
    pub decay_violations: usize,
    pub disturbance_digest: String,
}

/// Run every method under one disturbance realization, concurrently; each
/// run's files go to `dir/<method>/`.
pub fn compare(cfg: &ExperimentConfig, methods: &[Method], dir: &Path) -> Result<Vec<CompareRow>> {
    if methods.is_empty() {
        bail!("no methods to compare");
    }
    let setup = cfg.setup().context("building the tightened setup")?;
    let base = cfg.disturbance()?;
    let dist = match base.presample(&setup.plant.w_set, cfg.run.steps)? {
        Some(seq) => DisturbanceModel {
            kind: DisturbanceKind::Replay {
                seq,
                out_of_set: matches!(base.kind, DisturbanceKind::Replay { out_of_set: true, .. }),
            },
            impulses: base.impulses.clone(),
        },
        None => base,
    };
    let rows = methods
        .par_iter()
        .map(|&m| -> Result<CompareRow> {
            let trace = simulate(cfg, &setup, m, &dist)?;
            let mut c = cfg.clone();
            c.run.method = m;
            let summary = summarize(&c, &setup, &trace)?;
            output::write_run(&dir.join(m.name()), &c, &trace, &summary)?;
            let st = &summary.statistics;
            Ok(CompareRow {
                method: m,
                solves: st.solves,
                mean_inter_event: st.mean_inter_event,
                max_inter_event: st.max_inter_event,
                final_value: st.final_value,
                min_decay_margin: st.min_decay_margin,
                decay_violations: st.decay_violations,
                disturbance_digest: summary.disturbance_digest,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    output::write_compare(dir, cfg, &rows)?;
    Ok(rows)
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
    let mut s = format!(
        "{:<9} {:>6} {:>10} {:>9} {:>11} {:>12} {:>10}\n",
        "method", "solves", "mean gap", "max gap", "final V*", "min margin", "violations"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<9} {:>6} {:>10.3} {:>9} {:>11} {:>12} {:>10}\n",
            r.method.name(),
            r.solves,
            r.mean_inter_event,
            r.max_inter_event,
            opt(r.final_value),
            opt(r.min_decay_margin),
            r.decay_violations
        ));
    }
    s
}
