//! Trace, summary, schedule and plot-data files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use etrmpc_core::config::ExperimentConfig;
use etrmpc_core::SimTrace;
use serde::Serialize;
use serde_json::json;

use crate::{CompareRow, RunSummary};

pub const TRACE_VERSION: u32 = 1;

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn provenance(cfg: &ExperimentConfig) -> Result<String> {
    Ok(format!("# config_hash={} seed={} trace_version={TRACE_VERSION}\n", cfg.hash()?, cfg.run.seed))
}

fn csv_file(path: &Path, header: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    w.write_all(header.as_bytes())?;
    Ok(csv::Writer::from_writer(w))
}

fn json_file<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn trace_columns(nx: usize, nu: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..nx).map(|p| format!("x{p}")));
    cols.extend((0..nu).map(|p| format!("u{p}")));
    cols.extend(["tau", "trigger_cause", "V_star", "decay_bound"].map(String::from));
    cols.extend((0..nx).map(|p| format!("box_lo{p}")));
    cols.extend((0..nx).map(|p| format!("box_hi{p}")));
    cols
}

pub fn write_run(dir: &Path, cfg: &ExperimentConfig, trace: &SimTrace, summary: &RunSummary) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let head = provenance(cfg)?;
    let nx = trace.final_state.len();
    let nu = trace.steps.first().map_or(0, |s| s.u.len());

    let mut w = csv_file(&dir.join("trace.csv"), &head)?;
    w.write_record(trace_columns(nx, nu))?;
    for s in &trace.steps {
        let mut r = vec![s.t.to_string()];
        r.extend(s.x.iter().map(|v| num(*v)));
        r.extend(s.u.iter().map(|v| num(*v)));
        r.push(s.tau.to_string());
        r.push(s.trigger.as_ref().map_or(String::new(), |c| c.to_string()));
        r.push(s.v_star.map_or(String::new(), num));
        r.push(num(s.decay_bound));
        for b in [&s.box_lo, &s.box_hi] {
            match b {
                Some(v) => r.extend(v.iter().map(|x| num(*x))),
                None => r.extend(std::iter::repeat_n(String::new(), nx)),
            }
        }
        w.write_record(&r)?;
    }
    w.flush()?;

    for p in 0..nx {
        let mut w = csv_file(&dir.join(format!("plot_state_{p}.csv")), &head)?;
        w.write_record(["t", "x", "box_lo", "box_hi", "trigger"])?;
        for s in &trace.steps {
            let band = |b: &Option<etrmpc_core::DVector<f64>>| b.as_ref().map_or(String::new(), |v| num(v[p]));
            w.write_record([
                s.t.to_string(),
                num(s.x[p]),
                band(&s.box_lo),
                band(&s.box_hi),
                u8::from(s.trigger.is_some()).to_string(),
            ])?;
        }
        w.write_record([trace.steps.len().to_string(), num(trace.final_state[p]), String::new(), String::new(), "0".into()])?;
        w.flush()?;
    }

    let mut w = csv_file(&dir.join("plot_inputs.csv"), &head)?;
    let mut cols = vec!["t".to_string()];
    cols.extend((0..nu).map(|p| format!("u{p}")));
    cols.push("trigger".into());
    w.write_record(&cols)?;
    for s in &trace.steps {
        let mut r = vec![s.t.to_string()];
        r.extend(s.u.iter().map(|v| num(*v)));
        r.push(u8::from(s.trigger.is_some()).to_string());
        w.write_record(&r)?;
    }
    w.flush()?;

    let mut w = csv_file(&dir.join("plot_value.csv"), &head)?;
    w.write_record(["t", "V_star", "decay_bound", "cause"])?;
    for s in trace.steps.iter().filter(|s| s.v_star.is_some()) {
        w.write_record([
            s.t.to_string(),
            s.v_star.map_or(String::new(), num),
            num(s.decay_bound),
            s.trigger.as_ref().map_or(String::new(), |c| c.to_string()),
        ])?;
    }
    w.flush()?;

    json_file(&dir.join("summary.json"), summary)?;

    let schedules: Vec<_> = trace
        .schedules
        .iter()
        .map(|rec| {
            let boxes: Vec<_> = (0..rec.schedule.boxes.len())
                .map(|i| {
                    let s = &rec.schedule;
                    json!({
                        "j": i + 1,
                        "l": s.boxes[i].l.as_slice(),
                        "u": s.boxes[i].u.as_slice(),
                        "vol1": s.volumes[i].vol1,
                        "vol2": s.volumes[i].vol2,
                        "degenerate": s.degenerate_coords[i],
                        "shape_ratio": s.shape_ratios[i],
                        "row_violation": s.row_violation[i],
                    })
                })
                .collect();
            json!({ "t": rec.t, "method": rec.schedule.method, "boxes": boxes })
        })
        .collect();
    json_file(
        &dir.join("schedules.json"),
        &json!({
            "config_hash": summary.config_hash,
            "seed": summary.seed,
            "method": summary.method,
            "schedules": schedules,
        }),
    )?;
    Ok(())
}

pub fn write_compare(dir: &Path, cfg: &ExperimentConfig, rows: &[CompareRow]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut w = csv_file(&dir.join("compare.csv"), &provenance(cfg)?)?;
    w.write_record([
        "method",
        "solves",
        "mean_inter_event",
        "max_inter_event",
        "final_value",
        "min_decay_margin",
        "decay_violations",
        "disturbance_digest",
    ])?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.solves.to_string(),
            num(r.mean_inter_event),
            r.max_inter_event.to_string(),
            r.final_value.map_or(String::new(), num),
            r.min_decay_margin.map_or(String::new(), num),
            r.decay_violations.to_string(),
            r.disturbance_digest.clone(),
        ])?;
    }
    w.flush()?;
    json_file(
        &dir.join("compare.json"),
        &json!({ "config_hash": cfg.hash()?, "seed": cfg.run.seed, "rows": rows }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_cells_are_empty() {
        assert_eq!(num(f64::NAN), "");
        assert_eq!(num(f64::INFINITY), "");
        assert_eq!(num(0.1), "0.1");
        assert_eq!(num(-2.0), "-2");
    }

    #[test]
    fn column_layout() {
        let c = trace_columns(2, 1);
        assert_eq!(
            c,
            ["t", "x0", "x1", "u0", "tau", "trigger_cause", "V_star", "decay_bound", "box_lo0", "box_lo1", "box_hi0", "box_hi1"]
        );
    }
}
