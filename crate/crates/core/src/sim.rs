//! Event-triggered closed loop with online decay certificates.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{support, GeometryError, Polytope};
use crate::rmpc::{solve_rmpc, MpcSolution, RmpcError};
use crate::solver::{solve_lp, LpProblem, SolveStatus};
use crate::tightening::RmpcSetup;
use crate::trigger::{build_schedule, BoxMethod, TriggerError, TriggerSchedule};

/// Slack allowed on the value-decay inequality.
pub const DECAY_TOL: f64 = 1e-6;
const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("initial state is infeasible: {0}")]
    InitialInfeasible(RmpcError),
    #[error("re-solve at t = {t} failed with in-set disturbances: {source}")]
    Infeasible { t: usize, source: RmpcError },
    #[error("trigger construction at t = {t}: {source}")]
    Trigger { t: usize, source: TriggerError },
    #[error("disturbance model: {0}")]
    Disturbance(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "CP1")]
    Cp1,
    #[serde(rename = "CP2")]
    Cp2,
    #[serde(rename = "LP1")]
    Lp1,
    #[serde(rename = "LP2")]
    Lp2,
    /// Solve at every step.
    #[serde(rename = "periodic")]
    Periodic,
}

impl Method {
    pub fn box_method(self) -> Option<BoxMethod> {
        match self {
            Method::Cp1 => Some(BoxMethod::Cp1),
            Method::Cp2 => Some(BoxMethod::Cp2),
            Method::Lp1 => Some(BoxMethod::Lp1),
            Method::Lp2 => Some(BoxMethod::Lp2),
            Method::Periodic => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Cp1 => "CP1",
            Method::Cp2 => "CP2",
            Method::Lp1 => "LP1",
            Method::Lp2 => "LP2",
            Method::Periodic => "periodic",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "CP1" => Ok(Method::Cp1),
            "CP2" => Ok(Method::Cp2),
            "LP1" => Ok(Method::Lp1),
            "LP2" => Ok(Method::Lp2),
            "PERIODIC" => Ok(Method::Periodic),
            _ => Err(format!("unknown method `{s}` (expected CP1, CP2, LP1, LP2 or periodic)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DisturbanceKind {
    Zero,
    UniformBox { seed: u64 },
    /// `argmax_{w ∈ W} ξᵀw`.
    WorstCase,
    Replay { seq: Vec<DVector<f64>>, out_of_set: bool },
}

/// State reset `ξ_t[coord] = value` applied after the dynamics update that
/// produces `ξ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Impulse {
    pub t: usize,
    pub coord: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisturbanceModel {
    pub kind: DisturbanceKind,
    pub impulses: Vec<Impulse>,
}

impl DisturbanceModel {
    pub fn zero() -> Self {
        DisturbanceModel { kind: DisturbanceKind::Zero, impulses: Vec::new() }
    }

    /// State-independent sequence for `steps` steps; `None` for the worst case.
    pub fn presample(
        &self,
        w: &Polytope,
        steps: usize,
    ) -> Result<Option<Vec<DVector<f64>>>, SimError> {
        let n = w.dim();
        match &self.kind {
            DisturbanceKind::Zero => Ok(Some(vec![DVector::zeros(n); steps])),
            DisturbanceKind::WorstCase => Ok(None),
            DisturbanceKind::UniformBox { seed } => {
                let mut lo = DVector::zeros(n);
                let mut hi = DVector::zeros(n);
                for j in 0..n {
                    let mut e = DVector::zeros(n);
                    e[j] = 1.0;
                    hi[j] = support(w, &e)?;
                    e[j] = -1.0;
                    lo[j] = -support(w, &e)?;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut out = Vec::with_capacity(steps);
                for _ in 0..steps {
                    let mut tries = 0;
                    loop {
                        let s = DVector::from_fn(n, |j, _| lo[j] + (hi[j] - lo[j]) * rng.random::<f64>());
                        if w.contains(&s) {
                            out.push(s);
                            break;
                        }
                        tries += 1;
                        if tries > MAX_REJECTIONS {
                            return Err(SimError::Disturbance("rejection sampling stalled".into()));
                        }
                    }
                }
                Ok(Some(out))
            }
            DisturbanceKind::Replay { seq, out_of_set } => {
                if seq.len() < steps {
                    return Err(SimError::Disturbance(format!(
                        "replay has {} samples, run needs {steps}",
                        seq.len()
                    )));
                }
                for (t, s) in seq.iter().enumerate() {
                    if s.len() != n {
                        return Err(SimError::Dimension(format!("replay sample {t} has length {}", s.len())));
                    }
                    if !out_of_set && !w.contains(s) {
                        return Err(SimError::Disturbance(format!("replay sample {t} lies outside W")));
                    }
                }
                Ok(Some(seq[..steps].to_vec()))
            }
        }
    }

    pub fn in_set(&self) -> bool {
        self.impulses.is_empty()
            && !matches!(self.kind, DisturbanceKind::Replay { out_of_set: true, .. })
    }
}

/// `argmax_{w ∈ W} ξᵀw`; on boxes `w_p = u_p` when `ξ_p ≥ 0`, else `l_p`.
pub fn worst_case_disturbance(w: &Polytope, xi: &DVector<f64>) -> Result<DVector<f64>, SimError> {
    if let Some(b) = w.as_box() {
        return Ok(DVector::from_fn(xi.len(), |p, _| if xi[p] >= 0.0 { b.u[p] } else { b.l[p] }));
    }
    let rep = solve_lp(&LpProblem::new(xi.clone(), w.a().clone(), w.b().clone()))
        .map_err(GeometryError::from)?;
    match rep.status {
        SolveStatus::Optimal => Ok(rep.x),
        _ => Err(SimError::Disturbance("worst-case LP failed".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum TriggerCause {
    Initial,
    /// Coordinates (0-based) whose error left the box.
    CoordinateExit(Vec<usize>),
    Mandatory,
    Periodic,
}

impl fmt::Display for TriggerCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TriggerCause::Initial => f.write_str("initial"),
            TriggerCause::Mandatory => f.write_str("mandatory"),
            TriggerCause::Periodic => f.write_str("periodic"),
            TriggerCause::CoordinateExit(c) => {
                let s: Vec<String> = c.iter().map(usize::to_string).collect();
                write!(f, "exit:{}", s.join(";"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub t: usize,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    /// Last trigger instance up to and including `t`.
    pub tau: usize,
    pub trigger: Option<TriggerCause>,
    /// `V*_N(ξ_t)` at triggers.
    pub v_star: Option<f64>,
    /// `V*_N(ξ_τ) − Σ_{k < t−τ} ℓ_k` for the plan in force before `t`.
    pub decay_bound: f64,
    /// `φ_k + E_k` around the nominal prediction, `k = t − τ ≥ 1`.
    pub box_lo: Option<DVector<f64>>,
    pub box_hi: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCheck {
    pub t: usize,
    pub previous_trigger: usize,
    pub v_star: f64,
    pub bound: f64,
    pub holds: bool,
    /// No impulse or out-of-set sample since the previous trigger.
    pub in_set: bool,
}

impl DecayCheck {
    pub fn margin(&self) -> f64 {
        self.bound - self.v_star
    }
}

/// Failed re-solve after an out-of-set disturbance; the buffered plan stays
/// in force.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryEvent {
    pub t: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleRecord {
    pub t: usize,
    pub nominal: Vec<DVector<f64>>,
    pub schedule: TriggerSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTrace {
    pub method: Method,
    pub steps: Vec<TraceStep>,
    pub final_state: DVector<f64>,
    pub decay_checks: Vec<DecayCheck>,
    pub recovery_events: Vec<RecoveryEvent>,
    pub schedules: Vec<ScheduleRecord>,
}

impl SimTrace {
    /// `ξ_0..ξ_T`.
    pub fn states(&self) -> Vec<&DVector<f64>> {
        self.steps.iter().map(|s| &s.x).chain(std::iter::once(&self.final_state)).collect()
    }

    pub fn trigger_times(&self) -> Vec<usize> {
        self.steps.iter().filter(|s| s.trigger.is_some()).map(|s| s.t).collect()
    }

    /// `(t, V*_N(ξ_t))` at every trigger.
    pub fn values(&self) -> Vec<(usize, f64)> {
        self.steps.iter().filter_map(|s| s.v_star.map(|v| (s.t, v))).collect()
    }

    /// Digest of the applied disturbance sequence.
    pub fn disturbance_digest(&self) -> String {
        sequence_digest(self.steps.iter().map(|s| &s.w))
    }
}

/// SHA-256 over the little-endian bit patterns of every entry, hex encoded.
pub fn sequence_digest<'a>(seq: impl IntoIterator<Item = &'a DVector<f64>>) -> String {
    let mut h = Sha256::new();
    for v in seq {
        h.update((v.len() as u64).to_le_bytes());
        for x in v.iter() {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Coordinates where `ξ − φ_k` leaves `E_k`; `1 ≤ k ≤ N−1`.
pub fn step_trigger_test(
    schedule: &TriggerSchedule,
    nominal: &[DVector<f64>],
    xi: &DVector<f64>,
    k: usize,
) -> Vec<usize> {
    let e = xi - &nominal[k];
    schedule.get(k).violating_coords(&e)
}

struct Plan {
    tau: usize,
    sol: MpcSolution,
    schedule: Option<TriggerSchedule>,
    /// No out-of-set disturbance since the solve.
    clean: bool,
}

impl Plan {
    /// Buffered input `k` steps after the solve, extended by the nominal gain
    /// beyond the horizon.
    fn input(&self, setup: &RmpcSetup, k: usize) -> DVector<f64> {
        if k < setup.n {
            return self.sol.u[k].clone();
        }
        let acl = setup.a_cl();
        let mut x = self.sol.x[setup.n].clone();
        for _ in setup.n..k {
            x = &acl * x;
        }
        &setup.f * x
    }

    fn nominal(&self, setup: &RmpcSetup, k: usize) -> DVector<f64> {
        if k <= setup.n {
            return self.sol.x[k].clone();
        }
        let acl = setup.a_cl();
        let mut x = self.sol.x[setup.n].clone();
        for _ in setup.n..k {
            x = &acl * x;
        }
        x
    }

    fn bound(&self, k: usize) -> f64 {
        let spent: f64 = self.sol.stage_costs.iter().take(k).sum();
        self.sol.value - spent
    }
}

/// Run the closed loop for `steps` steps from `x0`.
pub fn run_closed_loop(
    setup: &RmpcSetup,
    x0: &DVector<f64>,
    method: Method,
    dist: &DisturbanceModel,
    steps: usize,
) -> Result<SimTrace, SimError> {
    let (n, nx) = (setup.n, setup.nx());
    if x0.len() != nx {
        return Err(SimError::Dimension(format!("x0 has {}, expected {nx}", x0.len())));
    }
    for imp in &dist.impulses {
        if imp.coord >= nx {
            return Err(SimError::Dimension(format!("impulse coordinate {} ≥ {nx}", imp.coord)));
        }
    }
    let w_set = &setup.plant.w_set;
    let samples = dist.presample(w_set, steps)?;
    let out_of_set_replay = matches!(dist.kind, DisturbanceKind::Replay { out_of_set: true, .. });

    let mut xi = x0.clone();
    for imp in dist.impulses.iter().filter(|i| i.t == 0) {
        xi[imp.coord] = imp.value;
    }
    let mut seen_out_of_set = dist.impulses.iter().any(|i| i.t == 0);

    let mut plan: Option<Plan> = None;
    let mut trace = SimTrace {
        method,
        steps: Vec::with_capacity(steps),
        final_state: xi.clone(),
        decay_checks: Vec::new(),
        recovery_events: Vec::new(),
        schedules: Vec::new(),
    };

    for t in 0..steps {
        let cause = match &plan {
            None => Some(TriggerCause::Initial),
            Some(p) => {
                let k = t - p.tau;
                if method == Method::Periodic {
                    Some(TriggerCause::Periodic)
                } else if k >= n {
                    Some(TriggerCause::Mandatory)
                } else {
                    let sched = p.schedule.as_ref().expect("triggered methods keep a schedule");
                    let viol = step_trigger_test(sched, &p.sol.x, &xi, k);
                    (!viol.is_empty()).then_some(TriggerCause::CoordinateExit(viol))
                }
            }
        };
        let decay_bound = match &plan {
            Some(p) => p.bound(t - p.tau),
            None => f64::NAN,
        };

        let mut v_star = None;
        let mut fired = None;
        if let Some(cause) = cause {
            match solve_rmpc(setup, &xi) {
                Ok(sol) => {
                    if let Some(p) = &plan {
                        let holds = sol.value <= decay_bound + DECAY_TOL;
                        trace.decay_checks.push(DecayCheck {
                            t,
                            previous_trigger: p.tau,
                            v_star: sol.value,
                            bound: decay_bound,
                            holds,
                            in_set: p.clean,
                        });
                    }
                    let schedule = match method.box_method() {
                        Some(bm) => Some(
                            build_schedule(setup, &sol, bm)
                                .map_err(|source| SimError::Trigger { t, source })?,
                        ),
                        None => None,
                    };
                    if let Some(s) = &schedule {
                        trace.schedules.push(ScheduleRecord { t, nominal: sol.x.clone(), schedule: s.clone() });
                    }
                    v_star = Some(sol.value);
                    plan = Some(Plan { tau: t, sol, schedule, clean: true });
                    fired = Some(cause);
                }
                Err(e) if plan.is_none() => return Err(SimError::InitialInfeasible(e)),
                Err(e) if seen_out_of_set => {
                    trace.recovery_events.push(RecoveryEvent { t, message: e.to_string() })
                }
                Err(e) => return Err(SimError::Infeasible { t, source: e }),
            }
        }

        let p = plan.as_ref().expect("plan exists after the initial solve");
        let k = t - p.tau;
        let u = p.input(setup, k);
        let (box_lo, box_hi) = match (&p.schedule, k) {
            (Some(s), k) if k >= 1 && k < n => {
                let phi = p.nominal(setup, k);
                let b = s.get(k);
                (Some(&phi + &b.l), Some(&phi + &b.u))
            }
            _ => (None, None),
        };
        let w = match &samples {
            Some(seq) => seq[t].clone(),
            None => worst_case_disturbance(w_set, &xi)?,
        };
        let mut outside = out_of_set_replay && !w_set.contains(&w);
        let mut next = setup.step(&xi, &u) + &w;
        for imp in dist.impulses.iter().filter(|i| i.t == t + 1) {
            next[imp.coord] = imp.value;
            outside = true;
        }
        if outside {
            seen_out_of_set = true;
            if let Some(p) = plan.as_mut() {
                p.clean = false;
            }
        }
        trace.steps.push(TraceStep {
            t,
            x: xi.clone(),
            u,
            w,
            tau: plan.as_ref().map_or(0, |p| p.tau),
            trigger: fired,
            v_star,
            decay_bound,
            box_lo,
            box_hi,
        });
        xi = next;
    }
    trace.final_state = xi;
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerStatistics {
    pub steps: usize,
    pub solves: usize,
    pub mean_inter_event: f64,
    pub max_inter_event: usize,
    pub causes: BTreeMap<String, usize>,
    pub decay_margins: Vec<f64>,
    pub min_decay_margin: Option<f64>,
    /// Failed decay checks with in-set disturbances since the previous trigger.
    pub decay_violations: usize,
    /// Failed decay checks following an out-of-set disturbance.
    pub out_of_set_violations: usize,
    pub recovery_events: usize,
    pub final_value: Option<f64>,
}

pub fn trigger_statistics(trace: &SimTrace) -> TriggerStatistics {
    let times = trace.trigger_times();
    let gaps: Vec<usize> = times
        .windows(2)
        .map(|w| w[1] - w[0])
        .chain(times.last().map(|&t| trace.steps.len() - t))
        .collect();
    let mut causes = BTreeMap::new();
    for s in &trace.steps {
        if let Some(c) = &s.trigger {
            let key = match c {
                TriggerCause::CoordinateExit(_) => "exit".to_string(),
                other => other.to_string(),
            };
            *causes.entry(key).or_insert(0) += 1;
        }
    }
    let decay_margins: Vec<f64> = trace.decay_checks.iter().map(DecayCheck::margin).collect();
    TriggerStatistics {
        steps: trace.steps.len(),
        solves: times.len(),
        mean_inter_event: if gaps.is_empty() {
            0.0
        } else {
            gaps.iter().sum::<usize>() as f64 / gaps.len() as f64
        },
        max_inter_event: gaps.iter().copied().max().unwrap_or(0),
        causes,
        min_decay_margin: decay_margins.iter().copied().reduce(f64::min),
        decay_violations: trace.decay_checks.iter().filter(|c| !c.holds && c.in_set).count(),
        out_of_set_violations: trace.decay_checks.iter().filter(|c| !c.holds && !c.in_set).count(),
        decay_margins,
        recovery_events: trace.recovery_events.len(),
        final_value: trace.values().last().map(|v| v.1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::HyperRect;
    use nalgebra::dvector;

    #[test]
    fn worst_case_sign_rule() {
        let w = Polytope::inf_ball(3, 0.02);
        let d = worst_case_disturbance(&w, &dvector![1.0, -2.0, 0.0]).unwrap();
        assert_eq!(d, dvector![0.02, -0.02, 0.02]);
    }

    #[test]
    fn uniform_samples_in_set_and_reproducible() {
        let w = Polytope::inf_ball(2, 0.02);
        let m = DisturbanceModel { kind: DisturbanceKind::UniformBox { seed: 7 }, impulses: vec![] };
        let a = m.presample(&w, 50).unwrap().unwrap();
        let b = m.presample(&w, 50).unwrap().unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| w.contains(s)));
    }

    #[test]
    fn replay_checked_against_set() {
        let w = Polytope::inf_ball(1, 0.02);
        let bad = DisturbanceModel {
            kind: DisturbanceKind::Replay { seq: vec![dvector![0.5]], out_of_set: false },
            impulses: vec![],
        };
        assert!(bad.presample(&w, 1).is_err());
    }

    #[test]
    fn trigger_test_reports_coordinates() {
        let sched = TriggerSchedule {
            method: BoxMethod::Cp1,
            boxes: vec![HyperRect::symmetric(3, 0.1)],
            volumes: vec![],
            degenerate_coords: vec![],
            shape_ratios: vec![],
            row_violation: vec![],
        };
        let nominal = vec![dvector![0.0, 0.0, 0.0], dvector![1.0, 1.0, 1.0]];
        assert!(step_trigger_test(&sched, &nominal, &dvector![1.0, 1.0, 1.0], 1).is_empty());
        assert_eq!(step_trigger_test(&sched, &nominal, &dvector![1.0, 1.0, 1.2], 1), vec![2]);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("lp1".parse::<Method>().unwrap(), Method::Lp1);
        assert_eq!("periodic".parse::<Method>().unwrap(), Method::Periodic);
        assert!("cp3".parse::<Method>().is_err());
    }
}
