use etrmpc_core::config::{ExperimentConfig, SetSpec};
use etrmpc_core::geometry::HyperRect;
use etrmpc_core::rmpc::solve_rmpc;
use etrmpc_core::sim::*;
use etrmpc_core::tightening::RmpcSetup;
use etrmpc_core::trigger::{BoxMethod, BoxVolumes, TriggerSchedule};
use nalgebra::{dvector, DVector};
use std::sync::OnceLock;

fn reactor() -> &'static RmpcSetup {
    static S: OnceLock<RmpcSetup> = OnceLock::new();
    S.get_or_init(|| ExperimentConfig::batch_reactor().setup().unwrap())
}

fn x0() -> DVector<f64> {
    ExperimentConfig::batch_reactor().x0()
}

fn uniform() -> DisturbanceModel {
    DisturbanceModel { kind: DisturbanceKind::UniformBox { seed: 2024 }, impulses: vec![] }
}

fn worst() -> DisturbanceModel {
    DisturbanceModel { kind: DisturbanceKind::WorstCase, impulses: vec![] }
}

fn safe(s: &RmpcSetup, tr: &SimTrace) {
    for st in &tr.steps {
        assert!(s.plant.x_set.contains(&st.x), "t={} x={}", st.t, st.x);
        assert!(s.plant.u_set.contains(&st.u), "t={} u={}", st.t, st.u);
    }
}

fn schedule(b: HyperRect) -> TriggerSchedule {
    TriggerSchedule {
        method: BoxMethod::Cp1,
        volumes: vec![BoxVolumes::of(&b)],
        boxes: vec![b],
        degenerate_coords: vec![vec![]],
        shape_ratios: vec![None],
        row_violation: vec![0.0],
    }
}

#[test]
fn trigger_test_by_coordinate() {
    let sched = schedule(HyperRect::new(dvector![-0.1, -0.1, -0.1], dvector![0.1, 0.2, 0.3]).unwrap());
    let nominal = vec![DVector::zeros(3), dvector![1.0, 1.0, 1.0]];
    assert!(step_trigger_test(&sched, &nominal, &dvector![1.0, 1.0, 1.0], 1).is_empty());
    assert_eq!(step_trigger_test(&sched, &nominal, &dvector![1.05, 1.15, 1.35], 1), vec![2]);
    assert_eq!(step_trigger_test(&sched, &nominal, &dvector![0.8, 1.0, 1.35], 1), vec![0, 2]);
}

#[test]
fn zero_disturbance_triggers_every_horizon() {
    let s = reactor();
    for m in [Method::Cp1, Method::Cp2, Method::Lp1, Method::Lp2] {
        let tr = run_closed_loop(s, &x0(), m, &DisturbanceModel::zero(), 60).unwrap();
        assert_eq!(tr.trigger_times(), vec![0, 10, 20, 30, 40, 50], "{m}");
        for st in &tr.steps[1..] {
            assert!(matches!(st.trigger, None | Some(TriggerCause::Mandatory)));
        }
        let v: Vec<f64> = tr.values().into_iter().map(|(_, v)| v).collect();
        assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{v:?}");
        assert!(*v.last().unwrap() < 1e-3);
        safe(s, &tr);
    }
}

#[test]
fn three_horizons_three_solves() {
    let tr = run_closed_loop(reactor(), &x0(), Method::Lp2, &DisturbanceModel::zero(), 30).unwrap();
    assert_eq!(trigger_statistics(&tr).solves, 3);
}

#[test]
fn degenerate_disturbance_set() {
    let mut c = ExperimentConfig::batch_reactor();
    c.sets.w = SetSpec::InfNorm { inf_norm: 0.0 };
    let s = c.setup().unwrap();
    let tr = run_closed_loop(&s, &x0(), Method::Cp1, &DisturbanceModel::zero(), 40).unwrap();
    assert_eq!(tr.trigger_times(), vec![0, 10, 20, 30]);
    let v: Vec<f64> = tr.values().into_iter().map(|(_, v)| v).collect();
    for w in v.windows(2) {
        assert!(w[1] < w[0] || w[0] < 1e-9, "{v:?}");
    }
}

#[test]
fn uniform_disturbance_safe_and_saves_events() {
    let s = reactor();
    for m in [Method::Cp1, Method::Cp2, Method::Lp1, Method::Lp2] {
        let tr = run_closed_loop(s, &x0(), m, &uniform(), 60).unwrap();
        safe(s, &tr);
        let st = trigger_statistics(&tr);
        assert!(st.solves < 60, "{m}: {}", st.solves);
        assert_eq!(st.decay_violations, 0);
        assert!(tr.decay_checks.iter().all(|c| c.holds));
        assert!(tr.steps.iter().any(|z| s.plant.tx.contains(&z.x)));
        assert!(tr.steps.iter().any(|z| s.plant.tu.contains(&z.u)));
    }
}

#[test]
fn worst_case_stays_safe_and_settles() {
    let s = reactor();
    for m in [Method::Cp1, Method::Lp1] {
        let tr = run_closed_loop(s, &x0(), m, &worst(), 60).unwrap();
        safe(s, &tr);
        assert_eq!(trigger_statistics(&tr).decay_violations, 0);
        let enter = tr.steps.iter().position(|z| s.plant.tx.contains(&z.x)).unwrap();
        for z in &tr.steps[enter..] {
            assert!(s.plant.tx.violation(&z.x) <= 0.05, "t={} x={}", z.t, z.x);
        }
    }
}

#[test]
fn worst_case_picks_signed_extreme() {
    let w = etrmpc_core::Polytope::inf_ball(3, 0.02);
    let v = worst_case_disturbance(&w, &dvector![0.5, -1.0, 0.0]).unwrap();
    assert_eq!(v, dvector![0.02, -0.02, 0.02]);
}

#[test]
fn periodic_solves_every_step() {
    let tr = run_closed_loop(reactor(), &x0(), Method::Periodic, &uniform(), 20).unwrap();
    let st = trigger_statistics(&tr);
    assert_eq!(st.solves, 20);
    assert_eq!(st.max_inter_event, 1);
}

#[test]
fn solves_never_exceed_steps() {
    for m in [Method::Cp1, Method::Cp2, Method::Lp1, Method::Lp2, Method::Periodic] {
        let tr = run_closed_loop(reactor(), &x0(), m, &worst(), 25).unwrap();
        let st = trigger_statistics(&tr);
        assert!(st.solves <= 25);
        assert_eq!(st.causes.values().sum::<usize>(), st.solves);
    }
}

#[test]
fn buffered_inputs_and_mandatory_timing() {
    let s = reactor();
    let tr = run_closed_loop(s, &x0(), Method::Cp2, &uniform(), 60).unwrap();
    let mut last = 0;
    for st in &tr.steps {
        assert!(st.tau >= last);
        last = st.tau;
        if st.trigger == Some(TriggerCause::Mandatory) {
            let prev = tr.steps[st.t - 1].tau;
            assert_eq!(st.t - prev, s.n);
        }
    }
    for st in &tr.steps {
        let sol = solve_rmpc(s, &tr.steps[st.tau].x).unwrap();
        assert_eq!(st.u, sol.u[st.t - st.tau], "t={}", st.t);
    }
}

#[test]
fn replay_is_bit_identical() {
    let a = run_closed_loop(reactor(), &x0(), Method::Lp1, &uniform(), 40).unwrap();
    let b = run_closed_loop(reactor(), &x0(), Method::Lp1, &uniform(), 40).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    let other = DisturbanceModel { kind: DisturbanceKind::UniformBox { seed: 7 }, impulses: vec![] };
    let c = run_closed_loop(reactor(), &x0(), Method::Lp1, &other, 40).unwrap();
    assert_ne!(a.steps[1].x, c.steps[1].x);
}

#[test]
fn uniform_samples_lie_in_w() {
    let w = &reactor().plant.w_set;
    let seq = uniform().presample(w, 500).unwrap().unwrap();
    assert!(seq.iter().all(|v| w.contains(v)));
    let spread = seq.iter().map(|v| v.amax()).fold(0.0, f64::max);
    assert!(spread > 0.015);
}

#[test]
fn impulse_recovery() {
    let s = reactor();
    let mut d = uniform();
    d.impulses.push(Impulse { t: 25, coord: 1, value: 1.7 });
    for m in [Method::Cp1, Method::Lp1] {
        let tr = run_closed_loop(s, &x0(), m, &d, 60).unwrap();
        assert_eq!(tr.steps[25].x[1], 1.7);
        assert!(tr.steps[25].trigger.is_some());
        assert!(tr.recovery_events.is_empty());
        safe(s, &tr);
        let vals = tr.values();
        let before = vals.iter().filter(|(t, _)| *t < 25).map(|(_, v)| *v).next_back().unwrap();
        assert!(vals.iter().any(|(t, v)| *t > 25 && *t <= 50 && *v <= before + DECAY_TOL));
        assert!(tr.steps[40..].iter().all(|z| s.plant.tx.contains(&z.x)));
        let st = trigger_statistics(&tr);
        assert_eq!(st.decay_violations, 0);
    }
}

#[test]
fn replay_outside_w_rejected_unless_flagged() {
    let seq = vec![dvector![0.5, 0.0, 0.0, 0.0]; 5];
    let strict = DisturbanceModel { kind: DisturbanceKind::Replay { seq: seq.clone(), out_of_set: false }, impulses: vec![] };
    assert!(matches!(
        run_closed_loop(reactor(), &x0(), Method::Cp1, &strict, 5),
        Err(SimError::Disturbance(_))
    ));
    let loose = DisturbanceModel { kind: DisturbanceKind::Replay { seq, out_of_set: true }, impulses: vec![] };
    assert!(!loose.in_set());
    let tr = run_closed_loop(reactor(), &x0(), Method::Cp1, &loose, 5).unwrap();
    assert_eq!(tr.steps.len(), 5);
}

#[test]
fn infeasible_start_and_bad_dimensions() {
    let s = reactor();
    assert!(matches!(
        run_closed_loop(s, &dvector![1.99, -1.99, 1.99, -1.99], Method::Cp1, &uniform(), 5),
        Err(SimError::InitialInfeasible(_))
    ));
    assert!(matches!(
        run_closed_loop(s, &dvector![0.0, 0.0], Method::Cp1, &uniform(), 5),
        Err(SimError::Dimension(_))
    ));
    let mut d = uniform();
    d.impulses.push(Impulse { t: 2, coord: 4, value: 0.0 });
    assert!(matches!(run_closed_loop(s, &x0(), Method::Cp1, &d, 5), Err(SimError::Dimension(_))));
}
