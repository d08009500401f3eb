//! Log-volume maximization over `{v ≥ 0 : W v ≤ d}` by a log-barrier Newton
//! method.
//!
//! The variable vector is `v = [v̄; v̲]` (upper then lower box extents, `k`
//! each). Two concave objectives are supported:
//!
//! * [`LogVolumeMode::SumLogWidth`]: `Σ_j log(v̄_j + v̲_j)`
//! * [`LogVolumeMode::SumLogBoth`]: `Σ_j log v̄_j + log v̲_j`

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lp::{solve_lp, LpProblem};
use super::{
    SolveReport, SolveStatus, SolverError, DEGENERATE_WIDTH, MAX_ITER, NEWTON_TOL,
};

const T_GROWTH: f64 = 40.0;
/// Target bound on the log-objective suboptimality (constraints / t).
const BARRIER_GAP: f64 = 1e-10;
const ALPHA: f64 = 0.01;
const ACTIVE_SLACK: f64 = 1e-6;
const BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogVolumeMode {
    /// Σ log(v̄_j + v̲_j): the standard box volume.
    SumLogWidth,
    /// Σ log v̄_j + log v̲_j: rewards extent on both sides of the origin.
    SumLogBoth,
}

/// Maximize the log-volume objective. Fails with
/// [`SolverError::DegenerateCoordinate`] listing the variables (indices into
/// `[v̄; v̲]`) that must be clamped to zero because their feasible extent is
/// below 1e-9; the caller decides and retries with
/// [`maximize_log_volume_fixed`].
pub fn maximize_log_volume(
    w: &DMatrix<f64>,
    d: &DVector<f64>,
    mode: LogVolumeMode,
) -> Result<SolveReport, SolverError> {
    let fixed = vec![false; w.ncols()];
    maximize_log_volume_fixed(w, d, mode, &fixed)
}

/// As [`maximize_log_volume`], with the variables flagged in `fixed` held at
/// zero. Objective terms whose arguments are all fixed are dropped.
pub fn maximize_log_volume_fixed(
    w: &DMatrix<f64>,
    d: &DVector<f64>,
    mode: LogVolumeMode,
    fixed: &[bool],
) -> Result<SolveReport, SolverError> {
    let nv = w.ncols();
    if !nv.is_multiple_of(2) || w.nrows() != d.len() || fixed.len() != nv {
        return Err(SolverError::Dimension(format!(
            "W is {}x{}, d has {}, mask has {}",
            w.nrows(),
            nv,
            d.len(),
            fixed.len()
        )));
    }
    if w.iter().chain(d.iter()).any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite("log-volume data"));
    }
    let k = nv / 2;
    let terms = objective_terms(mode, k, fixed);

    let degenerate = degenerate_variables(w, d, fixed, &terms)?;
    if !degenerate.is_empty() {
        return Err(SolverError::DegenerateCoordinate(degenerate));
    }

    let free: Vec<usize> = (0..nv).filter(|&p| !fixed[p]).collect();
    let nf = free.len();
    if nf == 0 {
        if d.iter().any(|&di| di < -super::FEAS_TOL) {
            return Err(SolverError::Infeasible);
        }
        return Ok(SolveReport {
            status: SolveStatus::Optimal,
            x: DVector::zeros(nv),
            objective: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
            certificate: None,
        });
    }

    // Constraint rows restricted to free variables; rows with no free entries
    // are pure feasibility checks.
    let mut rows = Vec::new();
    for i in 0..w.nrows() {
        if free.iter().any(|&p| w[(i, p)] != 0.0) {
            rows.push(i);
        } else if d[i] < -super::FEAS_TOL {
            return Err(SolverError::Infeasible);
        }
    }
    let m = rows.len() + nf;
    let mut g = DMatrix::zeros(m, nf);
    let mut h = DVector::zeros(m);
    for (r, &i) in rows.iter().enumerate() {
        for (c, &p) in free.iter().enumerate() {
            g[(r, c)] = w[(i, p)];
        }
        h[r] = d[i];
    }
    for c in 0..nf {
        g[(rows.len() + c, c)] = -1.0;
    }

    let start = strictly_feasible_point(&g, &h)?;
    let local_terms: Vec<Vec<usize>> = terms
        .iter()
        .map(|t| {
            t.iter()
                .map(|p| free.iter().position(|q| q == p).expect("term on free variable"))
                .collect()
        })
        .collect();

    let (mut v, iterations, decrement) = barrier(&g, &h, &local_terms, start);
    if let Some(p) = polish(&g, &h, &local_terms, &v) {
        v = p;
    }
    let mut x = DVector::zeros(nv);
    for (c, &p) in free.iter().enumerate() {
        x[p] = v[c];
    }
    let objective: f64 = terms
        .iter()
        .map(|t| t.iter().map(|&p| x[p]).sum::<f64>().ln())
        .sum();
    let viol = (w * &x - d).max().max(0.0).max(-x.min());
    let status = if decrement <= NEWTON_TOL && viol <= super::FEAS_TOL && iterations < MAX_ITER {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIter
    };
    Ok(SolveReport {
        status,
        x,
        objective,
        kkt_residual: decrement.max(viol),
        iterations,
        certificate: None,
    })
}

/// Each objective term is `log(Σ_{p∈term} v_p)`.
fn objective_terms(mode: LogVolumeMode, k: usize, fixed: &[bool]) -> Vec<Vec<usize>> {
    match mode {
        LogVolumeMode::SumLogWidth => (0..k)
            .map(|j| [j, k + j].into_iter().filter(|&p| !fixed[p]).collect::<Vec<_>>())
            .filter(|t| !t.is_empty())
            .collect(),
        LogVolumeMode::SumLogBoth => (0..2 * k).filter(|&p| !fixed[p]).map(|p| vec![p]).collect(),
    }
}

/// Free variables whose feasible extent is below [`DEGENERATE_WIDTH`]. A
/// variable pinned at zero leaves no strict interior even when its objective
/// term is still nondegenerate.
fn degenerate_variables(
    w: &DMatrix<f64>,
    d: &DVector<f64>,
    fixed: &[bool],
    terms: &[Vec<usize>],
) -> Result<Vec<usize>, SolverError> {
    let nv = w.ncols();
    let lower = DVector::zeros(nv);
    let upper = DVector::from_iterator(
        nv,
        fixed.iter().map(|&f| if f { 0.0 } else { f64::INFINITY }),
    );
    let mut degenerate = Vec::new();
    for p in (0..nv).filter(|&p| !fixed[p]) {
        let mut c = DVector::zeros(nv);
        c[p] = 1.0;
        let lp = LpProblem::new(c, w.clone(), d.clone()).with_bounds(lower.clone(), upper.clone());
        let rep = solve_lp(&lp)?;
        match rep.status {
            SolveStatus::Optimal => {
                if rep.objective < DEGENERATE_WIDTH {
                    degenerate.push(p);
                }
            }
            SolveStatus::Infeasible => return Err(SolverError::Infeasible),
            SolveStatus::Unbounded => {
                if terms.iter().any(|t| t.contains(&p)) {
                    return Err(SolverError::Unbounded(p));
                }
            }
            SolveStatus::MaxIter => return Err(SolverError::Numerical("extent LP did not converge")),
        }
    }
    Ok(degenerate)
}

/// Maximize the common margin `τ` in `G v + τ ≤ h` (capped at 1).
fn strictly_feasible_point(g: &DMatrix<f64>, h: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    let (m, n) = g.shape();
    let mut a = DMatrix::zeros(m, n + 1);
    a.view_mut((0, 0), (m, n)).copy_from(g);
    for i in 0..m {
        a[(i, n)] = 1.0;
    }
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let mut upper = DVector::from_element(n + 1, f64::INFINITY);
    upper[n] = 1.0;
    let lower = DVector::from_element(n + 1, f64::NEG_INFINITY);
    let rep = solve_lp(&LpProblem::new(c, a, h.clone()).with_bounds(lower, upper))?;
    match rep.status {
        SolveStatus::Optimal if rep.x[n] > 1e-12 => Ok(rep.x.rows(0, n).into_owned()),
        SolveStatus::Optimal => Err(SolverError::NoInterior),
        SolveStatus::Infeasible => Err(SolverError::Infeasible),
        _ => Err(SolverError::Numerical("phase-1 LP failed")),
    }
}

struct BarrierEval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn eval(
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    terms: &[Vec<usize>],
    t: f64,
    v: &DVector<f64>,
    derivs: bool,
) -> Option<BarrierEval> {
    let n = v.len();
    let slack = h - g * v;
    if slack.iter().any(|s| *s <= 0.0) {
        return None;
    }
    let mut value = 0.0;
    let mut grad = DVector::zeros(if derivs { n } else { 0 });
    let mut hess = DMatrix::zeros(if derivs { n } else { 0 }, if derivs { n } else { 0 });
    for term in terms {
        let s: f64 = term.iter().map(|&p| v[p]).sum();
        if s <= 0.0 {
            return None;
        }
        value -= s.ln();
        if derivs {
            for &p in term {
                grad[p] -= 1.0 / s;
                for &q in term {
                    hess[(p, q)] += 1.0 / (s * s);
                }
            }
        }
    }
    for (i, si) in slack.iter().enumerate() {
        value -= si.ln() / t;
        if derivs {
            let row = g.row(i);
            for p in 0..n {
                let gp = row[p];
                if gp == 0.0 {
                    continue;
                }
                grad[p] += gp / (t * si);
                for q in 0..n {
                    let gq = row[q];
                    if gq != 0.0 {
                        hess[(p, q)] += gp * gq / (t * si * si);
                    }
                }
            }
        }
    }
    Some(BarrierEval { value, grad, hess })
}

fn newton_step(e: &BarrierEval) -> Option<DVector<f64>> {
    let neg = -&e.grad;
    let n = neg.len();
    let scale = e.hess.diagonal().amax().max(1e-300);
    // Directions the objective is flat along (f1 with a shared width) leave
    // the Hessian numerically singular; a growing ridge picks the short step.
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut hr = e.hess.clone();
        for i in 0..n {
            hr[(i, i)] += ridge;
        }
        if let Some(ch) = hr.cholesky() {
            let dx = ch.solve(&neg);
            if dx.iter().all(|v| v.is_finite()) {
                return Some(dx);
            }
        }
        ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 100.0 };
    }
    None
}

/// Minimizes `-f(v) - (1/t) Σ log s_i(v)` along an increasing `t` schedule.
/// Returns the final point, total Newton iterations and the last Newton
/// decrement `λ²/2`.
fn barrier(
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    terms: &[Vec<usize>],
    mut v: DVector<f64>,
) -> (DVector<f64>, usize, f64) {
    let m = g.nrows() as f64;
    let mut t = 1.0;
    let mut iterations = 0usize;
    let mut decrement = f64::INFINITY;
    loop {
        // Centering.
        while let Some(e) = eval(g, h, terms, t, &v, true) {
            let Some(dv) = newton_step(&e) else {
                break;
            };
            let lambda2 = -e.grad.dot(&dv);
            decrement = 0.5 * lambda2.max(0.0);
            if decrement <= NEWTON_TOL || iterations >= MAX_ITER {
                break;
            }
            iterations += 1;
            let mut step = 1.0;
            let mut moved = false;
            while step > 1e-16 {
                let cand = &v + &dv * step;
                if let Some(ec) = eval(g, h, terms, t, &cand, false) {
                    if ec.value <= e.value - ALPHA * step * lambda2 {
                        v = cand;
                        moved = true;
                        break;
                    }
                }
                step *= BETA;
            }
            if !moved {
                // Rounding floor reached; the point is as central as arithmetic allows.
                decrement = 0.0;
                break;
            }
        }
        if m / t <= BARRIER_GAP || iterations >= MAX_ITER {
            break;
        }
        t *= T_GROWTH;
    }
    (v, iterations, decrement)
}

fn log_objective(terms: &[Vec<usize>], v: &DVector<f64>) -> f64 {
    terms.iter().map(|t| t.iter().map(|&p| v[p]).sum::<f64>().ln()).sum()
}

/// Equality-constrained Newton on the rows the barrier point leaves nearly
/// tight. Returns the polished point only if it stays feasible, its
/// multipliers are nonnegative and the objective does not drop.
fn polish(
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    terms: &[Vec<usize>],
    v0: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = v0.len();
    let scale = h.amax().max(v0.amax()).max(1.0);
    let slack = h - g * v0;
    let active: Vec<usize> = (0..g.nrows()).filter(|&i| slack[i] <= ACTIVE_SLACK * scale).collect();
    if active.is_empty() {
        return None;
    }
    let na = active.len();
    let ga = DMatrix::from_fn(na, n, |r, c| g[(active[r], c)]);
    let ha = DVector::from_fn(na, |r, _| h[active[r]]);
    let mut v = v0.clone();
    let mut nu = DVector::zeros(na);
    for _ in 0..50 {
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for term in terms {
            let s: f64 = term.iter().map(|&p| v[p]).sum();
            if s <= 0.0 {
                return None;
            }
            for &p in term {
                grad[p] -= 1.0 / s;
                for &q in term {
                    hess[(p, q)] += 1.0 / (s * s);
                }
            }
        }
        let mut kkt = DMatrix::zeros(n + na, n + na);
        kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
        kkt.view_mut((0, n), (n, na)).copy_from(&ga.transpose());
        kkt.view_mut((n, 0), (na, n)).copy_from(&ga);
        let mut rhs = DVector::zeros(n + na);
        rhs.rows_mut(0, n).copy_from(&(-&grad));
        rhs.rows_mut(n, na).copy_from(&(&ha - &ga * &v));
        let sol = kkt.svd(true, true).solve(&rhs, 1e-13).ok()?;
        let dv = sol.rows(0, n).into_owned();
        nu = sol.rows(n, na).into_owned();
        v += &dv;
        if dv.amax() <= 1e-15 * scale {
            break;
        }
    }
    let mut grad = DVector::zeros(n);
    for term in terms {
        let s: f64 = term.iter().map(|&p| v[p]).sum();
        for &p in term {
            grad[p] -= 1.0 / s;
        }
    }
    let stationarity = (&grad + ga.transpose() * &nu).amax();
    let gscale = grad.amax().max(1.0);
    let viol = (g * &v - h).max();
    let ok = v.iter().all(|x| x.is_finite())
        && stationarity <= 1e-9 * gscale
        && nu.min() >= -1e-9 * gscale
        && viol <= 1e-12 * scale
        && log_objective(terms, &v) >= log_objective(terms, v0) - 1e-12;
    ok.then_some(v)
}
