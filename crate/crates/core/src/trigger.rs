//! Candidate sequences, principal polytopes and triggering boxes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{shape_ratio, weighted_projection, GeometryError, HyperRect, Polytope, FEAS_TOL};
use crate::rmpc::MpcSolution;
use crate::solver::{
    maximize_log_volume_fixed, solve_lp, LogVolumeMode, LpProblem, SolveStatus, SolverError,
    DEGENERATE_WIDTH,
};
use crate::tightening::RmpcSetup;

/// Relative size below which a mapped facet normal counts as zero.
const ZERO_ROW: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriggerError {
    #[error("index j = {j} outside 1..={max}")]
    Index { j: usize, max: usize },
    #[error("candidate violates {group:?} set at stage {stage} by {violation:e}")]
    InfeasibleCandidate { group: RowGroup, stage: usize, violation: f64 },
    #[error("construction LP {0}")]
    Lp(&'static str),
    #[error("principal polytope is unbounded along variable {0}")]
    Unbounded(usize),
    #[error("box {j}: {source}")]
    Stage { j: usize, source: Box<TriggerError> },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoxMethod {
    #[serde(rename = "CP1")]
    Cp1,
    #[serde(rename = "CP2")]
    Cp2,
    #[serde(rename = "LP1")]
    Lp1,
    #[serde(rename = "LP2")]
    Lp2,
}

impl BoxMethod {
    pub const ALL: [BoxMethod; 4] = [BoxMethod::Cp1, BoxMethod::Cp2, BoxMethod::Lp1, BoxMethod::Lp2];

    pub fn q(self) -> u8 {
        match self {
            BoxMethod::Cp1 | BoxMethod::Lp1 => 1,
            BoxMethod::Cp2 | BoxMethod::Lp2 => 2,
        }
    }
}

/// Shifted sequences for index `j`: `ũ, s̃^U, s̃^X` have `N` entries, `φ̃` has
/// `N + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateData {
    pub j: usize,
    pub u: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
    pub su: Vec<DVector<f64>>,
    pub sx: Vec<DVector<f64>>,
}

pub fn build_candidates(
    setup: &RmpcSetup,
    sol: &MpcSolution,
    j: usize,
) -> Result<CandidateData, TriggerError> {
    let n = setup.n;
    if j == 0 || j >= n {
        return Err(TriggerError::Index { j, max: n - 1 });
    }
    let acl = setup.a_cl();
    // A_cl^p φ_N for p = 0..j.
    let mut tail = vec![sol.x[n].clone()];
    for _ in 0..j {
        let next = &acl * tail.last().expect("nonempty");
        tail.push(next);
    }
    let mut u = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n + 1);
    let mut su = Vec::with_capacity(n);
    let mut sx = Vec::with_capacity(n);
    for i in 0..=n {
        x.push(if i + j <= n { sol.x[j + i].clone() } else { tail[j + i - n].clone() });
    }
    for i in 0..n {
        if i + j < n {
            u.push(sol.u[j + i].clone());
            su.push(sol.su[j + i].clone());
            sx.push(sol.sx[j + i].clone());
        } else {
            let ui = &setup.f * &tail[j + i - n];
            su.push(weighted_projection(&ui, &setup.tu_seq[i], &setup.r)?.projection);
            sx.push(weighted_projection(&x[i], &setup.tx_seq[i], &setup.q)?.projection);
            u.push(ui);
        }
    }
    Ok(CandidateData { j, u, x, su, sx })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowGroup {
    State,
    Input,
    StateTarget,
    InputTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RowSource {
    pub group: RowGroup,
    pub stage: usize,
    pub facet: usize,
}

/// Rows `⟨w_i, [v̄; v̲]⟩ ≤ d_i`, together with the mapped normals `ā_i`
/// describing `{e : Ā e ≤ d}` in error coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrincipalPolytope {
    pub abar: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub d: DVector<f64>,
    pub meta: Vec<RowSource>,
    /// Zero-map rows checked and dropped.
    pub dropped: usize,
}

impl PrincipalPolytope {
    /// Rows `ā_i e ≤ d_i` with no provenance; `w_i = [ā_i⁺, (−ā_i)⁺]`.
    pub fn from_rows(abar: DMatrix<f64>, d: DVector<f64>) -> Result<Self, TriggerError> {
        if abar.nrows() != d.len() {
            return Err(TriggerError::Geometry(GeometryError::Dimension(format!(
                "{} rows, {} offsets",
                abar.nrows(),
                d.len()
            ))));
        }
        if d.iter().any(|v| *v < 0.0) {
            return Err(TriggerError::Geometry(GeometryError::Empty));
        }
        let meta = Vec::new();
        Ok(Self::with_meta(abar, d, meta, 0))
    }

    fn with_meta(abar: DMatrix<f64>, d: DVector<f64>, meta: Vec<RowSource>, dropped: usize) -> Self {
        let (m, k) = abar.shape();
        let mut w = DMatrix::zeros(m, 2 * k);
        for r in 0..m {
            for p in 0..k {
                w[(r, p)] = abar[(r, p)].max(0.0);
                w[(r, k + p)] = (-abar[(r, p)]).max(0.0);
            }
        }
        PrincipalPolytope { abar, w, d, meta, dropped }
    }

    pub fn k(&self) -> usize {
        self.abar.ncols()
    }

    /// `{e : Ā e ≤ d}`.
    pub fn as_polytope(&self) -> Result<Polytope, GeometryError> {
        Polytope::new(self.abar.clone(), self.d.clone())
    }

    /// Largest row violation of `B(l, u)`, evaluated at its worst vertex.
    pub fn box_violation(&self, b: &HyperRect) -> f64 {
        let k = self.k();
        let mut v = DVector::zeros(2 * k);
        for p in 0..k {
            v[p] = b.u[p];
            v[k + p] = -b.l[p];
        }
        if self.d.is_empty() {
            return f64::NEG_INFINITY;
        }
        (&self.w * v - &self.d).max()
    }
}

pub fn assemble_principal(
    setup: &RmpcSetup,
    cand: &CandidateData,
) -> Result<PrincipalPolytope, TriggerError> {
    let (n, nx) = (setup.n, setup.nx());
    let mut abar_rows: Vec<DVector<f64>> = Vec::new();
    let mut d = Vec::new();
    let mut meta = Vec::new();
    let mut dropped = 0;
    for i in 0..n {
        let kl = &setup.k_tilde[i] * &setup.l_tilde[i];
        let groups: [(RowGroup, &DVector<f64>, &Polytope, &DMatrix<f64>); 4] = [
            (RowGroup::State, &cand.x[i], &setup.x_seq[i], &setup.l_tilde[i]),
            (RowGroup::Input, &cand.u[i], &setup.u_seq[i], &kl),
            (RowGroup::StateTarget, &cand.sx[i], &setup.tx_seq[i], &setup.l_tilde[i]),
            (RowGroup::InputTarget, &cand.su[i], &setup.tu_seq[i], &kl),
        ];
        for (group, xi, set, map) in groups {
            for f in 0..set.n_facets() {
                let a = set.a().row(f);
                let ab = (a * map).transpose();
                let di = set.b()[f] - (a * xi)[0];
                if di < -FEAS_TOL {
                    return Err(TriggerError::InfeasibleCandidate { group, stage: i, violation: -di });
                }
                if ab.amax() <= ZERO_ROW * a.norm() {
                    dropped += 1;
                    continue;
                }
                abar_rows.push(ab);
                d.push(di.max(0.0));
                meta.push(RowSource { group, stage: i, facet: f });
            }
        }
    }
    let abar = DMatrix::from_fn(abar_rows.len(), nx, |r, p| abar_rows[r][p]);
    Ok(PrincipalPolytope::with_meta(abar, DVector::from_vec(d), meta, dropped))
}

/// A constructed box with the coordinates that were clamped to zero width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuiltBox {
    pub rect: HyperRect,
    pub degenerate: Vec<usize>,
}

fn box_from_extents(v: &DVector<f64>, k: usize) -> HyperRect {
    let l = DVector::from_fn(k, |p, _| -v[k + p].max(0.0));
    let u = DVector::from_fn(k, |p, _| v[p].max(0.0));
    HyperRect { l, u }
}

fn degenerate_of(b: &HyperRect) -> Vec<usize> {
    (0..b.dim()).filter(|&p| b.u[p] - b.l[p] < DEGENERATE_WIDTH).collect()
}

/// Maximum-volume box by the log-volume program.
pub fn construct_box_cp(pp: &PrincipalPolytope, q: u8) -> Result<BuiltBox, TriggerError> {
    let k = pp.k();
    let mode = if q == 1 { LogVolumeMode::SumLogWidth } else { LogVolumeMode::SumLogBoth };
    let mut fixed = vec![false; 2 * k];
    let rep = loop {
        match maximize_log_volume_fixed(&pp.w, &pp.d, mode, &fixed) {
            Ok(r) => break r,
            Err(SolverError::DegenerateCoordinate(vars)) if vars.iter().any(|&p| !fixed[p]) => {
                for p in vars {
                    fixed[p] = true;
                }
            }
            Err(SolverError::Unbounded(p)) => return Err(TriggerError::Unbounded(p)),
            Err(e) => return Err(e.into()),
        }
    };
    if rep.status != SolveStatus::Optimal {
        return Err(TriggerError::Solver(SolverError::Numerical("log-volume program did not converge")));
    }
    let rect = box_from_extents(&rep.x, k);
    let mut degenerate: Vec<usize> = (0..k).filter(|&p| fixed[p] && fixed[k + p]).collect();
    for p in degenerate_of(&rect) {
        if !degenerate.contains(&p) {
            degenerate.push(p);
        }
    }
    degenerate.sort_unstable();
    Ok(BuiltBox { rect, degenerate })
}

fn lp_max(p: LpProblem, what: &'static str) -> Result<DVector<f64>, TriggerError> {
    let rep = solve_lp(&p)?;
    match rep.status {
        SolveStatus::Optimal => Ok(rep.x),
        SolveStatus::Infeasible => Err(TriggerError::Lp(what)),
        SolveStatus::Unbounded => Err(TriggerError::Unbounded(0)),
        SolveStatus::MaxIter => Err(TriggerError::Lp(what)),
    }
}

/// Direction-constrained box by the linear-program relaxation.
pub fn construct_box_lp(pp: &PrincipalPolytope, q: u8) -> Result<BuiltBox, TriggerError> {
    let k = pp.k();
    let m = pp.d.len();
    let rect = if m == 0 {
        return Err(TriggerError::Unbounded(0));
    } else if q == 1 {
        // r_j: longest segment along e_j inside the polytope through the
        // nonpositive orthant corner z ≤ 0 ≤ z + ω e_j.
        let ab = &pp.abar;
        let mut r = DVector::zeros(k);
        for j in 0..k {
            let mut a = DMatrix::zeros(2 * m + k, k + 1);
            let mut b = DVector::zeros(2 * m + k);
            a.view_mut((0, 0), (m, k)).copy_from(ab);
            a.view_mut((m, 0), (m, k)).copy_from(ab);
            for i in 0..m {
                a[(m + i, k)] = ab[(i, j)];
            }
            b.rows_mut(0, m).copy_from(&pp.d);
            b.rows_mut(m, m).copy_from(&pp.d);
            for p in 0..k {
                a[(2 * m + p, p)] = -1.0;
            }
            a[(2 * m + j, k)] = -1.0;
            let mut c = DVector::zeros(k + 1);
            c[k] = 1.0;
            let mut lower = DVector::from_element(k + 1, f64::NEG_INFINITY);
            lower[k] = 0.0;
            let mut upper = DVector::zeros(k + 1);
            upper[k] = f64::INFINITY;
            let x = lp_max(LpProblem::new(c, a, b).with_bounds(lower, upper), "segment length")?;
            r[j] = if x[k] < DEGENERATE_WIDTH { 0.0 } else { x[k] };
        }
        if r.iter().all(|v| *v == 0.0) {
            HyperRect::symmetric(k, 0.0)
        } else {
            let abp = ab.map(|v| v.max(0.0)) * &r;
            let mut a = DMatrix::zeros(m + k, k + 1);
            let mut b = DVector::zeros(m + k);
            a.view_mut((0, 0), (m, k)).copy_from(ab);
            for i in 0..m {
                a[(i, k)] = abp[i];
            }
            b.rows_mut(0, m).copy_from(&pp.d);
            for p in 0..k {
                a[(m + p, p)] = -1.0;
                a[(m + p, k)] = -r[p];
            }
            let mut c = DVector::zeros(k + 1);
            c[k] = 1.0;
            let mut lower = DVector::from_element(k + 1, f64::NEG_INFINITY);
            lower[k] = 0.0;
            let mut upper = DVector::zeros(k + 1);
            upper[k] = f64::INFINITY;
            let x = lp_max(LpProblem::new(c, a, b).with_bounds(lower, upper), "scaling")?;
            let lambda = x[k];
            let z = x.rows(0, k).into_owned();
            let mut l = DVector::zeros(k);
            let mut u = DVector::zeros(k);
            for p in 0..k {
                l[p] = z[p].min(0.0);
                u[p] = (z[p] + lambda * r[p]).max(0.0);
                if r[p] == 0.0 {
                    l[p] = 0.0;
                    u[p] = 0.0;
                }
            }
            HyperRect { l, u }
        }
    } else {
        // Each one-variable segment program `max ω : W_{:,p} ω ≤ d, ω ≥ 0`
        // has the closed form min_i d_i / W_ip.
        let mut r = DVector::zeros(2 * k);
        for p in 0..2 * k {
            let mut best = f64::INFINITY;
            for i in 0..m {
                if pp.w[(i, p)] > 0.0 {
                    best = best.min(pp.d[i] / pp.w[(i, p)]);
                }
            }
            if !best.is_finite() {
                return Err(TriggerError::Unbounded(p));
            }
            r[p] = if best < DEGENERATE_WIDTH { 0.0 } else { best };
        }
        let wr = &pp.w * &r;
        let mut lambda = f64::INFINITY;
        for i in 0..m {
            if wr[i] > 0.0 {
                lambda = lambda.min(pp.d[i] / wr[i]);
            }
        }
        if !lambda.is_finite() {
            lambda = 0.0;
        }
        box_from_extents(&(r * lambda), k)
    };
    let degenerate = degenerate_of(&rect);
    Ok(BuiltBox { rect, degenerate })
}

pub fn construct_box(pp: &PrincipalPolytope, method: BoxMethod) -> Result<BuiltBox, TriggerError> {
    match method {
        BoxMethod::Cp1 | BoxMethod::Cp2 => construct_box_cp(pp, method.q()),
        BoxMethod::Lp1 | BoxMethod::Lp2 => construct_box_lp(pp, method.q()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxVolumes {
    pub vol1: f64,
    pub vol2: f64,
}

impl BoxVolumes {
    pub fn of(b: &HyperRect) -> Self {
        BoxVolumes { vol1: b.volume_width(), vol2: b.volume_both() }
    }
}

/// Triggering boxes `E_1..E_{N−1}` in error coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerSchedule {
    pub method: BoxMethod,
    pub boxes: Vec<HyperRect>,
    pub volumes: Vec<BoxVolumes>,
    pub degenerate_coords: Vec<Vec<usize>>,
    /// `r_c/r_∘` of each principal polytope; `None` when it is unbounded.
    pub shape_ratios: Vec<Option<f64>>,
    /// Largest principal-row violation of each box.
    pub row_violation: Vec<f64>,
}

impl TriggerSchedule {
    /// `E_j` for `1 ≤ j ≤ N−1`.
    pub fn get(&self, j: usize) -> &HyperRect {
        &self.boxes[j - 1]
    }
}

struct StageBox {
    built: BuiltBox,
    ratio: Option<f64>,
    violation: f64,
}

fn stage_box(
    setup: &RmpcSetup,
    sol: &MpcSolution,
    j: usize,
    method: BoxMethod,
) -> Result<StageBox, TriggerError> {
    let cand = build_candidates(setup, sol, j)?;
    let pp = assemble_principal(setup, &cand)?;
    let built = construct_box(&pp, method)?;
    let ratio = match shape_ratio(&pp.as_polytope()?) {
        Ok(r) => Some(r),
        Err(GeometryError::Unbounded) => None,
        Err(e) => return Err(e.into()),
    };
    let violation = pp.box_violation(&built.rect);
    Ok(StageBox { built, ratio, violation })
}

/// Construct every box of the schedule; boxes are independent and built in
/// parallel.
pub fn build_schedule(
    setup: &RmpcSetup,
    sol: &MpcSolution,
    method: BoxMethod,
) -> Result<TriggerSchedule, TriggerError> {
    let stages: Vec<StageBox> = (1..setup.n)
        .into_par_iter()
        .map(|j| {
            stage_box(setup, sol, j, method)
                .map_err(|e| TriggerError::Stage { j, source: Box::new(e) })
        })
        .collect::<Result<_, _>>()?;
    let mut s = TriggerSchedule {
        method,
        boxes: Vec::with_capacity(stages.len()),
        volumes: Vec::with_capacity(stages.len()),
        degenerate_coords: Vec::with_capacity(stages.len()),
        shape_ratios: Vec::with_capacity(stages.len()),
        row_violation: Vec::with_capacity(stages.len()),
    };
    for st in stages {
        s.volumes.push(BoxVolumes::of(&st.built.rect));
        s.boxes.push(st.built.rect);
        s.degenerate_coords.push(st.built.degenerate);
        s.shape_ratios.push(st.ratio);
        s.row_violation.push(st.violation);
    }
    Ok(s)
}
