//! Dense two-phase primal simplex.
//!
//! Problems are stated as `max cᵀx  s.t.  A x ≤ b,  A_eq x = b_eq,
//! lower ≤ x ≤ upper` and brought to standard form internally. Pricing is
//! Dantzig's rule with a switch to Bland's rule after a run of degenerate
//! pivots, so the method terminates and is fully deterministic. The final
//! basic solution is recomputed from the original data with an LU solve.

use nalgebra::{DMatrix, DVector};

use super::{SolveReport, SolveStatus, SolverError, FEAS_TOL};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone)]
pub struct LpProblem {
    /// Objective, maximized.
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl LpProblem {
    /// `max cᵀx s.t. A x ≤ b` with free variables.
    pub fn new(c: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let n = c.len();
        LpProblem {
            c,
            a,
            b,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_equalities(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    fn validate(&self) -> Result<(), SolverError> {
        let n = self.c.len();
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(SolverError::Dimension(format!(
                "A is {}x{}, b has {}, c has {}",
                self.a.nrows(),
                self.a.ncols(),
                self.b.len(),
                n
            )));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(SolverError::Dimension("equality block".into()));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(SolverError::Dimension("bounds".into()));
        }
        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !finite(self.c.as_slice())
            || !finite(self.a.as_slice())
            || !finite(self.b.as_slice())
            || !finite(self.a_eq.as_slice())
            || !finite(self.b_eq.as_slice())
        {
            return Err(SolverError::NonFinite("LP data"));
        }
        if self.lower.iter().any(|v| v.is_nan() || *v == f64::INFINITY)
            || self.upper.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(SolverError::NonFinite("LP bounds"));
        }
        Ok(())
    }
}

/// How an original variable maps to nonnegative standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = l + y
    Shift { col: usize, l: f64 },
    /// x = u - y
    Flip { col: usize, u: f64 },
    /// x = y⁺ - y⁻
    Split { pos: usize, neg: usize },
}

impl VarMap {
    fn offset(&self) -> f64 {
        match *self {
            VarMap::Shift { l, .. } => l,
            VarMap::Flip { u, .. } => u,
            VarMap::Split { .. } => 0.0,
        }
    }
}

struct StandardForm {
    /// rows × (structural + slack) columns
    t: DMatrix<f64>,
    r: DVector<f64>,
    cost: DVector<f64>,
    maps: Vec<VarMap>,
    /// Column of each row's slack, if the row is an inequality.
    slack: Vec<Option<usize>>,
    /// +1 or -1: sign applied to the row to make its rhs nonnegative.
    row_sign: Vec<f64>,
    n_ineq: usize,
    n_eq: usize,
}

fn standardize(p: &LpProblem) -> StandardForm {
    let n = p.c.len();
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (l, u) = (p.lower[j], p.upper[j]);
        if l.is_finite() {
            maps.push(VarMap::Shift { col: ncols, l });
            if u.is_finite() {
                bound_rows.push((ncols, u - l));
            }
            ncols += 1;
        } else if u.is_finite() {
            maps.push(VarMap::Flip { col: ncols, u });
            ncols += 1;
        } else {
            maps.push(VarMap::Split {
                pos: ncols,
                neg: ncols + 1,
            });
            ncols += 2;
        }
    }
    let n_ineq = p.a.nrows() + bound_rows.len();
    let n_eq = p.a_eq.nrows();
    let rows = n_ineq + n_eq;
    let total = ncols + n_ineq;
    let mut t = DMatrix::zeros(rows, total);
    let mut r = DVector::zeros(rows);

    let put_row = |t: &mut DMatrix<f64>, row: usize, coeffs: &[f64], rhs: f64| -> f64 {
        let mut shift = 0.0;
        for (j, &a) in coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            shift += a * maps[j].offset();
            match maps[j] {
                VarMap::Shift { col, .. } => t[(row, col)] += a,
                VarMap::Flip { col, .. } => t[(row, col)] -= a,
                VarMap::Split { pos, neg } => {
                    t[(row, pos)] += a;
                    t[(row, neg)] -= a;
                }
            }
        }
        rhs - shift
    };

    for i in 0..p.a.nrows() {
        let coeffs: Vec<f64> = p.a.row(i).iter().copied().collect();
        r[i] = put_row(&mut t, i, &coeffs, p.b[i]);
    }
    for (k, &(col, width)) in bound_rows.iter().enumerate() {
        let row = p.a.nrows() + k;
        t[(row, col)] = 1.0;
        r[row] = width;
    }
    for i in 0..n_eq {
        let coeffs: Vec<f64> = p.a_eq.row(i).iter().copied().collect();
        r[n_ineq + i] = put_row(&mut t, n_ineq + i, &coeffs, p.b_eq[i]);
    }
    let mut slack = vec![None; rows];
    for (i, s) in slack.iter_mut().enumerate().take(n_ineq) {
        t[(i, ncols + i)] = 1.0;
        *s = Some(ncols + i);
    }
    let mut row_sign = vec![1.0; rows];
    for i in 0..rows {
        if r[i] < 0.0 {
            row_sign[i] = -1.0;
            r[i] = -r[i];
            for j in 0..total {
                t[(i, j)] = -t[(i, j)];
            }
        }
    }
    // minimize -cᵀx
    let mut cost = DVector::zeros(total);
    for (j, m) in maps.iter().enumerate() {
        let c = -p.c[j];
        match *m {
            VarMap::Shift { col, .. } => cost[col] += c,
            VarMap::Flip { col, .. } => cost[col] -= c,
            VarMap::Split { pos, neg } => {
                cost[pos] += c;
                cost[neg] -= c;
            }
        }
    }
    StandardForm {
        t,
        r,
        cost,
        maps,
        slack,
        row_sign,
        n_ineq,
        n_eq,
    }
}

/// Dense tableau with the objective row stored last and the rhs in the last column.
struct Tableau {
    m: DMatrix<f64>,
    rows: usize,
    cols: usize,
    basis: Vec<usize>,
    /// Columns that may never enter (artificials during phase 2).
    blocked: Vec<bool>,
    pivots: usize,
}

enum PhaseOutcome {
    Optimal,
    Unbounded(usize),
    MaxIter,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.m[(row, col)];
        let width = self.cols + 1;
        for j in 0..width {
            self.m[(row, j)] /= piv;
        }
        self.m[(row, col)] = 1.0;
        for i in 0..=self.rows {
            if i == row {
                continue;
            }
            let f = self.m[(i, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..width {
                let v = self.m[(row, j)];
                if v != 0.0 {
                    self.m[(i, j)] -= f * v;
                }
            }
            self.m[(i, col)] = 0.0;
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    fn run(&mut self, max_pivots: usize) -> PhaseOutcome {
        let obj = self.rows;
        let rhs = self.cols;
        let mut degenerate_run = 0usize;
        loop {
            if self.pivots >= max_pivots {
                return PhaseOutcome::MaxIter;
            }
            let bland = degenerate_run >= DEGENERATE_RUN;
            let mut enter = None;
            let mut best = -COST_TOL;
            for j in 0..self.cols {
                if self.blocked[j] {
                    continue;
                }
                let d = self.m[(obj, j)];
                if d < -COST_TOL {
                    if bland {
                        enter = Some(j);
                        break;
                    }
                    if d < best {
                        best = d;
                        enter = Some(j);
                    }
                }
            }
            let Some(col) = enter else {
                return PhaseOutcome::Optimal;
            };
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.rows {
                let a = self.m[(i, col)];
                if a > PIVOT_TOL {
                    let ratio = self.m[(i, rhs)].max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            ratio < best_ratio - 1e-12
                                || (ratio <= best_ratio + 1e-12 && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        best_ratio = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(row) = leave else {
                return PhaseOutcome::Unbounded(col);
            };
            if best_ratio <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(row, col);
        }
    }

    fn set_objective(&mut self, cost: &DVector<f64>) {
        let obj = self.rows;
        for j in 0..=self.cols {
            self.m[(obj, j)] = if j < cost.len() { cost[j] } else { 0.0 };
        }
        for i in 0..self.rows {
            let cb = self.m[(obj, self.basis[i])];
            if cb != 0.0 {
                for j in 0..=self.cols {
                    let v = self.m[(i, j)];
                    self.m[(obj, j)] -= cb * v;
                }
            }
        }
    }
}

/// Solve a linear program. Malformed input is an `Err`; infeasibility,
/// unboundedness and iteration exhaustion are reported through the status.
pub fn solve_lp(p: &LpProblem) -> Result<SolveReport, SolverError> {
    p.validate()?;
    let n = p.c.len();
    let sf = standardize(p);
    let rows = sf.t.nrows();
    let std_cols = sf.t.ncols();

    if rows == 0 {
        // Only sign constraints: each variable sits at whichever bound the objective prefers.
        let mut x = DVector::zeros(n);
        for j in 0..n {
            let c = p.c[j];
            let v = if c > 0.0 {
                p.upper[j]
            } else if c < 0.0 || p.lower[j].is_finite() {
                p.lower[j]
            } else if p.upper[j].is_finite() {
                p.upper[j]
            } else {
                0.0
            };
            if !v.is_finite() {
                let mut ray = DVector::zeros(n);
                ray[j] = c.signum();
                let mut rep = SolveReport::failed(SolveStatus::Unbounded, n, 0);
                rep.certificate = Some(ray);
                return Ok(rep);
            }
            x[j] = v;
        }
        return Ok(SolveReport {
            status: SolveStatus::Optimal,
            objective: p.c.dot(&x),
            x,
            kkt_residual: 0.0,
            iterations: 0,
            certificate: None,
        });
    }

    // Artificial columns for rows without a usable +1 slack.
    let mut art_rows = Vec::new();
    for i in 0..rows {
        let usable = sf.slack[i].is_some() && sf.row_sign[i] > 0.0;
        if !usable {
            art_rows.push(i);
        }
    }
    let n_art = art_rows.len();
    let cols = std_cols + n_art;
    let mut m = DMatrix::zeros(rows + 1, cols + 1);
    m.view_mut((0, 0), (rows, std_cols)).copy_from(&sf.t);
    for i in 0..rows {
        m[(i, cols)] = sf.r[i];
    }
    let mut basis = vec![0usize; rows];
    for (i, bi) in basis.iter_mut().enumerate() {
        if let Some(s) = sf.slack[i] {
            if sf.row_sign[i] > 0.0 {
                *bi = s;
            }
        }
    }
    for (k, &i) in art_rows.iter().enumerate() {
        m[(i, std_cols + k)] = 1.0;
        basis[i] = std_cols + k;
    }
    let mut tab = Tableau {
        m,
        rows,
        cols,
        basis,
        blocked: vec![false; cols],
        pivots: 0,
    };
    let max_pivots = 50 * (rows + cols) + 1000;

    // Phase 1
    if n_art > 0 {
        let mut c1 = DVector::zeros(cols);
        for k in 0..n_art {
            c1[std_cols + k] = 1.0;
        }
        tab.set_objective(&c1);
        if let PhaseOutcome::MaxIter = tab.run(max_pivots) {
            return Ok(SolveReport::failed(SolveStatus::MaxIter, n, tab.pivots));
        }
        let infeas = -tab.m[(rows, cols)];
        let scale = 1.0 + sf.r.amax();
        if infeas > FEAS_TOL * scale {
            let cert = farkas_certificate(&tab, &sf, &art_rows, std_cols);
            let mut rep = SolveReport::failed(SolveStatus::Infeasible, n, tab.pivots);
            rep.certificate = Some(cert);
            return Ok(rep);
        }
        // Drive zero-level artificials out of the basis where possible.
        for i in 0..rows {
            if tab.basis[i] >= std_cols {
                if let Some(j) = (0..std_cols).find(|&j| tab.m[(i, j)].abs() > PIVOT_TOL) {
                    tab.pivot(i, j);
                }
            }
        }
        for k in 0..n_art {
            tab.blocked[std_cols + k] = true;
        }
    }

    // Phase 2
    let mut c2 = DVector::zeros(cols);
    c2.rows_mut(0, std_cols).copy_from(&sf.cost);
    tab.set_objective(&c2);
    match tab.run(max_pivots) {
        PhaseOutcome::MaxIter => Ok(SolveReport::failed(SolveStatus::MaxIter, n, tab.pivots)),
        PhaseOutcome::Unbounded(col) => {
            let mut dir = DVector::zeros(std_cols);
            if col < std_cols {
                dir[col] = 1.0;
            }
            for i in 0..rows {
                let b = tab.basis[i];
                if b < std_cols {
                    dir[b] = -tab.m[(i, col)];
                }
            }
            let ray = to_original_direction(&sf.maps, &dir, n);
            let mut rep = SolveReport::failed(SolveStatus::Unbounded, n, tab.pivots);
            rep.certificate = Some(ray);
            Ok(rep)
        }
        PhaseOutcome::Optimal => Ok(finish_optimal(p, &sf, &tab, &art_rows, std_cols)),
    }
}

fn to_original_direction(maps: &[VarMap], y: &DVector<f64>, n: usize) -> DVector<f64> {
    let mut x = DVector::zeros(n);
    for (j, m) in maps.iter().enumerate() {
        x[j] = match *m {
            VarMap::Shift { col, .. } => y[col],
            VarMap::Flip { col, .. } => -y[col],
            VarMap::Split { pos, neg } => y[pos] - y[neg],
        };
    }
    x
}

fn to_original_point(maps: &[VarMap], y: &DVector<f64>, n: usize) -> DVector<f64> {
    let mut x = to_original_direction(maps, y, n);
    for (j, m) in maps.iter().enumerate() {
        x[j] += m.offset();
    }
    x
}

/// Phase-1 duals mapped back to the original rows (inequalities, finite upper
/// bounds, equalities). For the inequality part `y ≥ 0`, and `yᵀ[A; A_eq] = 0`
/// with `yᵀ[b; b_eq] < 0` on free variables.
fn farkas_certificate(
    tab: &Tableau,
    sf: &StandardForm,
    art_rows: &[usize],
    std_cols: usize,
) -> DVector<f64> {
    let rows = tab.rows;
    let mut y = DVector::zeros(rows);
    // Reduced cost of artificial k is 1 - y_i for its row i, and of slack s_i is -y_i.
    for i in 0..rows {
        if let Some(s) = sf.slack[i] {
            if sf.row_sign[i] > 0.0 {
                y[i] = -tab.m[(rows, s)];
            }
        }
    }
    for (k, &i) in art_rows.iter().enumerate() {
        y[i] = 1.0 - tab.m[(rows, std_cols + k)];
    }
    let n_orig_ineq = sf.n_ineq;
    let mut cert = DVector::zeros(n_orig_ineq + sf.n_eq);
    for i in 0..rows {
        cert[i] = -y[i] * sf.row_sign[i];
    }
    cert
}

fn finish_optimal(
    p: &LpProblem,
    sf: &StandardForm,
    tab: &Tableau,
    art_rows: &[usize],
    std_cols: usize,
) -> SolveReport {
    let n = p.c.len();
    let rows = tab.rows;
    let cols = tab.cols;
    let mut y = DVector::zeros(std_cols);
    for i in 0..rows {
        let b = tab.basis[i];
        if b < std_cols {
            y[b] = tab.m[(i, cols)].max(0.0);
        }
    }

    // Refine the basic solution against the original standard-form data.
    let mut bmat = DMatrix::zeros(rows, rows);
    for (k, &col) in tab.basis.iter().enumerate() {
        if col < std_cols {
            bmat.set_column(k, &sf.t.column(col));
        } else {
            // basic artificial on a redundant row
            bmat[(art_rows[col - std_cols], k)] = 1.0;
        }
    }
    let lu = bmat.clone().lu();
    if let Some(yb) = lu.solve(&sf.r) {
        if yb.iter().all(|v| v.is_finite() && *v >= -1e-9) {
            for (k, &col) in tab.basis.iter().enumerate() {
                if col < std_cols {
                    y[col] = yb[k].max(0.0);
                }
            }
        }
    }
    // Duals from the basis and the reduced costs of structural columns.
    let mut cb = DVector::zeros(rows);
    for (k, &col) in tab.basis.iter().enumerate() {
        if col < std_cols {
            cb[k] = sf.cost[col];
        }
    }
    let dual_infeas = match bmat.transpose().lu().solve(&cb) {
        Some(pi) => {
            let reduced = &sf.cost - sf.t.transpose() * &pi;
            let mut worst: f64 = 0.0;
            for j in 0..std_cols {
                if !tab.basis.contains(&j) {
                    worst = worst.max(-reduced[j]);
                }
            }
            worst
        }
        None => (0..cols)
            .filter(|&j| !tab.blocked[j])
            .map(|j| -tab.m[(rows, j)])
            .fold(0.0, f64::max),
    };

    let x = to_original_point(&sf.maps, &y, n);
    let primal = primal_violation(p, &x);
    let kkt = primal.max(dual_infeas.max(0.0));
    let status = if kkt <= 1e-6 {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIter
    };
    SolveReport {
        status,
        objective: p.c.dot(&x),
        x,
        kkt_residual: kkt,
        iterations: tab.pivots,
        certificate: None,
    }
}

fn primal_violation(p: &LpProblem, x: &DVector<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    if p.a.nrows() > 0 {
        let r = &p.a * x - &p.b;
        worst = worst.max(r.max());
    }
    if p.a_eq.nrows() > 0 {
        let r = &p.a_eq * x - &p.b_eq;
        worst = worst.max(r.amax());
    }
    for j in 0..x.len() {
        worst = worst.max(p.lower[j] - x[j]).max(x[j] - p.upper[j]);
    }
    worst.max(0.0)
}
