//! Dense primal-dual interior-point method (Mehrotra predictor-corrector) for
//! convex quadratic programs
//!
//! ```txt
//!   min ½ xᵀHx + gᵀx   s.t.  a_i x ≤ b_i  (inequality rows)
//!                            a_i x = b_i  (rows flagged as equalities)
//! ```
//!
//! Infeasibility is confirmed, and certified, by a phase-1 simplex run when
//! the interior-point iteration fails to converge.

use nalgebra::{DMatrix, DVector};

use super::lp::{solve_lp, LpProblem};
use super::{SolveReport, SolveStatus, SolverError, FEAS_TOL, GAP_TOL, MAX_ITER};

const PSD_FLOOR: f64 = -1e-10;
const REG: f64 = 1e-12;
// Tighter targets are pursued first; the project tolerances are the fallback
// acceptance level when the iteration cap is hit.
const TIGHT_FEAS: f64 = 1e-10;
const TIGHT_GAP: f64 = 1e-11;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `true` marks an equality row.
    pub equality: Vec<bool>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let m = b.len();
        QpProblem {
            h,
            g,
            a,
            b,
            equality: vec![false; m],
        }
    }

    /// Stack equality rows below the existing rows.
    pub fn with_equalities(mut self, a_eq: &DMatrix<f64>, b_eq: &DVector<f64>) -> Self {
        let n = self.g.len();
        let (m0, me) = (self.a.nrows(), a_eq.nrows());
        let mut a = DMatrix::zeros(m0 + me, n);
        a.view_mut((0, 0), (m0, n)).copy_from(&self.a);
        a.view_mut((m0, 0), (me, n)).copy_from(a_eq);
        let mut b = DVector::zeros(m0 + me);
        b.rows_mut(0, m0).copy_from(&self.b);
        b.rows_mut(m0, me).copy_from(b_eq);
        self.equality.extend(std::iter::repeat_n(true, me));
        self.a = a;
        self.b = b;
        self
    }

    fn validate(&self) -> Result<(), SolverError> {
        let n = self.g.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(SolverError::Dimension(format!(
                "H is {}x{}, g has {n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() || self.equality.len() != self.b.len()
        {
            return Err(SolverError::Dimension("constraint block".into()));
        }
        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !finite(self.h.as_slice())
            || !finite(self.g.as_slice())
            || !finite(self.a.as_slice())
            || !finite(self.b.as_slice())
        {
            return Err(SolverError::NonFinite("QP data"));
        }
        Ok(())
    }

    fn split(&self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let n = self.g.len();
        let eq: Vec<usize> = (0..self.b.len()).filter(|&i| self.equality[i]).collect();
        let ineq: Vec<usize> = (0..self.b.len()).filter(|&i| !self.equality[i]).collect();
        let pick = |rows: &[usize]| {
            let mut a = DMatrix::zeros(rows.len(), n);
            let mut b = DVector::zeros(rows.len());
            for (k, &i) in rows.iter().enumerate() {
                a.set_row(k, &self.a.row(i));
                b[k] = self.b[i];
            }
            (a, b)
        };
        let (ai, bi) = pick(&ineq);
        let (ae, be) = pick(&eq);
        (ai, bi, ae, be)
    }
}

type Direction = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

struct Residuals {
    dual: DVector<f64>,
    eq: DVector<f64>,
    ineq: DVector<f64>,
}

#[allow(clippy::too_many_arguments)]
fn residuals(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    ai: &DMatrix<f64>,
    bi: &DVector<f64>,
    ae: &DMatrix<f64>,
    be: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    s: &DVector<f64>,
) -> Residuals {
    let mut dual = h * x + g;
    if ae.nrows() > 0 {
        dual += ae.transpose() * y;
    }
    if ai.nrows() > 0 {
        dual += ai.transpose() * z;
    }
    let eq = if ae.nrows() > 0 {
        ae * x - be
    } else {
        DVector::zeros(0)
    };
    let ineq = if ai.nrows() > 0 {
        ai * x + s - bi
    } else {
        DVector::zeros(0)
    };
    Residuals { dual, eq, ineq }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha: f64 = 1.0;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            alpha = alpha.min(-vi / di);
        }
    }
    alpha
}

fn amax0(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

/// Re-solve the KKT system with the rows whose slack is below their
/// multiplier held as equalities. Accepted only when the result is primal
/// feasible with nonnegative multipliers and a small dual residual.
#[allow(clippy::too_many_arguments)]
fn polish(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    ai: &DMatrix<f64>,
    bi: &DVector<f64>,
    ae: &DMatrix<f64>,
    be: &DVector<f64>,
    s: &DVector<f64>,
    z: &DVector<f64>,
    scale_b: f64,
    scale_g: f64,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = g.len();
    let pe = ae.nrows();
    let act: Vec<usize> = (0..ai.nrows()).filter(|&i| s[i] < z[i]).collect();
    let na = act.len();
    let dim = n + pe + na;
    if pe + na > n {
        return None;
    }
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-g));
    if pe > 0 {
        k.view_mut((0, n), (n, pe)).copy_from(&ae.transpose());
        k.view_mut((n, 0), (pe, n)).copy_from(ae);
        rhs.rows_mut(n, pe).copy_from(be);
    }
    for (r, &i) in act.iter().enumerate() {
        for c in 0..n {
            k[(c, n + pe + r)] = ai[(i, c)];
            k[(n + pe + r, c)] = ai[(i, c)];
        }
        rhs[n + pe + r] = bi[i];
    }
    let sol = k.clone().lu().solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) || (&k * &sol - &rhs).amax() > 1e-9 * (scale_b + scale_g) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let y = sol.rows(n, pe).into_owned();
    let mut zf = DVector::zeros(ai.nrows());
    for (r, &i) in act.iter().enumerate() {
        zf[i] = sol[n + pe + r];
    }
    if zf.min() < -1e-9 * scale_g {
        return None;
    }
    let viol = (ai * &x - bi).max().max(if pe > 0 { (ae * &x - be).amax() } else { 0.0 });
    if viol > 1e-10 * scale_b {
        return None;
    }
    Some((x, y, zf.map(|v| v.max(0.0))))
}

/// Solve a convex QP. Returns `Err` only for malformed or non-convex input.
pub fn solve_qp(p: &QpProblem) -> Result<SolveReport, SolverError> {
    p.validate()?;
    let n = p.g.len();
    let h = (&p.h + p.h.transpose()) * 0.5;
    if n > 0 {
        let min_eig = h.clone().symmetric_eigenvalues().min();
        if min_eig < PSD_FLOOR * (1.0 + h.amax()) {
            return Err(SolverError::NotPsd(min_eig));
        }
    }
    let (ai, bi, ae, be) = p.split();
    let m = ai.nrows();
    let pe = ae.nrows();
    let g = &p.g;

    let scale_g = 1.0 + amax0(g);
    let scale_b = 1.0 + amax0(&bi).max(amax0(&be));

    // Initial point from a regularized least-squares KKT solve.
    let dim = n + pe;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(pe);
    {
        let mut top = &h + DMatrix::identity(n, n) * 1e-8;
        if m > 0 {
            top += ai.transpose() * &ai;
        }
        kkt.view_mut((0, 0), (n, n)).copy_from(&top);
        if pe > 0 {
            kkt.view_mut((0, n), (n, pe)).copy_from(&ae.transpose());
            kkt.view_mut((n, 0), (pe, n)).copy_from(&ae);
            for i in 0..pe {
                kkt[(n + i, n + i)] = -1e-8;
            }
        }
        let mut rhs = DVector::zeros(dim);
        let mut r0 = -g.clone();
        if m > 0 {
            r0 += ai.transpose() * &bi;
        }
        rhs.rows_mut(0, n).copy_from(&r0);
        if pe > 0 {
            rhs.rows_mut(n, pe).copy_from(&be);
        }
        if let Some(sol) = kkt.clone().lu().solve(&rhs) {
            if sol.iter().all(|v| v.is_finite()) {
                x = sol.rows(0, n).into_owned();
                y = sol.rows(n, pe).into_owned();
            }
        }
    }
    let mut s = DVector::from_element(m, 1.0);
    let mut z = DVector::from_element(m, 1.0);
    if m > 0 {
        let slack = &bi - &ai * &x;
        let shift = (-slack.min()).max(0.0) + 1.0;
        for i in 0..m {
            s[i] = (slack[i] + shift).max(1.0);
        }
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut loose = false;
    while iterations < MAX_ITER {
        let res = residuals(&h, g, &ai, &bi, &ae, &be, &x, &y, &z, &s);
        let gap = if m > 0 { s.dot(&z) } else { 0.0 };
        let obj = 0.5 * x.dot(&(&h * &x)) + g.dot(&x);
        let rd = amax0(&res.dual) / scale_g;
        let rp = amax0(&res.eq).max(amax0(&res.ineq)) / scale_b;
        let gap_rel = gap / obj.abs().max(1.0);
        if rd <= TIGHT_FEAS && rp <= TIGHT_FEAS && gap_rel <= TIGHT_GAP {
            converged = true;
            break;
        }
        loose = rd <= FEAS_TOL && rp <= FEAS_TOL && gap_rel <= GAP_TOL;
        if !x.iter().all(|v| v.is_finite()) || x.amax() > 1e12 {
            break;
        }
        iterations += 1;

        // Reduced KKT matrix.
        let mut top = h.clone();
        if m > 0 {
            let mut wa = ai.clone();
            for i in 0..m {
                let wi = z[i] / s[i];
                wa.row_mut(i).scale_mut(wi);
            }
            top += ai.transpose() * wa;
        }
        for i in 0..n {
            top[(i, i)] += REG;
        }
        kkt.view_mut((0, 0), (n, n)).copy_from(&top);
        for i in 0..pe {
            kkt[(n + i, n + i)] = -REG;
        }
        let lu = kkt.clone().lu();

        let solve_dir = |r_sz: &DVector<f64>| -> Option<Direction> {
            let mut rhs = DVector::zeros(dim);
            let mut top_rhs = -res.dual.clone();
            if m > 0 {
                let mut t = DVector::zeros(m);
                for i in 0..m {
                    t[i] = (r_sz[i] - z[i] * res.ineq[i]) / s[i];
                }
                top_rhs += ai.transpose() * t;
            }
            rhs.rows_mut(0, n).copy_from(&top_rhs);
            if pe > 0 {
                rhs.rows_mut(n, pe).copy_from(&(-&res.eq));
            }
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, pe).into_owned();
            let (ds, dz) = if m > 0 {
                let ds = -&res.ineq - &ai * &dx;
                let mut dz = DVector::zeros(m);
                for i in 0..m {
                    dz[i] = (-r_sz[i] - z[i] * ds[i]) / s[i];
                }
                (ds, dz)
            } else {
                (DVector::zeros(0), DVector::zeros(0))
            };
            Some((dx, dy, ds, dz))
        };

        if m == 0 {
            let Some((dx, dy, _, _)) = solve_dir(&DVector::zeros(0)) else {
                break;
            };
            x += dx;
            y += dy;
            continue;
        }

        let mu = gap / m as f64;
        let sz = s.component_mul(&z);
        let Some((_, _, ds_a, dz_a)) = solve_dir(&sz) else {
            break;
        };
        let alpha_a = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = (&s + &ds_a * alpha_a).dot(&(&z + &dz_a * alpha_a)) / m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
        let mut r_sz = sz.clone();
        for i in 0..m {
            r_sz[i] += ds_a[i] * dz_a[i] - sigma * mu;
        }
        let Some((dx, dy, ds, dz)) = solve_dir(&r_sz) else {
            break;
        };
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += &dx * alpha;
        y += &dy * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        for i in 0..m {
            s[i] = s[i].max(1e-300);
            z[i] = z[i].max(1e-300);
        }
    }

    if converged || loose {
        if m > 0 {
            if let Some((px, py, pz)) = polish(&h, g, &ai, &bi, &ae, &be, &s, &z, scale_b, scale_g) {
                x = px;
                y = py;
                z = pz;
                s = (&bi - &ai * &x).map(|v| v.max(0.0));
            }
        }
        let res = residuals(&h, g, &ai, &bi, &ae, &be, &x, &y, &z, &s);
        let viol = {
            let mut v: f64 = amax0(&res.eq);
            if m > 0 {
                v = v.max((&ai * &x - &bi).max().max(0.0));
            }
            v
        };
        let comp = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };
        let kkt_residual = amax0(&res.dual).max(viol).max(comp);
        if viol <= FEAS_TOL * scale_b && kkt_residual <= 1e-6 {
            let objective = 0.5 * x.dot(&(&h * &x)) + g.dot(&x);
            return Ok(SolveReport {
                status: SolveStatus::Optimal,
                x,
                objective,
                kkt_residual,
                iterations,
                certificate: None,
            });
        }
    }

    // Not converged: decide between infeasible, unbounded and stalled.
    let lp = LpProblem::new(DVector::zeros(n), ai.clone(), bi.clone()).with_equalities(ae, be);
    let feas = solve_lp(&lp)?;
    if feas.status == SolveStatus::Infeasible {
        let mut rep = SolveReport::failed(SolveStatus::Infeasible, n, iterations);
        rep.certificate = feas.certificate;
        return Ok(rep);
    }
    let status = if x.iter().any(|v| !v.is_finite()) || x.amax() > 1e12 {
        SolveStatus::Unbounded
    } else {
        SolveStatus::MaxIter
    };
    Ok(SolveReport::failed(status, n, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn min_norm_with_halfspace() {
        // min ‖x‖² s.t. x₁ ≥ 1
        let p = QpProblem::new(
            DMatrix::identity(3, 3) * 2.0,
            DVector::zeros(3),
            dmatrix![-1.0, 0.0, 0.0],
            dvector![-1.0],
        );
        let r = solve_qp(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.x - dvector![1.0, 0.0, 0.0]).amax() < 1e-8);
        assert!((r.objective - 1.0).abs() < 1e-8);
    }

    #[test]
    fn unconstrained_matches_analytic() {
        let h = dmatrix![4.0, 1.0; 1.0, 3.0];
        let g = dvector![1.0, -2.0];
        let p = QpProblem::new(h.clone(), g.clone(), DMatrix::zeros(0, 2), DVector::zeros(0));
        let r = solve_qp(&p).unwrap();
        let expect = -h.lu().solve(&g).unwrap();
        assert!((r.x - expect).amax() < 1e-10);
    }

    #[test]
    fn equality_constrained() {
        // min x² + y² s.t. x + y = 2 → (1,1)
        let p = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .with_equalities(&dmatrix![1.0, 1.0], &dvector![2.0]);
        let r = solve_qp(&p).unwrap();
        assert!((r.x - dvector![1.0, 1.0]).amax() < 1e-9);
    }

    #[test]
    fn infeasible_reports_certificate() {
        let p = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            dmatrix![1.0; -1.0],
            dvector![-1.0, -1.0],
        );
        let r = solve_qp(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.certificate.is_some());
    }

    #[test]
    fn rejects_indefinite() {
        let p = QpProblem::new(
            dmatrix![1.0, 0.0; 0.0, -1.0],
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        );
        assert!(matches!(solve_qp(&p), Err(SolverError::NotPsd(_))));
    }

    #[test]
    fn psd_with_free_direction_and_bounds() {
        // min (x - y)² s.t. 0 ≤ x ≤ 1, 2 ≤ y ≤ 3 → x = 1, y = 2
        let h = dmatrix![2.0, -2.0; -2.0, 2.0];
        let a = dmatrix![1.0, 0.0; -1.0, 0.0; 0.0, 1.0; 0.0, -1.0];
        let b = dvector![1.0, 0.0, 3.0, -2.0];
        let r = solve_qp(&QpProblem::new(h, DVector::zeros(2), a, b)).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.x - dvector![1.0, 2.0]).amax() < 1e-6);
        assert!((r.objective - 1.0).abs() < 1e-8);
    }
}
