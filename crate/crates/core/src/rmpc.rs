//! Finite-horizon RMPC problem with a distance-to-target stage cost.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{weighted_projection, GeometryError, Polytope};
use crate::solver::{solve_qp, QpProblem, SolveStatus, SolverError};
use crate::tightening::RmpcSetup;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RmpcError {
    #[error("RMPC problem infeasible at x0 = {x0:?}")]
    Infeasible { x0: Vec<f64>, certificate: Option<Vec<f64>> },
    #[error("state has dimension {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("QP solver did not converge (status {0:?})")]
    NoConvergence(SolveStatus),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Optimal sequences of the RMPC problem at one state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcSolution {
    /// `u_0..u_{N−1}`.
    pub u: Vec<DVector<f64>>,
    /// Nominal states `φ_0..φ_N`.
    pub x: Vec<DVector<f64>>,
    /// `s^X_0..s^X_{N−1}`.
    pub sx: Vec<DVector<f64>>,
    /// `s^U_0..s^U_{N−1}`.
    pub su: Vec<DVector<f64>>,
    /// Stage terms `‖φ_i − s^X_i‖²_Q + ‖u_i − s^U_i‖²_R`.
    pub stage_costs: Vec<f64>,
    pub value: f64,
    pub kkt_residual: f64,
}

/// Column offsets of the stacked decision vector `[u, x, sx, su]`.
struct Layout {
    n: usize,
    nx: usize,
    nu: usize,
}

impl Layout {
    fn u(&self, i: usize) -> usize {
        i * self.nu
    }
    fn x(&self, i: usize) -> usize {
        self.n * self.nu + i * self.nx
    }
    fn sx(&self, i: usize) -> usize {
        self.n * self.nu + (self.n + 1) * self.nx + i * self.nx
    }
    fn su(&self, i: usize) -> usize {
        self.n * self.nu + (2 * self.n + 1) * self.nx + i * self.nu
    }
    fn len(&self) -> usize {
        self.su(self.n)
    }
}

fn add_block(h: &mut DMatrix<f64>, r: usize, c: usize, m: &DMatrix<f64>, s: f64) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            h[(r + i, c + j)] += s * m[(i, j)];
        }
    }
}

/// Build the sparse-layout QP for a given initial state.
fn assemble(setup: &RmpcSetup, x0: &DVector<f64>) -> QpProblem {
    let (n, nx, nu) = (setup.n, setup.nx(), setup.nu());
    let lay = Layout { n, nx, nu };
    let nz = lay.len();
    let mut h = DMatrix::zeros(nz, nz);
    for i in 0..n {
        let (xi, si) = (lay.x(i), lay.sx(i));
        add_block(&mut h, xi, xi, &setup.q, 2.0);
        add_block(&mut h, si, si, &setup.q, 2.0);
        add_block(&mut h, xi, si, &setup.q, -2.0);
        add_block(&mut h, si, xi, &setup.q, -2.0);
        let (ui, ti) = (lay.u(i), lay.su(i));
        add_block(&mut h, ui, ui, &setup.r, 2.0);
        add_block(&mut h, ti, ti, &setup.r, 2.0);
        add_block(&mut h, ui, ti, &setup.r, -2.0);
        add_block(&mut h, ti, ui, &setup.r, -2.0);
    }

    let mut blocks: Vec<(&Polytope, usize)> = Vec::new();
    for i in 0..n {
        blocks.push((&setup.u_seq[i], lay.u(i)));
        blocks.push((&setup.x_seq[i], lay.x(i)));
        blocks.push((&setup.tx_seq[i], lay.sx(i)));
        blocks.push((&setup.tu_seq[i], lay.su(i)));
    }
    blocks.push((&setup.plant.xf, lay.x(n)));
    let rows: usize = blocks.iter().map(|(p, _)| p.n_facets()).sum();
    let mut a = DMatrix::zeros(rows, nz);
    let mut b = DVector::zeros(rows);
    let mut r = 0;
    for (p, col) in blocks {
        let m = p.n_facets();
        a.view_mut((r, col), (m, p.dim())).copy_from(p.a());
        b.rows_mut(r, m).copy_from(p.b());
        r += m;
    }

    let mut aeq = DMatrix::zeros((n + 1) * nx, nz);
    let mut beq = DVector::zeros((n + 1) * nx);
    for p in 0..nx {
        aeq[(p, lay.x(0) + p)] = 1.0;
        beq[p] = x0[p];
    }
    for i in 0..n {
        let row = (i + 1) * nx;
        for p in 0..nx {
            aeq[(row + p, lay.x(i + 1) + p)] = 1.0;
        }
        add_block(&mut aeq, row, lay.x(i), &setup.plant.a, -1.0);
        add_block(&mut aeq, row, lay.u(i), &setup.plant.b, -1.0);
    }
    QpProblem::new(h, DVector::zeros(nz), a, b).with_equalities(&aeq, &beq)
}

fn weighted_sq(d: &DVector<f64>, w: &DMatrix<f64>) -> f64 {
    d.dot(&(w * d))
}

/// Solve the RMPC problem at `x0`.
pub fn solve_rmpc(setup: &RmpcSetup, x0: &DVector<f64>) -> Result<MpcSolution, RmpcError> {
    let (n, nx, nu) = (setup.n, setup.nx(), setup.nu());
    if x0.len() != nx {
        return Err(RmpcError::Dimension { got: x0.len(), expected: nx });
    }
    let rep = solve_qp(&assemble(setup, x0))?;
    match rep.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(RmpcError::Infeasible {
                x0: x0.iter().copied().collect(),
                certificate: rep.certificate.map(|c| c.iter().copied().collect()),
            })
        }
        s => return Err(RmpcError::NoConvergence(s)),
    }
    let lay = Layout { n, nx, nu };
    let z = &rep.x;
    let u: Vec<DVector<f64>> = (0..n).map(|i| z.rows(lay.u(i), nu).into_owned()).collect();
    let sx: Vec<DVector<f64>> = (0..n).map(|i| z.rows(lay.sx(i), nx).into_owned()).collect();
    let su: Vec<DVector<f64>> = (0..n).map(|i| z.rows(lay.su(i), nu).into_owned()).collect();
    let mut x = vec![x0.clone()];
    for ui in &u {
        let next = setup.step(x.last().expect("nonempty"), ui);
        x.push(next);
    }
    let stage_costs: Vec<f64> = (0..n)
        .map(|i| weighted_sq(&(&x[i] - &sx[i]), &setup.q) + weighted_sq(&(&u[i] - &su[i]), &setup.r))
        .collect();
    let value = stage_costs.iter().sum();
    Ok(MpcSolution { u, x, sx, su, stage_costs, value, kkt_residual: rep.kkt_residual })
}

/// `d_Q(x, T^X_i) + d_R(u, T^U_i)`.
pub fn stage_cost(
    setup: &RmpcSetup,
    x: &DVector<f64>,
    u: &DVector<f64>,
    i: usize,
) -> Result<f64, RmpcError> {
    let dx = weighted_projection(x, &setup.tx_seq[i], &setup.q)?;
    let du = weighted_projection(u, &setup.tu_seq[i], &setup.r)?;
    Ok(dx.distance_sq + du.distance_sq)
}

/// `V_N(x, u)` for a given input sequence; `+∞` when it violates a
/// constraint.
pub fn evaluate_cost(
    setup: &RmpcSetup,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
) -> Result<f64, RmpcError> {
    let mut x = x0.clone();
    let mut total = 0.0;
    for (i, ui) in u.iter().enumerate().take(setup.n) {
        if !setup.x_seq[i].contains(&x) || !setup.u_seq[i].contains(ui) {
            return Ok(f64::INFINITY);
        }
        total += stage_cost(setup, &x, ui, i)?;
        x = setup.step(&x, ui);
    }
    if !setup.plant.xf.contains(&x) {
        return Ok(f64::INFINITY);
    }
    Ok(total)
}
