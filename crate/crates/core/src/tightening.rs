//! Nominal and tightening gains, transition matrices and the tightened set
//! sequences.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{pontryagin_diff_mapped, support, GeometryError, Polytope};

/// Nilpotency residual accepted on `‖L_i‖_F` for `i ≥ M`.
pub const NILPOTENCY_TOL: f64 = 1e-8;
const RICCATI_TOL: f64 = 1e-10;
const RICCATI_MAX_ITER: usize = 10_000;
const INTERIOR_MARGIN: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TighteningError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("(A, B) is not controllable (rank {rank} < {n})")]
    NotControllable { rank: usize, n: usize },
    #[error("set {0} must be a compact polytope with the origin in its interior")]
    BadSet(&'static str),
    #[error("invalid horizon: {0}")]
    Horizon(String),
    #[error("{0} must be symmetric positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("Riccati iteration did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("nominal gain does not stabilize the plant (spectral radius {0})")]
    Unstable(f64),
    #[error("tightening gains are not nilpotent: ‖L_{index}‖_F = {norm:e}")]
    NilpotencyFailure { index: usize, norm: f64 },
    #[error("tightened set {which}_{stage} is empty")]
    EmptyTightenedSet { stage: usize, which: &'static str },
    #[error("terminal assumption violated: {0}")]
    TerminalAssumptionViolated(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Plant `x⁺ = A x + B u + w` with its constraint, disturbance, target and
/// terminal sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub x_set: Polytope,
    pub u_set: Polytope,
    pub w_set: Polytope,
    pub tx: Polytope,
    pub tu: Polytope,
    pub xf: Polytope,
}

impl PlantModel {
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    /// Dimensions, controllability and compactness/interior of every set.
    pub fn validate(&self) -> Result<(), TighteningError> {
        let (nx, nu) = (self.nx(), self.nu());
        if self.a.ncols() != nx || self.b.nrows() != nx || nu == 0 {
            return Err(TighteningError::Dimension(format!(
                "A is {}x{}, B is {}x{}",
                nx,
                self.a.ncols(),
                self.b.nrows(),
                nu
            )));
        }
        let sets: [(&'static str, &Polytope, usize); 6] = [
            ("X", &self.x_set, nx),
            ("U", &self.u_set, nu),
            ("W", &self.w_set, nx),
            ("Tx", &self.tx, nx),
            ("Tu", &self.tu, nu),
            ("Xf", &self.xf, nx),
        ];
        for (name, set, dim) in sets {
            if set.dim() != dim {
                return Err(TighteningError::Dimension(format!(
                    "{name} has dimension {}, expected {dim}",
                    set.dim()
                )));
            }
            // The disturbance set may be degenerate (W = {0}); it only needs the origin.
            let margin = if name == "W" { -crate::geometry::FEAS_TOL } else { INTERIOR_MARGIN };
            if !set.contains_origin_interior(margin) || !set.is_bounded()? {
                return Err(TighteningError::BadSet(name));
            }
        }
        let rank = controllability_rank(&self.a, &self.b);
        if rank < nx {
            return Err(TighteningError::NotControllable { rank, n: nx });
        }
        Ok(())
    }
}

/// `[B, AB, …, A^{n−1}B]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, steps: usize) -> DMatrix<f64> {
    let (n, m) = b.shape();
    let mut c = DMatrix::zeros(n, m * steps);
    let mut blk = b.clone();
    for k in 0..steps {
        c.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    c
}

pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let c = controllability_matrix(a, b, a.nrows());
    let svd = c.svd(false, false);
    let smax = svd.singular_values.max();
    svd.singular_values.iter().filter(|s| **s > 1e-10 * smax.max(1.0)).count()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn check_pd(m: &DMatrix<f64>, name: &'static str) -> Result<(), TighteningError> {
    if !m.is_square() || (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(TighteningError::NotPositiveDefinite(name));
    }
    if m.clone().cholesky().is_none() {
        return Err(TighteningError::NotPositiveDefinite(name));
    }
    Ok(())
}

fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    svd.pseudo_inverse(1e-10 * smax).expect("svd computed with u and v")
}

/// Infinite-horizon LQR gain `F` (with `u = F x`) by Riccati fixed-point
/// iteration.
pub fn synthesize_nominal_gain(
    plant: &PlantModel,
    qlqr: &DMatrix<f64>,
    rlqr: &DMatrix<f64>,
) -> Result<DMatrix<f64>, TighteningError> {
    let (a, b) = (&plant.a, &plant.b);
    let (nx, nu) = (plant.nx(), plant.nu());
    if qlqr.shape() != (nx, nx) || rlqr.shape() != (nu, nu) {
        return Err(TighteningError::Dimension("LQR weights".into()));
    }
    check_pd(qlqr, "Qlqr")?;
    check_pd(rlqr, "Rlqr")?;
    let mut p = qlqr.clone();
    for _ in 0..RICCATI_MAX_ITER {
        let s = rlqr + b.transpose() * &p * b;
        let bpa = b.transpose() * &p * a;
        let gain = s
            .clone()
            .cholesky()
            .ok_or(TighteningError::NotPositiveDefinite("R + BᵀPB"))?
            .solve(&bpa);
        let next = qlqr + a.transpose() * &p * a - bpa.transpose() * &gain;
        let next = (&next + next.transpose()) * 0.5;
        let diff = (&next - &p).amax();
        p = next;
        if diff <= RICCATI_TOL * p.amax().max(1.0) {
            let s = rlqr + b.transpose() * &p * b;
            let f = -s
                .cholesky()
                .ok_or(TighteningError::NotPositiveDefinite("R + BᵀPB"))?
                .solve(&(b.transpose() * &p * a));
            let rho = spectral_radius(&(a + b * &f));
            if rho >= 1.0 {
                return Err(TighteningError::Unstable(rho));
            }
            return Ok(f);
        }
    }
    Err(TighteningError::NoConvergence(RICCATI_MAX_ITER))
}

/// `[A^{s−1}B … AB B]`: column block `i` multiplies input `u_i` in `x_s`.
fn steering_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, s: usize) -> DMatrix<f64> {
    let (nx, nu) = b.shape();
    let mut c = DMatrix::zeros(nx, nu * s);
    let mut blk = b.clone();
    for i in (0..s).rev() {
        c.view_mut((0, i * nu), (nx, nu)).copy_from(&blk);
        blk = a * blk;
    }
    c
}

/// Time-varying deadbeat gains `K_0..K_{N−2}` with `∏_{i<M}(A+BK_i) = 0`.
///
/// `K_i` is the first input block of the minimum-norm law steering any state
/// to the origin in the remaining `M − i` steps, `−C_{M−i}⁺ A^{M−i}`. States
/// reached under the earlier gains stay steerable, so the product vanishes.
pub fn synthesize_tightening_gains(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    m: usize,
    n: usize,
) -> Result<Vec<DMatrix<f64>>, TighteningError> {
    let (nx, nu) = b.shape();
    if m < nx || m + 1 > n {
        return Err(TighteningError::Horizon(format!("need n_x ≤ M ≤ N−1, got M={m}, N={n}")));
    }
    let rank = controllability_rank(a, b);
    if rank < nx {
        return Err(TighteningError::NotControllable { rank, n: nx });
    }
    let mut gains = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        if i < m {
            let s = m - i;
            let g = -pinv(&steering_matrix(a, b, s)) * a.pow(s as u32);
            gains.push(g.rows(0, nu).into_owned());
        } else {
            gains.push(DMatrix::zeros(nu, nx));
        }
    }
    let residual = transition_matrices(a, b, &gains)[m].norm();
    if residual > NILPOTENCY_TOL {
        return Err(TighteningError::NilpotencyFailure { index: m, norm: residual });
    }
    Ok(gains)
}

/// `L_0 = I`, `L_{i+1} = (A + B K_i) L_i`; one more entry than `gains`.
pub fn transition_matrices(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    gains: &[DMatrix<f64>],
) -> Vec<DMatrix<f64>> {
    let nx = a.nrows();
    let mut out = Vec::with_capacity(gains.len() + 1);
    out.push(DMatrix::identity(nx, nx));
    for k in gains {
        let next = (a + b * k) * out.last().expect("nonempty");
        out.push(next);
    }
    out
}

/// Assumption-check margins: `b − h(·)` minimized over the checked facets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetupReport {
    pub nilpotency_residual: f64,
    pub spectral_radius_nominal: f64,
    pub terminal_state_margin: f64,
    pub terminal_target_state_margin: f64,
    pub terminal_input_margin: f64,
    pub terminal_target_input_margin: f64,
    /// Margin of `(A+BF) X_f ⊆ X_f`; reported, not enforced.
    pub terminal_invariance_margin: f64,
    pub facet_counts: FacetCounts,
    pub tightened_offsets: TightenedOffsets,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FacetCounts {
    pub x: Vec<usize>,
    pub u: Vec<usize>,
    pub tx: Vec<usize>,
    pub tu: Vec<usize>,
}

/// Right-hand sides of each tightened set, stage by stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightenedOffsets {
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub tx: Vec<Vec<f64>>,
    pub tu: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmpcSetup {
    pub plant: PlantModel,
    pub n: usize,
    pub m: usize,
    pub f: DMatrix<f64>,
    /// `K_0..K_{N−2}`.
    pub k: Vec<DMatrix<f64>>,
    /// `L_0..L_{N−1}`.
    pub l: Vec<DMatrix<f64>>,
    /// `K̃_0..K̃_{N−1}`.
    pub k_tilde: Vec<DMatrix<f64>>,
    /// `L̃_0..L̃_{N−1}`.
    pub l_tilde: Vec<DMatrix<f64>>,
    pub u_seq: Vec<Polytope>,
    pub x_seq: Vec<Polytope>,
    pub tu_seq: Vec<Polytope>,
    pub tx_seq: Vec<Polytope>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub report: SetupReport,
}

impl RmpcSetup {
    /// Tighten all four sequences, build the transition matrices and check
    /// every structural assumption.
    pub fn build(
        plant: PlantModel,
        n: usize,
        m: usize,
        f: DMatrix<f64>,
        k: Vec<DMatrix<f64>>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self, TighteningError> {
        plant.validate()?;
        let (nx, nu) = (plant.nx(), plant.nu());
        if n < nx + 1 {
            return Err(TighteningError::Horizon(format!("N = {n} < n_x + 1 = {}", nx + 1)));
        }
        if m < nx || m > n - 1 {
            return Err(TighteningError::Horizon(format!("M = {m} outside [{nx}, {}]", n - 1)));
        }
        if f.shape() != (nu, nx) || k.len() != n - 1 || k.iter().any(|ki| ki.shape() != (nu, nx)) {
            return Err(TighteningError::Dimension("gain shapes".into()));
        }
        if q.shape() != (nx, nx) || r.shape() != (nu, nu) {
            return Err(TighteningError::Dimension("cost weights".into()));
        }
        check_pd(&q, "Q")?;
        check_pd(&r, "R")?;
        let (a, b) = (&plant.a, &plant.b);
        let rho = spectral_radius(&(a + b * &f));
        if rho >= 1.0 {
            return Err(TighteningError::Unstable(rho));
        }

        let mut l = transition_matrices(a, b, &k);
        let mut nil_res: f64 = 0.0;
        for (i, li) in l.iter_mut().enumerate().skip(m) {
            let nrm = li.norm();
            if nrm > NILPOTENCY_TOL {
                return Err(TighteningError::NilpotencyFailure { index: i, norm: nrm });
            }
            nil_res = nil_res.max(nrm);
            li.fill(0.0);
        }
        let mut k_tilde = vec![DMatrix::zeros(nu, nx)];
        k_tilde.extend(k.iter().cloned());
        let mut l_tilde = transition_matrices(a, b, &k_tilde[..n - 1]);
        for li in l_tilde.iter_mut().skip(m + 1) {
            li.fill(0.0);
        }

        let kl: Vec<DMatrix<f64>> = (0..n - 1).map(|i| &k[i] * &l[i]).collect();
        let w = &plant.w_set;
        let tighten = |start: &Polytope, maps: &dyn Fn(usize) -> DMatrix<f64>, which: &'static str| {
            let mut seq = vec![start.clone()];
            for i in 0..n - 1 {
                let e = pontryagin_diff_mapped(seq.last().expect("nonempty"), &maps(i), w)?;
                if e.empty {
                    return Err(TighteningError::EmptyTightenedSet { stage: i + 1, which });
                }
                seq.push(e.set);
            }
            Ok::<_, TighteningError>(seq)
        };
        let u_seq = tighten(&plant.u_set, &|i| kl[i].clone(), "U")?;
        let x_seq = tighten(&plant.x_set, &|i| l[i].clone(), "X")?;
        let tu_seq = tighten(&plant.tu, &|i| kl[i].clone(), "Tu")?;
        let tx_seq = tighten(&plant.tx, &|i| l[i].clone(), "Tx")?;

        let xf = &plant.xf;
        let id = DMatrix::identity(nx, nx);
        let terminal_state_margin = image_margin(&x_seq[n - 1], &id, xf)?;
        let terminal_target_state_margin = image_margin(&tx_seq[n - 1], &id, xf)?;
        let terminal_input_margin = image_margin(&u_seq[n - 1], &f, xf)?;
        let terminal_target_input_margin = image_margin(&tu_seq[n - 1], &f, xf)?;
        let terminal_invariance_margin = image_margin(xf, &(a + b * &f), xf)?;
        let checks = [
            ("X_f ⊆ X_{N−1}", terminal_state_margin),
            ("X_f ⊆ T^X_{N−1}", terminal_target_state_margin),
            ("F X_f ⊆ U_{N−1}", terminal_input_margin),
            ("F X_f ⊆ T^U_{N−1}", terminal_target_input_margin),
        ];
        for (what, margin) in checks {
            if margin < -crate::geometry::FEAS_TOL {
                return Err(TighteningError::TerminalAssumptionViolated(format!(
                    "{what} fails by {:e}",
                    -margin
                )));
            }
        }

        let counts = |s: &[Polytope]| s.iter().map(Polytope::n_facets).collect();
        let offsets = |s: &[Polytope]| s.iter().map(|p| p.b().iter().copied().collect()).collect();
        let report = SetupReport {
            nilpotency_residual: nil_res,
            spectral_radius_nominal: rho,
            terminal_state_margin,
            terminal_target_state_margin,
            terminal_input_margin,
            terminal_target_input_margin,
            terminal_invariance_margin,
            facet_counts: FacetCounts {
                x: counts(&x_seq),
                u: counts(&u_seq),
                tx: counts(&tx_seq),
                tu: counts(&tu_seq),
            },
            tightened_offsets: TightenedOffsets {
                x: offsets(&x_seq),
                u: offsets(&u_seq),
                tx: offsets(&tx_seq),
                tu: offsets(&tu_seq),
            },
        };
        Ok(RmpcSetup {
            plant,
            n,
            m,
            f,
            k,
            l,
            k_tilde,
            l_tilde,
            u_seq,
            x_seq,
            tu_seq,
            tx_seq,
            q,
            r,
            report,
        })
    }

    pub fn nx(&self) -> usize {
        self.plant.nx()
    }

    pub fn nu(&self) -> usize {
        self.plant.nu()
    }

    /// `A + B F`.
    pub fn a_cl(&self) -> DMatrix<f64> {
        &self.plant.a + &self.plant.b * &self.f
    }

    /// Nominal successor `A x + B u`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.plant.a * x + &self.plant.b * u
    }
}

/// `min_i b_i − h_src(mapᵀ a_i)`: nonnegative iff `map·src ⊆ target`.
fn image_margin(target: &Polytope, map: &DMatrix<f64>, src: &Polytope) -> Result<f64, TighteningError> {
    let mut margin = f64::INFINITY;
    for i in 0..target.n_facets() {
        let dir = map.transpose() * target.a().row(i).transpose();
        let h = if dir.iter().all(|v| *v == 0.0) { 0.0 } else { support(src, &dir)? };
        margin = margin.min(target.b()[i] - h);
    }
    Ok(margin)
}
