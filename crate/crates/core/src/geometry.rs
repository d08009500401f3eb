//! H-representation polytope algebra.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::{solve_lp, solve_qp, LpProblem, QpProblem, SolveStatus, SolverError};

/// Absolute tolerance on `a·x − b` for every membership test.
pub const FEAS_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite polytope data")]
    NonFinite,
    #[error("polytope is empty")]
    Empty,
    #[error("support is unbounded along the requested direction")]
    Unbounded,
    #[error("weight matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("solver failed: {0}")]
    Solver(#[from] SolverError),
    #[error("solver did not converge ({0})")]
    NoConvergence(&'static str),
}

/// `{x : A x ≤ b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeRepr", into = "PolytopeRepr")]
pub struct Polytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

/// Row-major serialized form.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolytopeRepr {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl From<Polytope> for PolytopeRepr {
    fn from(p: Polytope) -> Self {
        PolytopeRepr {
            a: p.a.row_iter().map(|r| r.iter().copied().collect()).collect(),
            b: p.b.iter().copied().collect(),
        }
    }
}

impl TryFrom<PolytopeRepr> for Polytope {
    type Error = GeometryError;

    fn try_from(r: PolytopeRepr) -> Result<Self, Self::Error> {
        let m = r.a.len();
        let n = r.a.first().map_or(0, Vec::len);
        if r.a.iter().any(|row| row.len() != n) {
            return Err(GeometryError::Dimension("ragged A rows".into()));
        }
        let a = DMatrix::from_fn(m, n, |i, j| r.a[i][j]);
        Polytope::new(a, DVector::from_vec(r.b))
    }
}

impl Polytope {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, GeometryError> {
        if a.nrows() == 0 || a.ncols() == 0 || a.nrows() != b.len() {
            return Err(GeometryError::Dimension(format!(
                "A is {}x{}, b has {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Polytope { a, b })
    }

    /// `{x : ‖x‖∞ ≤ r}` in `n` dimensions.
    pub fn inf_ball(n: usize, r: f64) -> Self {
        HyperRect::symmetric(n, r).to_polytope()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_facets(&self) -> usize {
        self.a.nrows()
    }

    /// Largest constraint violation `max_i (a_i x − b_i)`.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).max()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim() && self.violation(x) <= FEAS_TOL
    }

    /// Largest `t` with `A x + t‖a_i‖ ≤ b` for some `x`; negative when empty.
    fn interior_margin(&self) -> Result<f64, GeometryError> {
        let (m, n) = self.a.shape();
        let mut a = DMatrix::zeros(m, n + 1);
        a.view_mut((0, 0), (m, n)).copy_from(&self.a);
        for i in 0..m {
            a[(i, n)] = self.a.row(i).norm();
        }
        let mut c = DVector::zeros(n + 1);
        c[n] = 1.0;
        let lower = DVector::from_element(n + 1, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(n + 1, f64::INFINITY);
        upper[n] = 1.0;
        let rep = solve_lp(&LpProblem::new(c, a, self.b.clone()).with_bounds(lower, upper))?;
        match rep.status {
            SolveStatus::Optimal => Ok(rep.x[n]),
            SolveStatus::Infeasible => Ok(f64::NEG_INFINITY),
            _ => Err(GeometryError::NoConvergence("emptiness LP")),
        }
    }

    /// Empty up to the feasibility tolerance.
    pub fn is_empty(&self) -> Result<bool, GeometryError> {
        let rep = solve_lp(&LpProblem::new(
            DVector::zeros(self.dim()),
            self.a.clone(),
            self.b.clone(),
        ))?;
        match rep.status {
            SolveStatus::Optimal => Ok(false),
            SolveStatus::Infeasible => Ok(true),
            _ => Err(GeometryError::NoConvergence("feasibility LP")),
        }
    }

    /// Finite support in all 2n axis directions.
    pub fn is_bounded(&self) -> Result<bool, GeometryError> {
        let n = self.dim();
        for j in 0..n {
            for s in [1.0, -1.0] {
                let mut eta = DVector::zeros(n);
                eta[j] = s;
                match support(self, &eta) {
                    Ok(_) => {}
                    Err(GeometryError::Unbounded) => return Ok(false),
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(true)
    }

    /// Origin strictly inside with the given margin on every row.
    pub fn contains_origin_interior(&self, margin: f64) -> bool {
        self.b.min() >= margin
    }

    /// Chebyshev radius: largest Euclidean ball inside.
    pub fn chebyshev_radius(&self) -> Result<f64, GeometryError> {
        let (m, n) = self.a.shape();
        let mut a = DMatrix::zeros(m, n + 1);
        a.view_mut((0, 0), (m, n)).copy_from(&self.a);
        for i in 0..m {
            a[(i, n)] = self.a.row(i).norm();
        }
        let mut c = DVector::zeros(n + 1);
        c[n] = 1.0;
        let rep = solve_lp(&LpProblem::new(c, a, self.b.clone()))?;
        match rep.status {
            SolveStatus::Optimal if rep.x[n] >= -FEAS_TOL => Ok(rep.x[n].max(0.0)),
            SolveStatus::Optimal | SolveStatus::Infeasible => Err(GeometryError::Empty),
            SolveStatus::Unbounded => Err(GeometryError::Unbounded),
            SolveStatus::MaxIter => Err(GeometryError::NoConvergence("Chebyshev LP")),
        }
    }

    /// Stack the rows of two polytopes in the same space.
    pub fn intersect(&self, other: &Polytope) -> Result<Polytope, GeometryError> {
        if self.dim() != other.dim() {
            return Err(GeometryError::Dimension("intersection of different dimensions".into()));
        }
        let m = self.n_facets() + other.n_facets();
        let mut a = DMatrix::zeros(m, self.dim());
        a.rows_mut(0, self.n_facets()).copy_from(&self.a);
        a.rows_mut(self.n_facets(), other.n_facets()).copy_from(&other.a);
        let b = DVector::from_iterator(m, self.b.iter().chain(other.b.iter()).copied());
        Polytope::new(a, b)
    }

    /// The box this polytope describes when every row bounds a single
    /// coordinate and both sides are bounded.
    pub fn as_box(&self) -> Option<HyperRect> {
        let n = self.dim();
        let mut l = DVector::from_element(n, f64::NEG_INFINITY);
        let mut u = DVector::from_element(n, f64::INFINITY);
        for i in 0..self.n_facets() {
            let row = self.a.row(i);
            let nz: Vec<usize> = (0..n).filter(|&j| row[j] != 0.0).collect();
            if nz.len() != 1 {
                return None;
            }
            let j = nz[0];
            let bound = self.b[i] / row[j];
            if row[j] > 0.0 {
                u[j] = u[j].min(bound);
            } else {
                l[j] = l[j].max(bound);
            }
        }
        HyperRect::new(l, u).ok()
    }

    /// Interior check used by setup validation.
    pub fn has_interior(&self) -> Result<bool, GeometryError> {
        Ok(self.interior_margin()? > 1e-9)
    }
}

/// Axis-aligned box `B(l, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRect {
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl HyperRect {
    pub fn new(l: DVector<f64>, u: DVector<f64>) -> Result<Self, GeometryError> {
        if l.len() != u.len() || l.is_empty() {
            return Err(GeometryError::Dimension(format!("l has {}, u has {}", l.len(), u.len())));
        }
        if l.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if l.iter().zip(u.iter()).any(|(a, b)| a > b) {
            return Err(GeometryError::Empty);
        }
        Ok(HyperRect { l, u })
    }

    pub fn symmetric(n: usize, r: f64) -> Self {
        HyperRect {
            l: DVector::from_element(n, -r),
            u: DVector::from_element(n, r),
        }
    }

    pub fn dim(&self) -> usize {
        self.l.len()
    }

    /// `A = [I; −I]`, `b = [u; −l]`.
    pub fn to_polytope(&self) -> Polytope {
        let n = self.dim();
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for j in 0..n {
            a[(j, j)] = 1.0;
            a[(n + j, j)] = -1.0;
            b[j] = self.u[j];
            b[n + j] = -self.l[j];
        }
        Polytope { a, b }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|j| x[j] >= self.l[j] - FEAS_TOL && x[j] <= self.u[j] + FEAS_TOL)
    }

    /// Coordinates where `x` leaves the box.
    pub fn violating_coords(&self, x: &DVector<f64>) -> Vec<usize> {
        (0..self.dim())
            .filter(|&j| x[j] < self.l[j] - FEAS_TOL || x[j] > self.u[j] + FEAS_TOL)
            .collect()
    }

    /// `h_B(η) = Σ max(η_j u_j, η_j l_j)`.
    pub fn support(&self, eta: &DVector<f64>) -> f64 {
        (0..self.dim())
            .map(|j| (eta[j] * self.u[j]).max(eta[j] * self.l[j]))
            .sum()
    }

    /// `Π (u_j − l_j)`.
    pub fn volume_width(&self) -> f64 {
        (0..self.dim()).map(|j| self.u[j] - self.l[j]).product()
    }

    /// `Π u_j · (−l_j)`.
    pub fn volume_both(&self) -> f64 {
        (0..self.dim()).map(|j| self.u[j] * (-self.l[j])).product()
    }

    /// Mean over coordinates of `min(|l|, u) / max(|l|, u)`; zero-width
    /// coordinates count as symmetric.
    pub fn symmetry(&self) -> f64 {
        let n = self.dim();
        let s: f64 = (0..n)
            .map(|j| {
                let (lo, hi) = (self.l[j].abs(), self.u[j].abs());
                let mx = lo.max(hi);
                if mx == 0.0 {
                    1.0
                } else {
                    lo.min(hi) / mx
                }
            })
            .sum();
        s / n as f64
    }
}

/// Squared weighted distance and the minimizing point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedDistanceResult {
    pub distance_sq: f64,
    pub projection: DVector<f64>,
}

/// `max ⟨η, s⟩` over the polytope.
pub fn support(poly: &Polytope, eta: &DVector<f64>) -> Result<f64, GeometryError> {
    if eta.len() != poly.dim() {
        return Err(GeometryError::Dimension(format!(
            "direction has {}, polytope has {}",
            eta.len(),
            poly.dim()
        )));
    }
    if eta.iter().all(|v| *v == 0.0) {
        return if poly.is_empty()? { Err(GeometryError::Empty) } else { Ok(0.0) };
    }
    let rep = solve_lp(&LpProblem::new(eta.clone(), poly.a.clone(), poly.b.clone()))?;
    match rep.status {
        SolveStatus::Optimal => Ok(rep.objective),
        SolveStatus::Infeasible => Err(GeometryError::Empty),
        SolveStatus::Unbounded => Err(GeometryError::Unbounded),
        SolveStatus::MaxIter => Err(GeometryError::NoConvergence("support LP")),
    }
}

/// Result of an erosion; `empty` is set when no point survives.
#[derive(Debug, Clone, PartialEq)]
pub struct Eroded {
    pub set: Polytope,
    pub empty: bool,
}

/// `poly ⊖ sub`.
pub fn pontryagin_diff(poly: &Polytope, sub: &Polytope) -> Result<Eroded, GeometryError> {
    let n = poly.dim();
    pontryagin_diff_mapped(poly, &DMatrix::identity(n, n), sub)
}

/// `poly ⊖ map·sub`, using `h_{map·sub}(a) = h_sub(mapᵀ a)`.
pub fn pontryagin_diff_mapped(
    poly: &Polytope,
    map: &DMatrix<f64>,
    sub: &Polytope,
) -> Result<Eroded, GeometryError> {
    if map.nrows() != poly.dim() || map.ncols() != sub.dim() {
        return Err(GeometryError::Dimension(format!(
            "map is {}x{}, sets are {} and {}",
            map.nrows(),
            map.ncols(),
            poly.dim(),
            sub.dim()
        )));
    }
    let mut b = poly.b.clone();
    for i in 0..poly.n_facets() {
        let dir = map.transpose() * poly.a.row(i).transpose();
        if dir.iter().all(|v| *v == 0.0) {
            continue;
        }
        b[i] -= support(sub, &dir)?;
    }
    let set = Polytope { a: poly.a.clone(), b };
    let empty = set.is_empty()?;
    Ok(Eroded { set, empty })
}

/// `poly ⊕ box` by facet offsets.
pub fn minkowski_sum_box(poly: &Polytope, b: &HyperRect) -> Result<Polytope, GeometryError> {
    if poly.dim() != b.dim() {
        return Err(GeometryError::Dimension("box and polytope differ in dimension".into()));
    }
    let mut off = poly.b.clone();
    for i in 0..poly.n_facets() {
        off[i] += b.support(&poly.a.row(i).transpose());
    }
    Ok(Polytope { a: poly.a.clone(), b: off })
}

/// `min (r−s)ᵀ M (r−s)` over `s` in the target.
pub fn weighted_projection(
    point: &DVector<f64>,
    target: &Polytope,
    weight: &DMatrix<f64>,
) -> Result<WeightedDistanceResult, GeometryError> {
    let n = target.dim();
    if point.len() != n || weight.shape() != (n, n) {
        return Err(GeometryError::Dimension("projection operands".into()));
    }
    if target.contains(point) && target.violation(point) <= 0.0 {
        return Ok(WeightedDistanceResult { distance_sq: 0.0, projection: point.clone() });
    }
    let sym = (weight + weight.transpose()) * 0.5;
    if sym.clone().cholesky().is_none() {
        return Err(GeometryError::NotPositiveDefinite);
    }
    let h = &sym * 2.0;
    let g = -(&h * point);
    let rep = solve_qp(&QpProblem::new(h, g, target.a.clone(), target.b.clone()))?;
    match rep.status {
        SolveStatus::Optimal => {
            let s = rep.x;
            let d = point - &s;
            Ok(WeightedDistanceResult { distance_sq: d.dot(&(&sym * &d)).max(0.0), projection: s })
        }
        SolveStatus::Infeasible => Err(GeometryError::Empty),
        _ => Err(GeometryError::NoConvergence("projection QP")),
    }
}

/// `r_c`, `r_∘` and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapeDiagnostic {
    pub r_c: f64,
    pub r_o: f64,
    /// `+∞` when the origin sits on the boundary.
    pub ratio: f64,
}

pub fn shape_diagnostic(poly: &Polytope) -> Result<ShapeDiagnostic, GeometryError> {
    let r_c = poly.chebyshev_radius()?;
    let r_o = (0..poly.n_facets())
        .map(|i| {
            let nrm = poly.a.row(i).norm();
            if nrm == 0.0 {
                f64::INFINITY
            } else {
                poly.b[i] / nrm
            }
        })
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    let ratio = if r_o <= 0.0 { f64::INFINITY } else { (r_c / r_o).max(1.0) };
    Ok(ShapeDiagnostic { r_c, r_o, ratio })
}

/// `r_c / r_∘`.
pub fn shape_ratio(poly: &Polytope) -> Result<f64, GeometryError> {
    Ok(shape_diagnostic(poly)?.ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn unit_box() -> Polytope {
        Polytope::inf_ball(2, 1.0)
    }

    #[test]
    fn box_support() {
        assert_eq!(support(&unit_box(), &dvector![1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(support(&unit_box(), &dvector![1.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn support_errors() {
        let half = Polytope::new(dmatrix![1.0, 0.0], dvector![1.0]).unwrap();
        assert_eq!(support(&half, &dvector![0.0, 1.0]), Err(GeometryError::Unbounded));
        let empty = Polytope::new(dmatrix![1.0; -1.0], dvector![-1.0, -1.0]).unwrap();
        assert_eq!(support(&empty, &dvector![1.0]), Err(GeometryError::Empty));
    }

    #[test]
    fn erosion_of_boxes() {
        let e = pontryagin_diff(&Polytope::inf_ball(2, 2.0), &Polytope::inf_ball(2, 0.5)).unwrap();
        assert!(!e.empty);
        for v in e.set.b().iter() {
            assert!((v - 1.5).abs() < 1e-12);
        }
        let over = pontryagin_diff(&unit_box(), &Polytope::inf_ball(2, 2.0)).unwrap();
        assert!(over.empty);
    }

    #[test]
    fn erosion_by_origin_is_identity() {
        let p = Polytope::new(dmatrix![1.0, 2.0; -1.0, 0.5; 0.0, -1.0], dvector![1.0, 2.0, 0.3])
            .unwrap();
        let zero = HyperRect::symmetric(2, 0.0).to_polytope();
        let e = pontryagin_diff(&p, &zero).unwrap();
        assert_eq!(e.set, p);
    }

    #[test]
    fn minkowski_with_box() {
        let s = minkowski_sum_box(&unit_box(), &HyperRect::symmetric(2, 0.5)).unwrap();
        assert!(s.b().iter().all(|v| *v == 1.5));
    }

    #[test]
    fn projection_cases() {
        let r = weighted_projection(&dvector![0.3, -0.2], &unit_box(), &DMatrix::identity(2, 2))
            .unwrap();
        assert_eq!(r.distance_sq, 0.0);
        let r = weighted_projection(&dvector![2.0, 0.0], &unit_box(), &DMatrix::identity(2, 2))
            .unwrap();
        assert!((r.distance_sq - 1.0).abs() < 1e-9);
        assert!((r.projection - dvector![1.0, 0.0]).norm() < 1e-8);
    }

    #[test]
    fn shape_ratio_closed_forms() {
        assert_eq!(shape_ratio(&unit_box()).unwrap(), 1.0);
        let off = HyperRect::new(dvector![-0.1, -1.0], dvector![1.9, 1.0]).unwrap();
        let d = shape_diagnostic(&off.to_polytope()).unwrap();
        assert!((d.r_c - 1.0).abs() < 1e-12);
        assert!((d.r_o - 0.1).abs() < 1e-15);
        assert!((d.ratio - 10.0).abs() < 1e-9);
        let touching = HyperRect::new(dvector![0.0, -1.0], dvector![1.0, 1.0]).unwrap();
        assert_eq!(shape_ratio(&touching.to_polytope()).unwrap(), f64::INFINITY);
    }

    #[test]
    fn serde_row_major() {
        let p = Polytope::new(dmatrix![1.0, 2.0; 3.0, 4.0], dvector![5.0, 6.0]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"a":[[1.0,2.0],[3.0,4.0]],"b":[5.0,6.0]}"#);
        let q: Polytope = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_malformed() {
        assert!(Polytope::new(DMatrix::zeros(0, 2), DVector::zeros(0)).is_err());
        assert!(Polytope::new(dmatrix![f64::NAN], dvector![1.0]).is_err());
        assert!(HyperRect::new(dvector![1.0], dvector![0.0]).is_err());
    }

    #[test]
    fn box_detection() {
        let b = HyperRect::new(dvector![-1.0, 0.5], dvector![2.0, 3.0]).unwrap();
        assert_eq!(b.to_polytope().as_box(), Some(b));
        let tri = Polytope::new(dmatrix![1.0, 1.0; -1.0, 0.0; 0.0, -1.0], dvector![1.0, 0.0, 0.0])
            .unwrap();
        assert_eq!(tri.as_box(), None);
    }

    #[test]
    fn boundedness() {
        assert!(unit_box().is_bounded().unwrap());
        let half = Polytope::new(dmatrix![1.0, 0.0], dvector![1.0]).unwrap();
        assert!(!half.is_bounded().unwrap());
    }
}
