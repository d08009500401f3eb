#![allow(dead_code)]

use etrmpc_core::geometry::Polytope;
use etrmpc_core::tightening::controllability_rank;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > m {
        return out;
    }
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == m - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Vertices of a bounded polytope by intersecting every `n`-subset of facets.
pub fn vertices(a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<DVector<f64>> {
    let (m, n) = a.shape();
    let mut out = Vec::new();
    for rows in combinations(m, n) {
        let sa = DMatrix::from_fn(n, n, |i, j| a[(rows[i], j)]);
        let sb = DVector::from_fn(n, |i, _| b[rows[i]]);
        let lu = sa.lu();
        if lu.determinant().abs() < 1e-10 {
            continue;
        }
        let Some(v) = lu.solve(&sb) else { continue };
        if (a * &v - b).max() <= 1e-9 {
            out.push(v);
        }
    }
    out
}

/// Random bounded polytope with the origin strictly inside: facets tangent to
/// radii in `[rmin, rmax]` along random directions, plus a bounding box.
pub fn random_polytope(rng: &mut ChaCha8Rng, n: usize, facets: usize, rmin: f64, rmax: f64) -> Polytope {
    let m = facets + 2 * n;
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for i in 0..facets {
        let dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let dir = if dir.norm() < 1e-3 { DVector::from_element(n, 1.0) } else { dir };
        let scale = rng.random_range(0.5..2.0);
        a.row_mut(i).copy_from(&(dir.transpose() * scale));
        b[i] = rng.random_range(rmin..rmax) * a.row(i).norm();
    }
    for j in 0..n {
        a[(facets + j, j)] = 1.0;
        b[facets + j] = rmax * 3.0;
        a[(facets + n + j, j)] = -1.0;
        b[facets + n + j] = rmax * 3.0;
    }
    Polytope::new(a, b).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-s..s))
}

pub fn random_controllable(rng: &mut ChaCha8Rng, nx: usize, nu: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    loop {
        let a = random_matrix(rng, nx, nx, 1.5);
        let b = random_matrix(rng, nx, nu, 1.0);
        if controllability_rank(&a, &b) == nx {
            let c = etrmpc_core::tightening::controllability_matrix(&a, &b, nx);
            let sv = c.singular_values();
            if sv.min() > 1e-2 * sv.max() {
                return (a, b);
            }
        }
    }
}

/// Uniform point of a bounded polytope by rejection from its bounding box.
pub fn sample_in(rng: &mut ChaCha8Rng, p: &Polytope, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    loop {
        let x = DVector::from_fn(lo.len(), |i, _| rng.random_range(lo[i]..=hi[i]));
        if p.contains(&x) {
            return x;
        }
    }
}

/// Axis-aligned bounding box from the vertex list.
pub fn bounding_box(v: &[DVector<f64>]) -> (DVector<f64>, DVector<f64>) {
    let n = v[0].len();
    let lo = DVector::from_fn(n, |i, _| v.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min));
    let hi = DVector::from_fn(n, |i, _| v.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max));
    (lo, hi)
}

/// Box parameters `[ū₁, ū₂, v̲₁, v̲₂]` and their rows `W x ≤ d` for a planar
/// polytope `Ā e ≤ d`, with `e` at the box corner selected by signs.
fn corner_rows(abar: &DMatrix<f64>) -> DMatrix<f64> {
    let m = abar.nrows();
    DMatrix::from_fn(m, 4, |r, c| if c < 2 { abar[(r, c)].max(0.0) } else { (-abar[(r, c - 2)]).max(0.0) })
}

fn box_objective(x: &[f64; 4], q: u8) -> f64 {
    if q == 1 {
        (x[0] + x[2]) * (x[1] + x[3])
    } else {
        x[0] * x[1] * x[2] * x[3]
    }
}

/// Largest feasible `v̲₂` given the other three parameters, or `None`.
fn last_axis(w: &DMatrix<f64>, d: &DVector<f64>, x: &[f64; 3]) -> Option<f64> {
    let mut best = f64::INFINITY;
    for r in 0..w.nrows() {
        let rest = d[r] - w[(r, 0)] * x[0] - w[(r, 1)] * x[1] - w[(r, 2)] * x[2];
        if w[(r, 3)] > 0.0 {
            best = best.min(rest / w[(r, 3)]);
        } else if rest < -1e-12 {
            return None;
        }
    }
    (best >= 0.0 && best.is_finite()).then_some(best)
}

/// Largest extent of axis `a` given the earlier parameters `x[..a]`, with the
/// later ones at zero; `W ≥ 0` makes the feasible set downward closed.
fn axis_cap(w: &DMatrix<f64>, d: &DVector<f64>, x: &[f64], a: usize) -> f64 {
    let mut cap = f64::INFINITY;
    for r in 0..w.nrows() {
        let rest = d[r] - (0..a).map(|c| w[(r, c)] * x[c]).sum::<f64>();
        if w[(r, a)] > 0.0 {
            cap = cap.min(rest / w[(r, a)]);
        }
    }
    cap.max(0.0)
}

/// Ternary search for the maximum of a unimodal `f` on `[0, hi]`.
fn section_max(hi: f64, f: &mut dyn FnMut(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0, hi);
    for _ in 0..90 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    f(0.5 * (lo + hi)).max(f(lo)).max(f(hi))
}

/// Largest `vol_q` box by nested section searches. Maximizing a jointly
/// concave log-objective over some variables leaves a concave function of the
/// rest, so every level is unimodal.
fn nested_box_optimum(w: &DMatrix<f64>, d: &DVector<f64>, q: u8) -> f64 {
    section_max(axis_cap(w, d, &[], 0), &mut |a| {
        let cap1 = axis_cap(w, d, &[a], 1);
        section_max(cap1, &mut |b| {
            let cap2 = axis_cap(w, d, &[a, b], 2);
            section_max(cap2, &mut |c| match last_axis(w, d, &[a, b, c]) {
                Some(v) => box_objective(&[a, b, c, v], q),
                None => 0.0,
            })
        })
    })
}

/// Largest `vol_q` box inside a bounded planar polytope containing the
/// origin: the better of a `pts`-per-axis grid over three box parameters (the
/// fourth solved exactly) and nested section searches.
pub fn grid_box_oracle(abar: &DMatrix<f64>, d: &DVector<f64>, q: u8, pts: usize) -> f64 {
    let w = corner_rows(abar);
    let ub = [0, 1, 2].map(|a| axis_cap_alone(&w, d, a));
    let mut best = 0.0f64;
    for i in 0..pts {
        for j in 0..pts {
            for k in 0..pts {
                let t = |a: usize, n: usize| ub[a] * n as f64 / (pts - 1) as f64;
                let x = [t(0, i), t(1, j), t(2, k)];
                if let Some(v) = last_axis(&w, d, &x) {
                    best = best.max(box_objective(&[x[0], x[1], x[2], v], q));
                }
            }
        }
    }
    best.max(nested_box_optimum(&w, d, q))
}

/// Largest extent of axis `a` with every other parameter at zero.
fn axis_cap_alone(w: &DMatrix<f64>, d: &DVector<f64>, a: usize) -> f64 {
    (0..w.nrows()).filter(|&r| w[(r, a)] > 0.0).map(|r| d[r] / w[(r, a)]).fold(f64::INFINITY, f64::min).max(0.0)
}

/// Random bounded planar principal polytope with the origin inside.
pub fn random_principal(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DVector<f64>) {
    let facets = rng.random_range(3..7);
    let p = random_polytope(rng, 2, facets, 0.05, 1.5);
    (p.a().clone(), p.b().clone())
}
