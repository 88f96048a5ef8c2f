//! Orthonormal low-rank thin-plate spline basis on the observation grid.
//!
//! The raw design has columns `[1, s1, s2, eta(|s - k_1|), ..., eta(|s - k_R|)]`
//! with `eta(r) = r^2 log r`. A thin QR factorization `D = Q R` gives the
//! orthonormal basis `B = Q` (so `B^T B = I` in the discrete grid metric) and the
//! raw roughness penalty is carried to the new coefficients by congruence with
//! `R^{-1}`.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::data::GridDomain;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("requested {requested} knots but the grid has only {available} points")]
    TooManyKnots { requested: usize, available: usize },

    #[error("at least one knot is required")]
    NoKnots,

    #[error("basis dimension K={0} is too small; thin-plate bases need K >= 4")]
    TooFewColumns(usize),

    #[error(
        "thin-plate design is rank deficient (column {column} of {k}); the knots or grid are \
         collinear, use fewer knots"
    )]
    RankDeficient { column: usize, k: usize },

    #[error("thin-plate penalty is identically zero (a single knot has no bending energy); use K >= 5")]
    ZeroPenalty,
}

/// Thin-plate radial kernel `r^2 log r`, with `eta(0) = 0`.
pub fn tps_kernel(r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnotSet {
    pub knots: Vec<[f64; 2]>,
    /// Grid row of each knot, in selection order.
    pub grid_index: Vec<usize>,
}

impl KnotSet {
    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }
}

/// Greedy maximin (farthest-point) knot selection over grid points.
///
/// The first knot is the grid point nearest the centroid; every later knot
/// maximizes its distance to the nearest chosen knot. Ties go to the lowest
/// row-major index. `_seed` is accepted so all constructors share one signature;
/// the rule is deterministic.
pub fn select_knots(grid: &GridDomain, count: usize, _seed: u64) -> Result<KnotSet, BasisError> {
    let m = grid.len();
    if count > m {
        return Err(BasisError::TooManyKnots {
            requested: count,
            available: m,
        });
    }
    if count == 0 {
        return Err(BasisError::NoKnots);
    }
    let centroid = grid.centroid();
    let mut first = 0;
    let mut best = f64::INFINITY;
    for (i, p) in grid.points().iter().enumerate() {
        let d = dist(*p, centroid);
        if d < best {
            best = d;
            first = i;
        }
    }
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = grid.points().iter().map(|p| dist(*p, grid.point(first))).collect();
    while chosen.len() < count {
        let mut arg = 0;
        let mut far = f64::NEG_INFINITY;
        for (i, &d) in nearest.iter().enumerate() {
            if d > far {
                far = d;
                arg = i;
            }
        }
        chosen.push(arg);
        let k = grid.point(arg);
        for (d, p) in nearest.iter_mut().zip(grid.points()) {
            *d = d.min(dist(*p, k));
        }
    }
    Ok(KnotSet {
        knots: chosen.iter().map(|&i| grid.point(i)).collect(),
        grid_index: chosen,
    })
}

/// Unorthonormalized thin-plate design (M x K) and its roughness penalty (K x K).
#[derive(Debug, Clone)]
pub struct RawDesign {
    pub design: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
}

/// Raw thin-plate design and penalty.
///
/// The penalty is block diagonal: a zero block on the polynomial null space
/// `{1, s1, s2}` and the matrix absolute value `|E|` of the knot kernel matrix
/// `E_{rr'} = eta(|k_r - k_r'|)`. `E` itself is only conditionally positive
/// definite; `|E|` (same eigenvectors, absolute eigenvalues) is the positive
/// semi-definite penalty of the low-rank thin-plate parameterization.
pub fn build_raw_design(grid: &GridDomain, knots: &KnotSet) -> RawDesign {
    let m = grid.len();
    let r = knots.len();
    let k = r + 3;
    let design = DMatrix::from_fn(m, k, |i, c| {
        let s = grid.point(i);
        match c {
            0 => 1.0,
            1 => s[0],
            2 => s[1],
            _ => tps_kernel(dist(s, knots.knots[c - 3])),
        }
    });
    let e = DMatrix::from_fn(r, r, |a, b| tps_kernel(dist(knots.knots[a], knots.knots[b])));
    let eig = SymmetricEigen::new(e);
    let abs = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::abs));
    let e_abs = &eig.eigenvectors * abs * eig.eigenvectors.transpose();
    let mut penalty = DMatrix::zeros(k, k);
    penalty.view_mut((3, 3), (r, r)).copy_from(&e_abs);
    symmetrize(&mut penalty);
    RawDesign { design, penalty }
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Orthonormal basis `B` (M x K) with its positive definite penalty `Omega` (K x K).
#[derive(Debug, Clone)]
pub struct BasisSystem {
    pub b: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
    pub knots: KnotSet,
    /// `eps` added to the diagonal of the transformed penalty.
    pub ridge: f64,
    /// Upper-triangular factor mapping raw coefficients `w` to basis coefficients `R w`.
    pub r_factor: DMatrix<f64>,
}

const RIDGE_SCALE: f64 = 1e-8;

/// QR-orthonormalize a raw design and carry the penalty over by congruence.
///
/// For basis coefficients `v = R w`, `v^T Omega_t v = w^T Omega_raw w` with
/// `Omega_t = R^{-T} Omega_raw R^{-1}`. A ridge `eps = 1e-8 * tr(Omega_t) / K`
/// makes the result strictly positive definite.
pub fn orthonormalize(raw: RawDesign, knots: KnotSet) -> Result<BasisSystem, BasisError> {
    let k = raw.design.ncols();
    let qr = raw.design.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    // positive diagonal makes the factorization unique
    for c in 0..k {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
            r.row_mut(c).neg_mut();
        }
    }
    let scale = (0..k).map(|c| r[(c, c)].abs()).fold(0.0, f64::max);
    for c in 0..k {
        if r[(c, c)].abs() <= 1e-10 * scale {
            return Err(BasisError::RankDeficient { column: c, k });
        }
    }
    let rt = r.transpose();
    // X = R^{-T} Omega_raw, then Omega_t = X R^{-1} = (R^{-T} X^T)^T
    let x = rt
        .solve_lower_triangular(&raw.penalty)
        .expect("nonzero diagonal checked above");
    let y = rt
        .solve_lower_triangular(&x.transpose())
        .expect("nonzero diagonal checked above");
    let mut penalty = y.transpose();
    symmetrize(&mut penalty);
    if !(penalty.trace() > 0.0) {
        return Err(BasisError::ZeroPenalty);
    }
    let ridge = RIDGE_SCALE * penalty.trace() / k as f64;
    for c in 0..k {
        penalty[(c, c)] += ridge;
    }
    Ok(BasisSystem {
        b: q,
        penalty,
        knots,
        ridge,
        r_factor: r,
    })
}

impl BasisSystem {
    /// Maximin knots, raw design and orthonormalization for `k` basis functions.
    pub fn build(grid: &GridDomain, k: usize) -> Result<Self, BasisError> {
        if k < 4 {
            return Err(BasisError::TooFewColumns(k));
        }
        let knots = select_knots(grid, k - 3, 0)?;
        let raw = build_raw_design(grid, &knots);
        orthonormalize(raw, knots)
    }

    pub fn m(&self) -> usize {
        self.b.nrows()
    }

    pub fn k(&self) -> usize {
        self.b.ncols()
    }

    /// `max |B^T B - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.b.tr_mul(&self.b);
        max_abs_identity_deviation(&g)
    }
}

pub(crate) fn max_abs_identity_deviation(g: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}
