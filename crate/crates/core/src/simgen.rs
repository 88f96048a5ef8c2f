//! Synthetic datasets for the three simulation designs.
//!
//! Every generator is a pure function of its [`SimSpec`]. Random numbers are
//! consumed in a fixed order: basis surfaces, training covariates, training
//! noise, test covariates, test noise.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisSystem};
use crate::data::{CovariateColumn, FunctionalDataset, GridDomain};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("Gaussian process covariance is not positive definite even with jitter")]
    Factorization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum SimCase {
    /// Thin-plate loading surfaces, piecewise-constant coefficients.
    One,
    /// Gaussian-process loading surfaces, smooth coefficients.
    Two,
    /// Rough bump-mixture loading surfaces, smooth coefficients.
    Three,
}

impl TryFrom<u8> for SimCase {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(SimCase::One),
            2 => Ok(SimCase::Two),
            3 => Ok(SimCase::Three),
            _ => Err(format!("simulation case must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<SimCase> for u8 {
    fn from(c: SimCase) -> u8 {
        match c {
            SimCase::One => 1,
            SimCase::Two => 2,
            SimCase::Three => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub case: SimCase,
    pub n_train: usize,
    pub n_test: usize,
    /// Grid resolution `G`; the domain is the `G x G` cell-centre grid on the unit square.
    pub grid: usize,
    pub sigma: f64,
    pub j_true: usize,
    pub k_true: usize,
    pub seed: u64,
    /// Extra Uniform[0,1] covariates appended after `x1..x3` that the response ignores.
    pub noise_covariates: usize,
}

impl SimSpec {
    pub fn new(case: SimCase, sigma: f64, seed: u64) -> Self {
        Self {
            case,
            n_train: 100,
            n_test: 200,
            grid: 15,
            sigma,
            j_true: 5,
            k_true: 40,
            seed,
            noise_covariates: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.grid < 2 {
            return Err(SimError::Spec(format!("grid must be at least 2x2, got {0}x{0}", self.grid)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SimError::Spec(format!("sigma must be a nonnegative number, got {}", self.sigma)));
        }
        if self.n_train == 0 {
            return Err(SimError::Spec("n_train must be at least 1".into()));
        }
        if self.j_true == 0 {
            return Err(SimError::Spec("j_true must be at least 1".into()));
        }
        Ok(())
    }
}

/// Piecewise-constant coefficient: `1[x1 < .5] + 1[x2 < .5] (1 + 1[x3 < .5])`, the same for every `j`.
pub fn h_case1(x: &[f64], _j: usize) -> f64 {
    let ind = |v: f64| if v < 0.5 { 1.0 } else { 0.0 };
    ind(x[0]) + ind(x[1]) * (1.0 + ind(x[2]))
}

/// Smooth coefficient `5 sin(pi x1 x2) + 10 ((x3 (j + 2) - 3) / 6)^2` with `j` counted from 1.
pub fn h_case2(x: &[f64], j: usize) -> f64 {
    let q = (x[2] * (j as f64 + 2.0) - 3.0) / 6.0;
    5.0 * (PI * x[0] * x[1]).sin() + 10.0 * q * q
}

/// Squared-exponential kernel `exp(-4.5 |s - s'|^2)` plus a `1e-6` nugget on the diagonal.
pub fn gp_kernel(s: [f64; 2], t: [f64; 2]) -> f64 {
    let d2 = (s[0] - t[0]).powi(2) + (s[1] - t[1]).powi(2);
    let nugget = if s == t { 1e-6 } else { 0.0 };
    (-4.5 * d2).exp() + nugget
}

/// Lower Cholesky factor of the kernel Gram matrix on the grid.
pub fn gp_factor(grid: &GridDomain) -> Result<DMatrix<f64>, SimError> {
    let pts = grid.points();
    let m = pts.len();
    let gram = DMatrix::from_fn(m, m, |a, b| gp_kernel(pts[a], pts[b]));
    if let Some(c) = gram.clone().cholesky() {
        return Ok(c.l());
    }
    let jittered = gram + DMatrix::identity(m, m) * 1e-8;
    jittered.cholesky().map(|c| c.l()).ok_or(SimError::Factorization)
}

/// One Gaussian-process draw on the grid, consuming `M` standard normals.
pub fn gp_sample<R: Rng + ?Sized>(factor: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let m = factor.nrows();
    let eps = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
    factor * eps
}

/// A Gaussian bump `amplitude * exp(-|s - center|^2 / (2 width^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    pub width: f64,
    pub amplitude: f64,
}

fn bump_surface<R: Rng + ?Sized>(grid: &GridDomain, rng: &mut R) -> (DVector<f64>, Vec<Bump>) {
    let count = rng.random_range(3..=6);
    let bumps: Vec<Bump> = (0..count)
        .map(|_| Bump {
            center: [rng.random::<f64>(), rng.random::<f64>()],
            width: rng.random_range(0.04..0.15),
            amplitude: rng.random_range(0.5..2.0),
        })
        .collect();
    let values = DVector::from_iterator(
        grid.len(),
        grid.points().iter().map(|s| {
            bumps
                .iter()
                .map(|b| {
                    let d2 = (s[0] - b.center[0]).powi(2) + (s[1] - b.center[1]).powi(2);
                    b.amplitude * (-d2 / (2.0 * b.width * b.width)).exp()
                })
                .sum()
        }),
    );
    (values, bumps)
}

/// What was generated, for the dataset metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMeta {
    pub spec: SimSpec,
    /// Case 3 only: the bumps of each synthetic loading surface.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub bumps: Vec<Vec<Bump>>,
}

#[derive(Debug, Clone)]
pub struct SimData {
    pub train: FunctionalDataset,
    pub test: FunctionalDataset,
    /// Loading surfaces `f_j` on the grid (M x J).
    pub loadings: DMatrix<f64>,
    pub meta: SimMeta,
}

fn covariate_names(spec: &SimSpec) -> Vec<CovariateColumn> {
    let mut names: Vec<CovariateColumn> = (1..=3).map(|i| CovariateColumn::continuous(format!("x{i}"))).collect();
    names.extend((1..=spec.noise_covariates).map(|i| CovariateColumn::continuous(format!("noise{i}"))));
    names
}

fn draw_split<R: Rng + ?Sized>(
    spec: &SimSpec,
    n: usize,
    grid: &GridDomain,
    loadings: &DMatrix<f64>,
    rng: &mut R,
) -> FunctionalDataset {
    let p = 3 + spec.noise_covariates;
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for c in 0..p {
            x[(i, c)] = rng.random::<f64>();
        }
    }
    let h = DMatrix::from_fn(n, spec.j_true, |i, j| {
        let row = [x[(i, 0)], x[(i, 1)], x[(i, 2)]];
        match spec.case {
            SimCase::One => h_case1(&row, j + 1),
            SimCase::Two | SimCase::Three => h_case2(&row, j + 1),
        }
    });
    let truth = h * loadings.transpose();
    let mut z = truth.clone();
    for i in 0..n {
        for m in 0..grid.len() {
            let e: f64 = rng.sample(StandardNormal);
            z[(i, m)] += spec.sigma * e;
        }
    }
    FunctionalDataset {
        grid: grid.clone(),
        z,
        x,
        schema: covariate_names(spec),
        truth: Some(truth),
    }
}

/// Generate the training and test sets; the test set carries the noiseless truth.
pub fn generate(spec: &SimSpec) -> Result<SimData, SimError> {
    spec.validate()?;
    let grid = GridDomain::unit_square(spec.grid);
    let m = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut loadings = DMatrix::zeros(m, spec.j_true);
    let mut bumps = Vec::new();
    match spec.case {
        SimCase::One => {
            let k = spec.k_true.min(m);
            let basis = BasisSystem::build(&grid, k)?;
            for j in 0..spec.j_true {
                let phi = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
                loadings.set_column(j, &(&basis.b * phi));
            }
        }
        SimCase::Two => {
            let factor = gp_factor(&grid)?;
            for j in 0..spec.j_true {
                loadings.set_column(j, &gp_sample(&factor, &mut rng));
            }
        }
        SimCase::Three => {
            for j in 0..spec.j_true {
                let (surface, b) = bump_surface(&grid, &mut rng);
                loadings.set_column(j, &surface);
                bumps.push(b);
            }
        }
    }
    let mut train = draw_split(spec, spec.n_train, &grid, &loadings, &mut rng);
    train.truth = None;
    let test = draw_split(spec, spec.n_test, &grid, &loadings, &mut rng);
    Ok(SimData {
        train,
        test,
        loadings,
        meta: SimMeta {
            spec: spec.clone(),
            bumps,
        },
    })
}
