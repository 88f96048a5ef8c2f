//! Full conditional distributions used by the chain.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::prior::PriorHyper;
use super::SamplerError;

/// Sufficient statistics of one leaf in coefficient space.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafStats {
    pub n: usize,
    /// `sum_i F^T r_i`.
    pub proj_sum: DVector<f64>,
    /// `sum_i r_i^T r_i`.
    pub sq_sum: f64,
}

impl LeafStats {
    pub fn empty(j: usize) -> Self {
        Self {
            n: 0,
            proj_sum: DVector::zeros(j),
            sq_sum: 0.0,
        }
    }
}

/// Gaussian full conditional of one leaf's parameter vector.
#[derive(Debug, Clone)]
pub struct LeafPosterior {
    pub mean: DVector<f64>,
    /// Cholesky factor of the posterior precision `V_post^{-1}`.
    precision: Cholesky<f64, Dyn>,
    /// `mu_post^T V_post^{-1} mu_post`.
    quad: f64,
}

impl LeafPosterior {
    /// `V_post^{-1} = V_mu^{-1} + (n / sigma^2) A` with `A = F^T F`.
    pub fn new(stats: &LeafStats, a: &DMatrix<f64>, sigma2: f64, prior: &PriorHyper) -> Result<Self, SamplerError> {
        if !(sigma2 > 0.0) {
            return Err(SamplerError::NonPositiveVariance(sigma2));
        }
        let precision = prior.v_mu_inv() + a * (stats.n as f64 / sigma2);
        let rhs = &stats.proj_sum / sigma2 + prior.v_mu_inv_mu();
        let chol = precision.cholesky().ok_or(SamplerError::SingularLeafPosterior)?;
        let mean = chol.solve(&rhs);
        let quad = mean.dot(&rhs);
        Ok(Self {
            mean,
            precision: chol,
            quad,
        })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision.inverse()
    }

    pub fn log_det_covariance(&self) -> f64 {
        -2.0 * self.precision.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `mu_post + L^{-T} eps` with `V_post^{-1} = L L^T`, consuming `J` normals.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let j = self.mean.len();
        let eps = DVector::from_iterator(j, (0..j).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let l = self.precision.l();
        let dev = l
            .transpose()
            .solve_upper_triangular(&eps)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + dev
    }

    /// Log of the leaf's factor in the marginal likelihood of the tree.
    pub fn log_marginal(&self, stats: &LeafStats, sigma2: f64, m: usize, prior: &PriorHyper) -> f64 {
        0.5 * self.log_det_covariance() - 0.5 * prior.log_det_v_mu() + 0.5 * self.quad
            - stats.sq_sum / (2.0 * sigma2)
            - 0.5 * prior.mu_quad()
            - 0.5 * (stats.n * m) as f64 * (2.0 * std::f64::consts::PI * sigma2).ln()
    }
}

/// Leaf posterior from grid-space residuals, using `F^T F` as computed.
///
/// `resid_sum` is `sum_i r_i` over the leaf's observations (length `M`) and
/// `f = B Psi` (M x J).
pub fn leaf_posterior(
    n_tl: usize,
    resid_sum: &DVector<f64>,
    sigma2: f64,
    f: &DMatrix<f64>,
    prior: &PriorHyper,
) -> Result<(DVector<f64>, DMatrix<f64>), SamplerError> {
    let stats = LeafStats {
        n: n_tl,
        proj_sum: f.tr_mul(resid_sum),
        sq_sum: 0.0,
    };
    let post = LeafPosterior::new(&stats, &f.tr_mul(f), sigma2, prior)?;
    Ok((post.mean.clone(), post.covariance()))
}

/// Leaf posterior assuming `F^T F = I_J`.
pub fn leaf_posterior_orthonormal(
    n_tl: usize,
    proj_sum: &DVector<f64>,
    sigma2: f64,
    prior: &PriorHyper,
) -> Result<(DVector<f64>, DMatrix<f64>), SamplerError> {
    if !(sigma2 > 0.0) {
        return Err(SamplerError::NonPositiveVariance(sigma2));
    }
    let j = proj_sum.len();
    let precision = prior.v_mu_inv() + DMatrix::<f64>::identity(j, j) * (n_tl as f64 / sigma2);
    let v_post = precision
        .try_inverse()
        .ok_or(SamplerError::SingularLeafPosterior)?;
    let mean = &v_post * (proj_sum / sigma2 + prior.v_mu_inv_mu());
    Ok((mean, v_post))
}

/// Log marginal likelihood of a partition with leaf parameters integrated out.
///
/// `leaves[l]` holds the grid-space partial residuals `r_i` of the observations
/// in leaf `l`.
pub fn log_marginal_likelihood(
    leaves: &[Vec<DVector<f64>>],
    sigma2: f64,
    f: &DMatrix<f64>,
    prior: &PriorHyper,
) -> Result<f64, SamplerError> {
    let a = f.tr_mul(f);
    let j = f.ncols();
    let m = f.nrows();
    let mut total = 0.0;
    for resid in leaves {
        let mut stats = LeafStats::empty(j);
        for r in resid {
            stats.n += 1;
            stats.proj_sum += f.tr_mul(r);
            stats.sq_sum += r.norm_squared();
        }
        let post = LeafPosterior::new(&stats, &a, sigma2, prior)?;
        total += post.log_marginal(&stats, sigma2, m, prior);
    }
    Ok(total)
}

/// Inverse-gamma draw for `sigma^2` with shape `(nu + nM)/2` and scale `(lambda nu + sse)/2`.
pub fn draw_sigma2<R: Rng + ?Sized>(nu: f64, lambda_scale: f64, n_obs: usize, sse: f64, rng: &mut R) -> f64 {
    let shape = 0.5 * (nu + n_obs as f64);
    let scale = 0.5 * (lambda_scale * nu + sse.max(0.0));
    let precision = Gamma::new(shape, 1.0 / scale).expect("shape and rate are positive");
    1.0 / precision.sample(rng)
}

/// Gamma draw (shape `K/2 + 1`, rate `psi^T Omega psi / 2`) for a smoothing parameter.
pub fn draw_lambda<R: Rng + ?Sized>(k: usize, quad: f64, rng: &mut R) -> Result<f64, SamplerError> {
    if !(quad > 0.0) {
        return Err(SamplerError::NonPositivePenalty(quad));
    }
    let g = Gamma::new(0.5 * k as f64 + 1.0, 2.0 / quad).expect("positive parameters");
    Ok(g.sample(rng))
}

/// Outcome of one constrained draw of a basis coefficient column.
#[derive(Debug, Clone)]
pub struct PsiDraw {
    /// Constrained draw before normalization.
    pub psi: DVector<f64>,
    /// Whether the constraint system needed the fallback ridge.
    pub ridged: bool,
}

const CONSTRAINT_RIDGE: f64 = 1e-10;

/// Draw `w ~ N(Q^{-1} h, Q^{-1})` and condition on `C psi = 0`.
///
/// The correction `psi = w - Sigma C^T (C Sigma C^T)^{-1} C w` maps an
/// unconstrained draw onto a draw from the Gaussian conditioned on the
/// constraint. Consumes `K` standard normals.
pub fn draw_constrained<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    h: &DVector<f64>,
    constraint: &DMatrix<f64>,
    rng: &mut R,
) -> Result<PsiDraw, SamplerError> {
    let k = h.len();
    let chol = precision
        .clone()
        .cholesky()
        .ok_or(SamplerError::SingularPsiPrecision)?;
    let mean = chol.solve(h);
    let eps = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let dev = chol
        .l()
        .transpose()
        .solve_upper_triangular(&eps)
        .expect("Cholesky factor has a positive diagonal");
    let w = mean + dev;
    if constraint.nrows() == 0 {
        return Ok(PsiDraw { psi: w, ridged: false });
    }
    // Sigma C^T = Q^{-1} C^T
    let sct = chol.solve(&constraint.transpose());
    let mut csc = constraint * &sct;
    super::symmetrize(&mut csc);
    let cw = constraint * &w;
    let (solve, ridged) = match csc.clone().cholesky() {
        Some(c) => (c.solve(&cw), false),
        None => {
            log::warn!("constraint system C Sigma C^T is singular; adding a {CONSTRAINT_RIDGE:e} ridge");
            for d in 0..csc.nrows() {
                csc[(d, d)] += CONSTRAINT_RIDGE;
            }
            let c = csc.cholesky().ok_or(SamplerError::SingularConstraint)?;
            (c.solve(&cw), true)
        }
    };
    Ok(PsiDraw {
        psi: w - sct * solve,
        ridged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn standard_prior(j: usize) -> PriorHyper {
        PriorHyper::new(0.95, 0.5, 3.0, 1.0, DVector::zeros(j), DMatrix::identity(j, j), 2.0).unwrap()
    }

    #[test]
    fn no_data_posterior_is_the_prior() {
        let prior = PriorHyper::new(
            0.95,
            0.5,
            3.0,
            1.0,
            DVector::from_vec(vec![0.3, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            2.0,
        )
        .unwrap();
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let (mean, v) = leaf_posterior(0, &DVector::zeros(3), 1.0, &f, &prior).unwrap();
        assert_relative_eq!(mean, prior.mu_mu, epsilon = 1e-12);
        assert_relative_eq!(v, prior.v_mu, epsilon = 1e-12);
    }

    #[test]
    fn unit_prior_single_observation() {
        // V_mu = I, sigma^2 = 1, n = 1, F^T r = c  =>  V_post = I/2, mu_post = (c + mu_mu)/2
        let prior = PriorHyper::new(0.95, 0.5, 3.0, 1.0, DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2), 2.0)
            .unwrap();
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let c = DVector::from_vec(vec![3.0, -1.0]);
        let (mean, v) = leaf_posterior(1, &c, 1.0, &f, &prior).unwrap();
        assert_relative_eq!(v, DMatrix::identity(2, 2) * 0.5, epsilon = 1e-14);
        assert_relative_eq!(mean, DVector::from_vec(vec![2.0, 0.5]), epsilon = 1e-14);
        let (m2, v2) = leaf_posterior_orthonormal(1, &c, 1.0, &prior).unwrap();
        assert_relative_eq!(m2, mean, epsilon = 1e-14);
        assert_relative_eq!(v2, v, epsilon = 1e-14);
    }

    #[test]
    fn huge_noise_returns_prior_mean() {
        let prior = PriorHyper::new(0.95, 0.5, 3.0, 1.0, DVector::from_vec(vec![0.7]), DMatrix::identity(1, 1), 2.0)
            .unwrap();
        let (mean, _) = leaf_posterior_orthonormal(5, &DVector::from_vec(vec![100.0]), 1e12, &prior).unwrap();
        assert_relative_eq!(mean[0], 0.7, epsilon = 1e-8);
    }

    #[test]
    fn non_positive_sigma_is_an_error() {
        let prior = standard_prior(1);
        assert!(leaf_posterior_orthonormal(1, &DVector::zeros(1), 0.0, &prior).is_err());
    }

    #[test]
    fn one_dimensional_marginal_is_a_gaussian_convolution() {
        // z = mu + e, mu ~ N(0,1), e ~ N(0,1), z = 0  =>  log N(0; 0, 2) = -log(4 pi)/2
        let prior = standard_prior(1);
        let f = DMatrix::from_element(1, 1, 1.0);
        let lml = log_marginal_likelihood(&[vec![DVector::zeros(1)]], 1.0, &f, &prior).unwrap();
        assert_relative_eq!(lml, -0.5 * (4.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
    }

    #[test]
    fn identical_halves_change_only_complexity_terms() {
        // splitting a leaf whose halves share residual means: the difference equals
        // the closed-form change in the determinant and quadratic terms alone
        let prior = standard_prior(1);
        let f = DMatrix::from_element(1, 1, 1.0);
        let r = |v: f64| DVector::from_vec(vec![v]);
        let sigma2 = 0.5;
        let joint = log_marginal_likelihood(&[vec![r(1.0), r(1.0), r(1.0), r(1.0)]], sigma2, &f, &prior).unwrap();
        let split = log_marginal_likelihood(&[vec![r(1.0), r(1.0)], vec![r(1.0), r(1.0)]], sigma2, &f, &prior).unwrap();
        // data terms: sum r^2 and the normalizing exponent are identical on both sides
        let part = |n: f64, s: f64| {
            let p = 1.0 + n / sigma2;
            -0.5 * p.ln() + 0.5 * (s / sigma2).powi(2) / p
        };
        let expect = 2.0 * part(2.0, 2.0) - part(4.0, 4.0);
        assert_relative_eq!(split - joint, expect, epsilon = 1e-12);
    }

    #[test]
    fn sigma2_posterior_mean_example() {
        // nu = 3, lambda = 1, nM = 1, sse = 0 => InvGamma(2, 1.5) with mean 1.5
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400_000;
        let draws: Vec<f64> = (0..n).map(|_| draw_sigma2(3.0, 1.0, 1, 0.0, &mut rng)).collect();
        // infinite variance at shape 2, so compare the median instead: 1.5 / median(Gamma(2,1)) = 1.5/1.678347
        let mut sorted = draws.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[n / 2];
        assert_relative_eq!(median, 1.5 / 1.678_346_990_016_661_7, max_relative = 0.01);
    }

    #[test]
    fn sigma2_concentrates_on_simulated_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let sse: f64 = (0..n)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                (0.1 * e).powi(2)
            })
            .sum();
        let inside = (0..1000)
            .map(|_| draw_sigma2(3.0, 0.01, n, sse, &mut rng))
            .filter(|s| *s > 0.008 && *s < 0.012)
            .count();
        assert!(inside >= 990, "{inside}");
    }

    #[test]
    fn lambda_draws_match_gamma_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mean = (0..n).map(|_| draw_lambda(2, 2.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert_relative_eq!(mean, 2.0, max_relative = 0.01);
        let mean = (0..n).map(|_| draw_lambda(40, 3.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert_relative_eq!(mean, 21.0 / 1.5, max_relative = 0.01);
        assert!(draw_lambda(4, 0.0, &mut rng).is_err());
    }

    #[test]
    fn constrained_draw_satisfies_constraint_and_matches_conditional_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]);
        let h = DVector::from_vec(vec![1.0, -0.5, 0.25]);
        let c = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        // conditional Gaussian: mean m - S C^T (C S C^T)^{-1} C m
        let s = q.clone().try_inverse().unwrap();
        let m = &s * &h;
        let sct = &s * c.transpose();
        let csc = (&c * &sct)[(0, 0)];
        let cond_mean = &m - &sct * ((&c * &m)[(0, 0)] / csc);
        let n = 200_000;
        let mut acc = DVector::zeros(3);
        for _ in 0..n {
            let d = draw_constrained(&q, &h, &c, &mut rng).unwrap();
            assert!((d.psi[0] + d.psi[1]).abs() < 1e-12);
            acc += d.psi;
        }
        acc /= n as f64;
        assert_relative_eq!(acc, cond_mean, epsilon = 0.01);
    }
}
