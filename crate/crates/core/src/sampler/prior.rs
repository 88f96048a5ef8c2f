//! Data-informed hyperparameters and the starting basis coefficients.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::SamplerError;
use crate::basis::BasisSystem;
use crate::config::{Mode, ModelConfig};

/// Leading discrete functional principal components of the rows of `Z`.
#[derive(Debug, Clone)]
pub struct Fpc {
    /// `M x J`, orthonormal columns, descending eigenvalue order.
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

const DEGENERATE_EIGEN: f64 = 1e-12;

/// First `j` eigenvectors of the sample covariance of the centered rows of `z`.
///
/// With `n <= M` the `n x n` Gram matrix is decomposed instead, which yields
/// the same nonzero spectrum. Components beyond the data rank are completed
/// with an orthonormal set built from coordinate vectors so the result always
/// has `j` columns. Each column's largest-magnitude entry is made positive.
pub fn functional_pcs(z: &DMatrix<f64>, j: usize) -> Fpc {
    pcs_by(z, j, z.nrows() <= z.ncols())
}

fn pcs_by(z: &DMatrix<f64>, j: usize, via_gram: bool) -> Fpc {
    let (n, m) = z.shape();
    let mean = z.row_mean();
    let mut zc = z.clone();
    for mut row in zc.row_iter_mut() {
        row -= &mean;
    }
    let denom = (n.max(2) - 1) as f64;

    let (mut vectors, mut values): (Vec<DVector<f64>>, Vec<f64>) = (Vec::new(), Vec::new());
    if via_gram {
        let gram = &zc * zc.transpose() / denom;
        let eig = SymmetricEigen::new(gram);
        for (val, u) in sorted_pairs(&eig) {
            // v = Zc^T u / sqrt(denom * val) has unit norm
            let v = zc.tr_mul(&u) / (denom * val.max(0.0)).sqrt();
            values.push(val);
            vectors.push(v);
        }
    } else {
        let cov = zc.tr_mul(&zc) / denom;
        let eig = SymmetricEigen::new(cov);
        for (val, v) in sorted_pairs(&eig) {
            values.push(val);
            vectors.push(v);
        }
    }
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let mut kept: Vec<DVector<f64>> = Vec::with_capacity(j);
    let mut eigenvalues = Vec::with_capacity(j);
    for (val, v) in values.into_iter().zip(vectors) {
        if kept.len() == j {
            break;
        }
        if val > DEGENERATE_EIGEN * top && val > 0.0 && v.iter().all(|x| x.is_finite()) {
            kept.push(v);
            eigenvalues.push(val);
        }
    }
    complete_orthonormal(&mut kept, m, j);
    eigenvalues.resize(j, 0.0);

    let mut components = DMatrix::zeros(m, j);
    for (c, mut v) in kept.into_iter().enumerate() {
        fix_sign(&mut v);
        components.set_column(c, &v);
    }
    Fpc {
        components,
        eigenvalues,
    }
}

fn sorted_pairs(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> Vec<(f64, DVector<f64>)> {
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    order
        .into_iter()
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).into_owned()))
        .collect()
}

fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Extend `vs` to `j` orthonormal vectors in `R^m` using coordinate directions.
fn complete_orthonormal(vs: &mut Vec<DVector<f64>>, m: usize, j: usize) {
    let mut e = 0;
    while vs.len() < j && e < m {
        let mut v = DVector::zeros(m);
        v[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for u in vs.iter() {
                let d = u.dot(&v);
                v.axpy(-d, u, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            vs.push(v / norm);
        }
    }
}

/// Hyperparameters of the tree, leaf and noise priors.
#[derive(Debug, Clone)]
pub struct PriorHyper {
    pub a: f64,
    pub gamma: f64,
    pub nu: f64,
    /// Scale of the scaled inverse chi-squared prior on `sigma^2`.
    pub lambda_scale: f64,
    pub mu_mu: DVector<f64>,
    pub v_mu: DMatrix<f64>,
    pub k_shrink: f64,
    v_mu_inv: DMatrix<f64>,
    v_mu_inv_mu: DVector<f64>,
    log_det_v_mu: f64,
    mu_quad: f64,
}

impl PriorHyper {
    pub fn new(
        a: f64,
        gamma: f64,
        nu: f64,
        lambda_scale: f64,
        mu_mu: DVector<f64>,
        v_mu: DMatrix<f64>,
        k_shrink: f64,
    ) -> Result<Self, SamplerError> {
        if !(lambda_scale > 0.0) {
            return Err(SamplerError::Prior(format!("lambda_scale must be positive, got {lambda_scale}")));
        }
        let chol = v_mu
            .clone()
            .cholesky()
            .ok_or_else(|| SamplerError::Prior("V_mu is not positive definite".into()))?;
        let v_mu_inv = chol.inverse();
        let log_det_v_mu = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let v_mu_inv_mu = &v_mu_inv * &mu_mu;
        let mu_quad = mu_mu.dot(&v_mu_inv_mu);
        Ok(Self {
            a,
            gamma,
            nu,
            lambda_scale,
            mu_mu,
            v_mu,
            k_shrink,
            v_mu_inv,
            v_mu_inv_mu,
            log_det_v_mu,
            mu_quad,
        })
    }

    pub fn n_basis(&self) -> usize {
        self.mu_mu.len()
    }

    pub fn v_mu_inv(&self) -> &DMatrix<f64> {
        &self.v_mu_inv
    }

    /// `V_mu^{-1} mu_mu`.
    pub fn v_mu_inv_mu(&self) -> &DVector<f64> {
        &self.v_mu_inv_mu
    }

    pub fn log_det_v_mu(&self) -> f64 {
        self.log_det_v_mu
    }

    /// `mu_mu^T V_mu^{-1} mu_mu`.
    pub fn mu_quad(&self) -> f64 {
        self.mu_quad
    }
}

/// Sample variance (denominator `nM - 1`) of every entry of `z`.
pub fn pooled_variance(z: &DMatrix<f64>) -> f64 {
    let count = z.len() as f64;
    if z.len() < 2 {
        return 0.0;
    }
    let mean = z.sum() / count;
    z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0)
}

/// `lambda` with `P(sigma^2 < sigma_hat^2) = quantile` under `sigma^2 ~ nu lambda / chi^2_nu`.
pub fn lambda_scale(sigma_hat2: f64, nu: f64, quantile: f64) -> f64 {
    let chi = ChiSquared::new(nu).expect("nu >= 1 is validated by the config");
    sigma_hat2 * chi.inverse_cdf(1.0 - quantile) / nu
}

/// `V_mu` diagonal entry for a score column with the given range.
pub fn leaf_variance(range: f64, k_shrink: f64, n_trees: usize) -> f64 {
    let sd = range / (2.0 * k_shrink * (n_trees as f64).sqrt());
    (sd * sd).max(1e-8)
}

/// Starting basis coefficients `Psi` (K x J) for the given mode.
///
/// `fbart-tps` embeds the first `J` thin-plate columns. Otherwise the FPCs are
/// projected onto the basis (`B^T f_j`) and Gram-Schmidt orthonormalized in the
/// `B^T B` metric.
pub fn initial_psi(mode: Mode, basis: &BasisSystem, fpc: &Fpc) -> DMatrix<f64> {
    let k = basis.k();
    let j = fpc.components.ncols();
    match mode {
        Mode::FixedTps => {
            let mut psi = DMatrix::zeros(k, j);
            for c in 0..j {
                psi[(c, c)] = 1.0;
            }
            psi
        }
        Mode::Adaptive | Mode::FixedFpc => {
            let btb = basis.b.tr_mul(&basis.b);
            let raw = basis.b.tr_mul(&fpc.components);
            gram_schmidt(&raw, &btb)
        }
    }
}

/// Modified Gram-Schmidt (two passes) in the inner product `<u, v> = u^T G v`.
/// Columns that collapse are replaced with coordinate directions.
pub fn gram_schmidt(w: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, j) = w.shape();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(j);
    let mut spare = 0;
    for c in 0..j {
        let mut v = w.column(c).into_owned();
        let initial = (v.dot(&(g * &v))).max(0.0).sqrt();
        loop {
            for _ in 0..2 {
                for u in &out {
                    let d = u.dot(&(g * &v));
                    v.axpy(-d, u, 1.0);
                }
            }
            let norm = v.dot(&(g * &v)).max(0.0).sqrt();
            if norm > 1e-8 * initial.max(1.0) || spare >= k {
                v /= norm;
                break;
            }
            v = DVector::zeros(k);
            v[spare] = 1.0;
            spare += 1;
        }
        out.push(v);
    }
    DMatrix::from_columns(&out)
}

/// Prior hyperparameters from the data.
///
/// Scores `H = Z F0` use the starting basis of the chosen mode (projected FPCs,
/// or the thin-plate columns for `fbart-tps`); `mu_mu = colmean(H) / T` and
/// `V_mu = diag((range / (2 k sqrt(T)))^2)`.
pub fn build_prior(
    z: &DMatrix<f64>,
    basis: &BasisSystem,
    config: &ModelConfig,
) -> Result<(PriorHyper, DMatrix<f64>), SamplerError> {
    let sigma_hat2 = pooled_variance(z);
    if !(sigma_hat2 > 0.0) {
        return Err(SamplerError::Prior("response has zero variance".into()));
    }
    let fpc = functional_pcs(z, config.n_basis);
    let psi = initial_psi(config.mode, basis, &fpc);
    let f0 = &basis.b * &psi;
    let h = z * &f0;
    let t = config.n_trees;
    let j = config.n_basis;
    let mut mu_mu = DVector::zeros(j);
    let mut v_mu = DMatrix::zeros(j, j);
    for c in 0..j {
        let col = h.column(c);
        mu_mu[c] = col.mean() / t as f64;
        v_mu[(c, c)] = leaf_variance(col.max() - col.min(), config.k_shrink, t);
    }
    let prior = PriorHyper::new(
        config.a,
        config.gamma,
        config.nu,
        lambda_scale(sigma_hat2, config.nu, config.sigma_quantile),
        mu_mu,
        v_mu,
        config.k_shrink,
    )?;
    Ok((prior, psi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GridDomain;
    use approx::assert_relative_eq;

    #[test]
    fn lambda_scale_matches_chi_square_quantile() {
        // chi^2_3 quantile at 0.1 is 0.584374...
        let l = lambda_scale(1.0, 3.0, 0.9);
        assert_relative_eq!(l, 0.584_374_375_6 / 3.0, epsilon = 1e-8);
        assert_relative_eq!(l, 0.1948, epsilon = 1e-4);
    }

    #[test]
    fn leaf_variance_examples() {
        assert_relative_eq!(leaf_variance(4.0, 2.0, 1), 1.0, epsilon = 1e-15);
        assert_eq!(leaf_variance(0.0, 2.0, 50), 1e-8);
    }

    #[test]
    fn fpcs_agree_between_gram_and_covariance_routes() {
        let z = DMatrix::from_fn(5, 8, |i, m| ((i * 3 + m * 5) % 7) as f64 + 0.1 * (i * m) as f64);
        let gram = pcs_by(&z, 3, true);
        let cov = pcs_by(&z, 3, false);
        for c in 0..3 {
            assert_relative_eq!(gram.eigenvalues[c], cov.eigenvalues[c], epsilon = 1e-9);
        }
        assert_relative_eq!(gram.components, cov.components, epsilon = 1e-8);
        let ortho = gram.components.tr_mul(&gram.components);
        assert_relative_eq!(ortho, DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_data_is_padded_orthonormally() {
        // two identical rows: the centered rank is zero
        let z = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let f = functional_pcs(&z, 2);
        let gram = f.components.tr_mul(&f.components);
        assert_relative_eq!(gram, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn initial_psi_is_orthonormal_in_every_mode() {
        let grid = GridDomain::unit_square(6);
        let basis = BasisSystem::build(&grid, 12).unwrap();
        let z = DMatrix::from_fn(10, 36, |i, m| ((i + 1) as f64 * (m as f64 * 0.3).sin()) + (m % 5) as f64 * 0.1 * i as f64);
        let fpc = functional_pcs(&z, 4);
        for mode in [Mode::Adaptive, Mode::FixedFpc, Mode::FixedTps] {
            let psi = initial_psi(mode, &basis, &fpc);
            let f = &basis.b * &psi;
            let err = crate::basis::max_abs_identity_deviation(&f.tr_mul(&f));
            assert!(err <= 1e-8, "{mode:?}: {err}");
        }
    }

    #[test]
    fn constant_response_is_rejected() {
        let grid = GridDomain::unit_square(3);
        let basis = BasisSystem::build(&grid, 5).unwrap();
        let z = DMatrix::from_element(4, 9, 2.0);
        let cfg = ModelConfig { n_basis: 2, n_tps: 5, ..ModelConfig::default() };
        assert!(build_prior(&z, &basis, &cfg).is_err());
    }
}
