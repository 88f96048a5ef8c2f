//! Posterior sampling for the adaptive-basis model and its fixed-basis baselines.

mod chain;
mod conditionals;
mod predict;
mod prior;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::basis::{max_abs_identity_deviation, BasisError, BasisSystem};
use crate::config::{ConfigError, ModelConfig};
use crate::data::{encode_covariates, CovariateEncoding, DataError, FunctionalDataset, GridDomain};

pub use chain::{init_state, ChainData, ChainDiagnostics, MhDecision, Sampler, SamplerState, SweepPlan};
pub use conditionals::{
    draw_constrained, draw_lambda, draw_sigma2, leaf_posterior, leaf_posterior_orthonormal, log_marginal_likelihood,
    LeafPosterior, LeafStats, PsiDraw,
};
pub use predict::{
    for_each_row_draws, predict_draws, predict_summary, variable_importance, Importance, PredictionSummary,
};
pub use prior::{
    build_prior, functional_pcs, gram_schmidt, initial_psi, lambda_scale, leaf_variance, pooled_variance, Fpc,
    PriorHyper,
};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("prior construction failed: {0}")]
    Prior(String),
    #[error("sigma^2 must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("leaf posterior precision is not positive definite")]
    SingularLeafPosterior,
    #[error("basis coefficient precision is not positive definite")]
    SingularPsiPrecision,
    #[error("orthogonality constraint system is singular even after the ridge fallback")]
    SingularConstraint,
    #[error("penalty quadratic form must be positive, got {0}; the penalty matrix is not positive definite")]
    NonPositivePenalty(f64),
    #[error("incremental fit drifted by {drift:e} from a full recomputation at iteration {iteration}")]
    CacheDrift { iteration: usize, drift: f64 },
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    crate::basis::symmetrize(a)
}

/// Retained posterior draws with everything needed to predict from them.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub config: ModelConfig,
    pub grid: GridDomain,
    pub basis: BasisSystem,
    pub encoding: CovariateEncoding,
    pub draws: Vec<SamplerState>,
    pub diagnostics: ChainDiagnostics,
    /// `max |F^T F - I|` over retained draws, with `F = B Psi` formed explicitly.
    pub max_draw_orthonormality_error: f64,
}

impl FitResult {
    pub fn n_basis(&self) -> usize {
        self.config.n_basis
    }
}

/// Validate, encode, build the basis and prior, and run one chain seeded by `config.seed`.
pub fn fit(data: &FunctionalDataset, config: &ModelConfig) -> Result<FitResult, SamplerError> {
    config.validate_for(data.n(), data.m())?;
    let encoded = encode_covariates(data)?;
    let basis = BasisSystem::build(&data.grid, config.n_tps)?;
    let (prior, psi) = build_prior(&data.z, &basis, config)?;
    let chain_data = ChainData::new(&data.z, &encoded.x, &basis, config.n_cutpoints);
    let state = init_state(&prior, psi, config.n_trees, pooled_variance(&data.z));
    let rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = Sampler::new(&chain_data, prior, SweepPlan::for_mode(config.mode), state, rng);
    let draws = sampler.run(config)?;
    let diagnostics = sampler.diagnostics().clone();
    let max_draw_orthonormality_error = draws
        .iter()
        .map(|d| {
            let f = &basis.b * &d.psi;
            max_abs_identity_deviation(&f.tr_mul(&f))
        })
        .fold(0.0, f64::max);
    Ok(FitResult {
        config: config.clone(),
        grid: data.grid.clone(),
        basis,
        encoding: encoded.encoding,
        draws,
        diagnostics,
        max_draw_orthonormality_error,
    })
}
