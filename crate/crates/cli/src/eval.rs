//! Scoring a fit against held-out surfaces.

use afbart::data::FunctionalDataset;
use afbart::metrics::MetricAccumulator;
use afbart::sampler::{for_each_row_draws, FitResult};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Contents of `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rmspe: f64,
    pub mis: f64,
    pub mcrps: f64,
    /// Share of cells whose truth lies inside the pointwise credible interval.
    pub coverage: f64,
    pub n_star: usize,
    pub m: usize,
    pub draws: usize,
}

/// Score posterior draws of the mean surface at `data`'s covariates against `truth`
/// with central `1 - alpha` intervals.
pub fn evaluate(
    fit: &FitResult,
    data: &FunctionalDataset,
    truth: &DMatrix<f64>,
    alpha: f64,
) -> Result<Evaluation, CliError> {
    if data.grid != fit.grid {
        return Err(CliError::Validation(
            "test grid differs from the grid the model was fitted on".into(),
        ));
    }
    if truth.shape() != (data.n(), data.m()) {
        return Err(CliError::Validation(format!(
            "truth is {}x{}, expected {}x{}",
            truth.nrows(),
            truth.ncols(),
            data.n(),
            data.m()
        )));
    }
    let x = fit.encoding.encode_dataset(data)?;
    let mut acc = MetricAccumulator::new(alpha);
    let mut row = Vec::with_capacity(data.m());
    for_each_row_draws(fit, &x, |i, draws| {
        row.clear();
        row.extend(truth.row(i).iter().copied());
        acc.add_row(&row, draws)
    })?;
    let scores = acc.finish()?;
    Ok(Evaluation {
        rmspe: scores.rmspe,
        mis: scores.mis,
        mcrps: scores.mcrps.unwrap_or(f64::NAN),
        coverage: acc.coverage(),
        n_star: data.n(),
        m: data.m(),
        draws: fit.draws.len(),
    })
}
