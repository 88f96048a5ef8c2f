//! Posterior prediction of surfaces and splitting-proportion importance.

use nalgebra::{DMatrix, DVector};

use super::FitResult;
use crate::metrics::quantile_sorted;
use crate::tree::splitting_proportions;

/// Call `visit(i, draws)` for each row of `x` (already encoded), where `draws`
/// is `M x S` with column `d` the surface `B Psi_d g_d(x_i)` of retained draw `d`.
pub fn for_each_row_draws<E>(
    fit: &FitResult,
    x: &DMatrix<f64>,
    mut visit: impl FnMut(usize, &DMatrix<f64>) -> Result<(), E>,
) -> Result<(), E> {
    let k = fit.basis.k();
    let s = fit.draws.len();
    let mut coef = DMatrix::zeros(k, s);
    let mut row = vec![0.0; x.ncols()];
    let mut g = vec![0.0; fit.n_basis()];
    for i in 0..x.nrows() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = x[(i, c)];
        }
        for (d, draw) in fit.draws.iter().enumerate() {
            draw.ensemble.predict_into(&row, &mut g);
            let c = &draw.psi * DVector::from_column_slice(&g);
            coef.set_column(d, &c);
        }
        let surfaces = &fit.basis.b * &coef;
        visit(i, &surfaces)?;
    }
    Ok(())
}

/// Per-draw predictions, `result[d]` being the `n* x M` surface matrix of draw `d`.
pub fn predict_draws(fit: &FitResult, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let m = fit.basis.m();
    let mut out = vec![DMatrix::zeros(x.nrows(), m); fit.draws.len()];
    for_each_row_draws::<()>(fit, x, |i, draws| {
        for (d, target) in out.iter_mut().enumerate() {
            target.row_mut(i).copy_from(&draws.column(d).transpose());
        }
        Ok(())
    })
    .expect("visitor is infallible");
    out
}

/// Pointwise posterior mean and 2.5% / 97.5% quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSummary {
    pub mean: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
}

pub fn predict_summary(fit: &FitResult, x: &DMatrix<f64>) -> PredictionSummary {
    let (n, m) = (x.nrows(), fit.basis.m());
    let mut mean = DMatrix::zeros(n, m);
    let mut lower = DMatrix::zeros(n, m);
    let mut upper = DMatrix::zeros(n, m);
    let mut buf = Vec::with_capacity(fit.draws.len());
    for_each_row_draws::<()>(fit, x, |i, draws| {
        for c in 0..m {
            buf.clear();
            buf.extend(draws.row(c).iter().copied());
            buf.sort_by(f64::total_cmp);
            mean[(i, c)] = buf.iter().sum::<f64>() / buf.len() as f64;
            lower[(i, c)] = quantile_sorted(&buf, 0.025);
            upper[(i, c)] = quantile_sorted(&buf, 0.975);
        }
        Ok(())
    })
    .expect("visitor is infallible");
    PredictionSummary { mean, lower, upper }
}

/// Posterior mean splitting proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct Importance {
    /// One entry per encoded column.
    pub encoded: Vec<f64>,
    /// Indicator columns summed back onto their categorical source.
    pub by_source: Vec<f64>,
}

pub fn variable_importance(fit: &FitResult) -> Importance {
    let p = fit.encoding.n_encoded();
    let mut encoded = vec![0.0; p];
    for draw in &fit.draws {
        for (acc, v) in encoded.iter_mut().zip(splitting_proportions(&draw.ensemble, p)) {
            *acc += v;
        }
    }
    if !fit.draws.is_empty() {
        for v in &mut encoded {
            *v /= fit.draws.len() as f64;
        }
    }
    let by_source = fit.encoding.aggregate_to_sources(&encoded);
    Importance { encoded, by_source }
}
