//! Evaluation metrics for surface predictions: RMSPE, mean interval score and mean CRPS.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no cells to evaluate")]
    Empty,
    #[error("{what} is {found_rows}x{found_cols}, expected {rows}x{cols}")]
    Shape {
        what: &'static str,
        rows: usize,
        cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("interval lower bound exceeds upper bound at (row {row}, column {col})")]
    InvertedInterval { row: usize, col: usize },
    #[error("CRPS needs at least 2 draws per cell, got {0}")]
    TooFewDraws(usize),
}

fn check_shape(what: &'static str, a: &DMatrix<f64>, like: &DMatrix<f64>) -> Result<(), MetricError> {
    if a.shape() != like.shape() {
        return Err(MetricError::Shape {
            what,
            rows: like.nrows(),
            cols: like.ncols(),
            found_rows: a.nrows(),
            found_cols: a.ncols(),
        });
    }
    Ok(())
}

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let n = v.len();
    if n == 1 {
        return v[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    v[lo] + frac * (v[hi] - v[lo])
}

pub fn rmspe(truth: &DMatrix<f64>, pred: &DMatrix<f64>) -> Result<f64, MetricError> {
    check_shape("prediction", pred, truth)?;
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    let sq: f64 = truth.iter().zip(pred.iter()).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok((sq / truth.len() as f64).sqrt())
}

/// Interval score of one cell: width plus `2/alpha` times the distance from the interval.
pub fn interval_score(truth: f64, lower: f64, upper: f64, alpha: f64) -> f64 {
    let miss = if truth < lower {
        lower - truth
    } else if truth > upper {
        truth - upper
    } else {
        0.0
    };
    (upper - lower) + (2.0 / alpha) * miss
}

pub fn mis(truth: &DMatrix<f64>, lower: &DMatrix<f64>, upper: &DMatrix<f64>, alpha: f64) -> Result<f64, MetricError> {
    check_shape("lower", lower, truth)?;
    check_shape("upper", upper, truth)?;
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut total = 0.0;
    for r in 0..truth.nrows() {
        for c in 0..truth.ncols() {
            let (lo, hi) = (lower[(r, c)], upper[(r, c)]);
            if lo > hi {
                return Err(MetricError::InvertedInterval { row: r, col: c });
            }
            total += interval_score(truth[(r, c)], lo, hi, alpha);
        }
    }
    Ok(total / truth.len() as f64)
}

/// Empirical CRPS of sorted draws `x_(1) <= ... <= x_(S)` at observation `y`:
/// `mean |x - y| - (1/S^2) sum_k (2k - S - 1) x_(k)`.
pub fn crps_sorted(sorted: &[f64], y: f64) -> f64 {
    let s = sorted.len() as f64;
    let mut abs = 0.0;
    let mut spread = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        abs += (x - y).abs();
        spread += (2.0 * (k + 1) as f64 - s - 1.0) * x;
    }
    abs / s - spread / (s * s)
}

pub fn crps(draws: &[f64], y: f64) -> f64 {
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    crps_sorted(&v, y)
}

/// The `O(S^2)` definition `mean |x - y| - mean_{s,s'} |x_s - x_s'| / 2`.
pub fn crps_naive(draws: &[f64], y: f64) -> f64 {
    let s = draws.len() as f64;
    let abs: f64 = draws.iter().map(|x| (x - y).abs()).sum::<f64>() / s;
    let mut pair = 0.0;
    for a in draws {
        for b in draws {
            pair += (a - b).abs();
        }
    }
    abs - 0.5 * pair / (s * s)
}

/// Mean CRPS over cells; `samples[d]` is draw `d` of the whole `n* x M` surface matrix.
pub fn mcrps(truth: &DMatrix<f64>, samples: &[DMatrix<f64>]) -> Result<f64, MetricError> {
    if samples.len() < 2 {
        return Err(MetricError::TooFewDraws(samples.len()));
    }
    for s in samples {
        check_shape("sample", s, truth)?;
    }
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut buf = vec![0.0; samples.len()];
    let mut total = 0.0;
    for r in 0..truth.nrows() {
        for c in 0..truth.ncols() {
            for (b, s) in buf.iter_mut().zip(samples) {
                *b = s[(r, c)];
            }
            buf.sort_by(f64::total_cmp);
            total += crps_sorted(&buf, truth[(r, c)]);
        }
    }
    Ok(total / truth.len() as f64)
}

/// Truth, point prediction, interval and optional draws for one evaluation.
#[derive(Debug, Clone)]
pub struct EvaluationInput {
    pub truth: DMatrix<f64>,
    pub pred_mean: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub samples: Option<Vec<DMatrix<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub rmspe: f64,
    pub mis: f64,
    pub mcrps: Option<f64>,
}

impl EvaluationInput {
    pub fn validate(&self) -> Result<(), MetricError> {
        check_shape("pred_mean", &self.pred_mean, &self.truth)?;
        check_shape("lower", &self.lower, &self.truth)?;
        check_shape("upper", &self.upper, &self.truth)?;
        if let Some(samples) = &self.samples {
            for s in samples {
                check_shape("sample", s, &self.truth)?;
            }
        }
        for r in 0..self.truth.nrows() {
            for c in 0..self.truth.ncols() {
                if self.lower[(r, c)] > self.upper[(r, c)] {
                    return Err(MetricError::InvertedInterval { row: r, col: c });
                }
            }
        }
        Ok(())
    }

    pub fn score(&self, alpha: f64) -> Result<Scores, MetricError> {
        self.validate()?;
        Ok(Scores {
            rmspe: rmspe(&self.truth, &self.pred_mean)?,
            mis: mis(&self.truth, &self.lower, &self.upper, alpha)?,
            mcrps: self.samples.as_deref().map(|s| mcrps(&self.truth, s)).transpose()?,
        })
    }
}

/// Streaming version of all three metrics, fed one cell's draws at a time.
///
/// The point prediction is the draw mean and the interval runs between the
/// `alpha/2` and `1 - alpha/2` quantiles of the draws.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    alpha: f64,
    sq: f64,
    interval: f64,
    crps: f64,
    covered: usize,
    cells: usize,
    buf: Vec<f64>,
}

impl MetricAccumulator {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            sq: 0.0,
            interval: 0.0,
            crps: 0.0,
            covered: 0,
            cells: 0,
            buf: Vec::new(),
        }
    }

    pub fn add_cell(&mut self, truth: f64, draws: impl IntoIterator<Item = f64>) -> Result<(), MetricError> {
        self.buf.clear();
        self.buf.extend(draws);
        if self.buf.len() < 2 {
            return Err(MetricError::TooFewDraws(self.buf.len()));
        }
        self.buf.sort_by(f64::total_cmp);
        let s = self.buf.len() as f64;
        let mean = self.buf.iter().sum::<f64>() / s;
        let lower = quantile_sorted(&self.buf, self.alpha / 2.0);
        let upper = quantile_sorted(&self.buf, 1.0 - self.alpha / 2.0);
        self.sq += (mean - truth) * (mean - truth);
        self.interval += interval_score(truth, lower, upper, self.alpha);
        self.crps += crps_sorted(&self.buf, truth);
        if lower <= truth && truth <= upper {
            self.covered += 1;
        }
        self.cells += 1;
        Ok(())
    }

    /// Add every cell of one surface; `draws` is `M x S` (one column per draw).
    pub fn add_row(&mut self, truth: &[f64], draws: &DMatrix<f64>) -> Result<(), MetricError> {
        for (m, &t) in truth.iter().enumerate() {
            self.add_cell(t, draws.row(m).iter().copied())?;
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Fraction of cells whose truth falls inside the interval.
    pub fn coverage(&self) -> f64 {
        self.covered as f64 / self.cells as f64
    }

    pub fn finish(&self) -> Result<Scores, MetricError> {
        if self.cells == 0 {
            return Err(MetricError::Empty);
        }
        let n = self.cells as f64;
        Ok(Scores {
            rmspe: (self.sq / n).sqrt(),
            mis: self.interval / n,
            mcrps: Some(self.crps / n),
        })
    }
}
