//! Gridded functional datasets, validation and covariate encoding.
//!
//! A [`FunctionalDataset`] pairs an `n x M` matrix of log-intensity surfaces
//! observed on a common [`GridDomain`] with an `n x p` covariate matrix.
//! Categorical covariates are stored as nonnegative integer codes and are
//! expanded into indicator columns by [`encode_covariates`] before any tree
//! sees them.

use std::cmp::Ordering;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset is empty: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: {what} has {found}, expected {expected}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {matrix} at (row {row}, column {col})")]
    NonFinite {
        matrix: &'static str,
        row: usize,
        col: usize,
    },

    #[error("duplicate grid point ({s1}, {s2}) at rows {first} and {second}")]
    DuplicatePoint {
        s1: f64,
        s2: f64,
        first: usize,
        second: usize,
    },

    #[error("categorical column '{column}' holds {value} at row {row}; expected a nonnegative integer code")]
    InvalidCode {
        column: String,
        row: usize,
        value: f64,
    },

    #[error("categorical column '{column}' has unseen level '{level}'")]
    UnseenLevel { column: String, level: String },

    #[error("covariate schema mismatch: {0}")]
    Schema(String),
}

/// The common observation grid `S = {s_1, ..., s_M}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    points: Vec<[f64; 2]>,
}

impl GridDomain {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self, DataError> {
        if points.is_empty() {
            return Err(DataError::Empty("grid has no points"));
        }
        for (m, p) in points.iter().enumerate() {
            for (c, v) in p.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DataError::NonFinite {
                        matrix: "points",
                        row: m,
                        col: c,
                    });
                }
            }
        }
        let order = row_major_order(&points);
        for w in order.windows(2) {
            if points[w[0]] == points[w[1]] {
                let (first, second) = (w[0].min(w[1]), w[0].max(w[1]));
                return Err(DataError::DuplicatePoint {
                    s1: points[first][0],
                    s2: points[first][1],
                    first,
                    second,
                });
            }
        }
        Ok(Self { points })
    }

    /// Regular `g x g` grid of cell centres on the unit square, row-major by `(s2, s1)`.
    pub fn unit_square(g: usize) -> Self {
        let mut points = Vec::with_capacity(g * g);
        for r in 0..g {
            for c in 0..g {
                points.push([(c as f64 + 0.5) / g as f64, (r as f64 + 0.5) / g as f64]);
            }
        }
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn point(&self, m: usize) -> [f64; 2] {
        self.points[m]
    }

    pub fn centroid(&self) -> [f64; 2] {
        let m = self.points.len() as f64;
        let (a, b) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        [a / m, b / m]
    }

    fn is_row_major(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| cmp_row_major(&w[0], &w[1]) == Ordering::Less)
    }
}

fn cmp_row_major(a: &[f64; 2], b: &[f64; 2]) -> Ordering {
    a[1].total_cmp(&b[1]).then(a[0].total_cmp(&b[0]))
}

/// Permutation that sorts points by `(s2, s1)`; stable, so equal points keep input order.
fn row_major_order(points: &[[f64; 2]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| cmp_row_major(&points[i], &points[j]));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

/// Name and kind of one covariate column.
///
/// For categorical columns, `levels[c]` is the display label of code `c`; when
/// `levels` is empty the code itself is the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateColumn {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

impl CovariateColumn {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
            levels: Vec::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, levels: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            levels,
        }
    }

    pub fn label(&self, code: u32) -> String {
        self.levels
            .get(code as usize)
            .cloned()
            .unwrap_or_else(|| code.to_string())
    }
}

/// Surfaces `z` (n x M), covariates `x` (n x p) and, for test sets, the noiseless
/// mean surfaces `truth` (n x M).
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    pub grid: GridDomain,
    pub z: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub schema: Vec<CovariateColumn>,
    pub truth: Option<DMatrix<f64>>,
}

impl FunctionalDataset {
    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `idx` of the dataset, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)]);
        Self {
            grid: self.grid.clone(),
            z: pick(&self.z),
            x: pick(&self.x),
            schema: self.schema.clone(),
            truth: self.truth.as_ref().map(pick),
        }
    }
}

fn check_finite(m: &DMatrix<f64>, matrix: &'static str) -> Result<(), DataError> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(DataError::NonFinite {
                    matrix,
                    row: i,
                    col: j,
                });
            }
        }
    }
    Ok(())
}

fn check_code(column: &CovariateColumn, row: usize, value: f64) -> Result<u32, DataError> {
    if value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
        Ok(value as u32)
    } else {
        Err(DataError::InvalidCode {
            column: column.name.clone(),
            row,
            value,
        })
    }
}

/// Check every dataset invariant and put the grid (and the matching columns of
/// `z` and `truth`) in row-major `(s2, s1)` order.
pub fn validate_dataset(raw: FunctionalDataset) -> Result<FunctionalDataset, DataError> {
    let FunctionalDataset {
        grid,
        z,
        x,
        schema,
        truth,
    } = raw;
    let grid = GridDomain::new(grid.points)?;
    let n = z.nrows();
    if n == 0 {
        return Err(DataError::Empty("no observations"));
    }
    if z.ncols() != grid.len() {
        return Err(DataError::DimensionMismatch {
            what: "z columns".into(),
            expected: grid.len(),
            found: z.ncols(),
        });
    }
    if x.nrows() != n {
        return Err(DataError::DimensionMismatch {
            what: "x rows".into(),
            expected: n,
            found: x.nrows(),
        });
    }
    if schema.len() != x.ncols() {
        return Err(DataError::DimensionMismatch {
            what: "covariate schema entries".into(),
            expected: x.ncols(),
            found: schema.len(),
        });
    }
    if let Some(t) = &truth {
        if t.nrows() != n || t.ncols() != grid.len() {
            return Err(DataError::DimensionMismatch {
                what: "truth shape".into(),
                expected: n * grid.len(),
                found: t.nrows() * t.ncols(),
            });
        }
    }
    check_finite(&z, "z")?;
    check_finite(&x, "x")?;
    if let Some(t) = &truth {
        check_finite(t, "truth")?;
    }
    for (c, col) in schema.iter().enumerate() {
        if col.kind == ColumnKind::Categorical {
            for i in 0..n {
                check_code(col, i, x[(i, c)])?;
            }
        }
    }

    if grid.is_row_major() {
        return Ok(FunctionalDataset {
            grid,
            z,
            x,
            schema,
            truth,
        });
    }
    let order = row_major_order(grid.points());
    let points = order.iter().map(|&m| grid.point(m)).collect();
    let permute = |mat: &DMatrix<f64>| DMatrix::from_fn(mat.nrows(), mat.ncols(), |i, j| mat[(i, order[j])]);
    Ok(FunctionalDataset {
        grid: GridDomain { points },
        z: permute(&z),
        x,
        schema,
        truth: truth.as_ref().map(permute),
    })
}

/// Where an encoded column comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Identity,
    Indicator { code: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub source: usize,
    pub role: ColumnRole,
}

/// The column map from encoded covariates back to their source columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateEncoding {
    pub schema: Vec<CovariateColumn>,
    pub columns: Vec<EncodedColumn>,
}

/// Encoded design `x_enc` (n x p') together with its column map.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCovariates {
    pub x: DMatrix<f64>,
    pub encoding: CovariateEncoding,
}

/// One-hot encode categorical columns in place; continuous columns pass through.
/// Levels are ordered by first appearance in row order.
pub fn encode_covariates(data: &FunctionalDataset) -> Result<EncodedCovariates, DataError> {
    let mut columns = Vec::new();
    for (c, col) in data.schema.iter().enumerate() {
        match col.kind {
            ColumnKind::Continuous => columns.push(EncodedColumn {
                source: c,
                role: ColumnRole::Identity,
            }),
            ColumnKind::Categorical => {
                let mut seen: Vec<u32> = Vec::new();
                for i in 0..data.n() {
                    let code = check_code(col, i, data.x[(i, c)])?;
                    if !seen.contains(&code) {
                        seen.push(code);
                    }
                }
                if seen.len() == 1 {
                    warn!(
                        "categorical column '{}' has a single level; emitting a constant indicator",
                        col.name
                    );
                }
                columns.extend(seen.into_iter().map(|code| EncodedColumn {
                    source: c,
                    role: ColumnRole::Indicator { code },
                }));
            }
        }
    }
    let encoding = CovariateEncoding {
        schema: data.schema.clone(),
        columns,
    };
    let x = encoding.encode(&data.x)?;
    Ok(EncodedCovariates { x, encoding })
}

impl CovariateEncoding {
    pub fn n_encoded(&self) -> usize {
        self.columns.len()
    }

    pub fn n_sources(&self) -> usize {
        self.schema.len()
    }

    /// Encode raw covariate rows with this map. Categorical codes that were not
    /// seen when the map was built are rejected.
    pub fn encode(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, DataError> {
        if x.ncols() != self.schema.len() {
            return Err(DataError::DimensionMismatch {
                what: "covariate columns".into(),
                expected: self.schema.len(),
                found: x.ncols(),
            });
        }
        for (c, col) in self.schema.iter().enumerate() {
            if col.kind != ColumnKind::Categorical {
                continue;
            }
            for i in 0..x.nrows() {
                let code = check_code(col, i, x[(i, c)])?;
                let known = self.columns.iter().any(|e| {
                    e.source == c && e.role == ColumnRole::Indicator { code }
                });
                if !known {
                    return Err(DataError::UnseenLevel {
                        column: col.name.clone(),
                        level: col.label(code),
                    });
                }
            }
        }
        Ok(DMatrix::from_fn(x.nrows(), self.columns.len(), |i, k| {
            let e = self.columns[k];
            let v = x[(i, e.source)];
            match e.role {
                ColumnRole::Identity => v,
                ColumnRole::Indicator { code } => {
                    if v == code as f64 {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        }))
    }

    /// Reorder columns of `x` (described by `schema`) into this map's source
    /// order, matching columns by name and categorical codes by label.
    pub fn align(&self, schema: &[CovariateColumn], x: &DMatrix<f64>) -> Result<DMatrix<f64>, DataError> {
        let mut out = DMatrix::zeros(x.nrows(), self.schema.len());
        for (c, col) in self.schema.iter().enumerate() {
            let src = schema
                .iter()
                .position(|s| s.name == col.name)
                .ok_or_else(|| DataError::Schema(format!("covariate '{}' is missing", col.name)))?;
            if schema[src].kind != col.kind {
                return Err(DataError::Schema(format!("covariate '{}' changed kind", col.name)));
            }
            for i in 0..x.nrows() {
                out[(i, c)] = match col.kind {
                    ColumnKind::Continuous => x[(i, src)],
                    ColumnKind::Categorical => {
                        let label = schema[src].label(check_code(&schema[src], i, x[(i, src)])?);
                        let code = if col.levels.is_empty() {
                            label.parse::<u32>().ok()
                        } else {
                            col.levels.iter().position(|l| *l == label).map(|p| p as u32)
                        };
                        code.ok_or(DataError::UnseenLevel {
                            column: col.name.clone(),
                            level: label,
                        })? as f64
                    }
                };
            }
        }
        Ok(out)
    }

    /// Encode another dataset's covariates with this map.
    pub fn encode_dataset(&self, data: &FunctionalDataset) -> Result<DMatrix<f64>, DataError> {
        self.encode(&self.align(&data.schema, &data.x)?)
    }

    /// Invert the encoding of one row back to source-column values.
    pub fn decode_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.schema.len()];
        for (k, e) in self.columns.iter().enumerate() {
            match e.role {
                ColumnRole::Identity => out[e.source] = row[k],
                ColumnRole::Indicator { code } => {
                    if row[k] == 1.0 {
                        out[e.source] = code as f64;
                    }
                }
            }
        }
        out
    }

    /// Sum per-encoded-column values into their source columns.
    pub fn aggregate_to_sources(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.schema.len()];
        for (e, v) in self.columns.iter().zip(values) {
            out[e.source] += v;
        }
        out
    }

    pub fn column_name(&self, k: usize) -> String {
        let e = self.columns[k];
        let col = &self.schema[e.source];
        match e.role {
            ColumnRole::Identity => col.name.clone(),
            ColumnRole::Indicator { code } => format!("{}={}", col.name, col.label(code)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> FunctionalDataset {
        FunctionalDataset {
            grid: GridDomain::unit_square(2),
            z: DMatrix::from_fn(n, 4, |i, j| (i * 4 + j) as f64),
            x: DMatrix::from_fn(n, 1, |i, _| i as f64),
            schema: vec![CovariateColumn::continuous("x1")],
            truth: None,
        }
    }

    #[test]
    fn consistent_dataset_is_accepted_unchanged() {
        let d = small(2);
        let v = validate_dataset(d.clone()).unwrap();
        assert_eq!(v, d);
    }

    #[test]
    fn nan_is_reported_with_location() {
        let mut d = small(2);
        d.z[(1, 2)] = f64::NAN;
        match validate_dataset(d) {
            Err(DataError::NonFinite { matrix, row, col }) => {
                assert_eq!((matrix, row, col), ("z", 1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn row_count_mismatch_is_rejected() {
        let mut d = small(2);
        d.x = DMatrix::zeros(3, 1);
        assert!(matches!(
            validate_dataset(d),
            Err(DataError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_points_are_rejected() {
        let err = GridDomain::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]).unwrap_err();
        assert!(matches!(
            err,
            DataError::DuplicatePoint {
                first: 0,
                second: 2,
                ..
            }
        ));
    }

    #[test]
    fn grid_is_normalized_to_row_major_with_columns_following() {
        let mut d = small(1);
        // reverse the grid and the columns together
        let pts: Vec<[f64; 2]> = d.grid.points().iter().rev().copied().collect();
        d.grid = GridDomain::new(pts).unwrap();
        d.z = DMatrix::from_row_slice(1, 4, &[3.0, 2.0, 1.0, 0.0]);
        let v = validate_dataset(d).unwrap();
        assert_eq!(v.grid, GridDomain::unit_square(2));
        assert_eq!(v.z.as_slice(), &[0.0, 1.0, 2.0, 3.0]);
        let again = validate_dataset(v.clone()).unwrap();
        assert_eq!(again, v);
    }

    #[test]
    fn mixed_columns_expand_to_indicators() {
        let mut d = small(3);
        d.x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 2.0, 3.0, 1.0]);
        d.schema = vec![
            CovariateColumn::continuous("x1"),
            CovariateColumn::categorical("pos", vec![]),
        ];
        let enc = encode_covariates(&d).unwrap();
        assert_eq!(enc.x.ncols(), 4);
    }

    #[test]
    fn labelled_levels_follow_first_appearance() {
        let mut d = small(2);
        // codes: C -> 1, PG -> 0 in the label table, appearing as C then PG
        d.x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 0.0]);
        d.schema = vec![
            CovariateColumn::continuous("x1"),
            CovariateColumn::categorical("pos", vec!["PG".into(), "C".into()]),
        ];
        let enc = encode_covariates(&d).unwrap();
        assert_eq!(enc.x.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 0.0]);
        assert_eq!(enc.x.row(1).iter().copied().collect::<Vec<_>>(), vec![2.0, 0.0, 1.0]);
        assert_eq!(enc.encoding.column_name(1), "pos=C");
    }

    #[test]
    fn all_continuous_is_identity() {
        let mut d = small(3);
        d.x = DMatrix::from_fn(3, 2, |i, j| (i as f64) * 0.5 - j as f64);
        d.schema = vec![CovariateColumn::continuous("a"), CovariateColumn::continuous("b")];
        let enc = encode_covariates(&d).unwrap();
        assert_eq!(enc.x, d.x);
    }

    #[test]
    fn unseen_level_names_the_label() {
        let mut d = small(2);
        d.x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        d.schema = vec![CovariateColumn::categorical(
            "pos",
            vec!["C".into(), "PF".into(), "SG".into()],
        )];
        let enc = encode_covariates(&d).unwrap();
        let err = enc
            .encoding
            .encode(&DMatrix::from_row_slice(1, 1, &[2.0]))
            .unwrap_err();
        assert!(err.to_string().contains("SG"), "{err}");
    }

    #[test]
    fn single_level_gives_constant_indicator() {
        let mut d = small(3);
        d.x = DMatrix::from_element(3, 1, 4.0);
        d.schema = vec![CovariateColumn::categorical("team", vec![])];
        let enc = encode_covariates(&d).unwrap();
        assert_eq!(enc.x, DMatrix::from_element(3, 1, 1.0));
    }
}
