//! Dataset and fit directories on disk.
//!
//! Dataset: `points.csv` (s1,s2), `z.csv` (n x M, no header), `x.csv` (header
//! row of covariate names), `meta.json`, and `xi.csv` for test sets.
//! Fit: `config.json`, `points.csv`, `basis.csv`, `encoding.json`,
//! `draws.jsonl`, `diagnostics.json`, optionally `penalty.csv`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisSystem};
use crate::config::{ConfigError, ModelConfig};
use crate::data::{validate_dataset, ColumnKind, CovariateColumn, CovariateEncoding, DataError, FunctionalDataset, GridDomain};
use crate::sampler::{ChainDiagnostics, FitResult, SamplerState};
use crate::tree::Ensemble;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    fn csv(path: &Path, source: csv::Error) -> Self {
        IoError::Csv { path: path.to_path_buf(), source }
    }

    fn json(path: &Path, source: serde_json::Error) -> Self {
        IoError::Json { path: path.to_path_buf(), source }
    }

    fn format(path: &Path, msg: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), msg: msg.into() }
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|e| IoError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| IoError::json(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| IoError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| IoError::json(path, e))
}

/// Write a numeric matrix, optionally under a header row.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    if let Some(h) = header {
        w.write_record(h).map_err(|e| IoError::csv(path, e))?;
    }
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| fmt_f64(*v))).map_err(|e| IoError::csv(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

fn read_records(path: &Path, has_header: bool) -> Result<(Vec<String>, Vec<csv::StringRecord>), IoError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IoError::csv(path, e))?;
    let header = if has_header {
        r.headers().map_err(|e| IoError::csv(path, e))?.iter().map(str::to_string).collect()
    } else {
        Vec::new()
    };
    let rows = r.records().collect::<Result<Vec<_>, _>>().map_err(|e| IoError::csv(path, e))?;
    Ok((header, rows))
}

fn parse_cell(path: &Path, row: usize, col: usize, s: &str) -> Result<f64, IoError> {
    s.parse()
        .map_err(|_| IoError::format(path, format!("row {}, column {}: '{s}' is not a number", row + 1, col + 1)))
}

/// Read a numeric matrix; returns the header (empty when `has_header` is false).
pub fn read_matrix_csv(path: &Path, has_header: bool) -> Result<(Vec<String>, DMatrix<f64>), IoError> {
    let (header, rows) = read_records(path, has_header)?;
    let ncols = rows.first().map_or(header.len(), |r| r.len());
    let mut values = Vec::with_capacity(rows.len() * ncols);
    for (i, rec) in rows.iter().enumerate() {
        if rec.len() != ncols {
            return Err(IoError::format(path, format!("row {} has {} fields, expected {ncols}", i + 1, rec.len())));
        }
        for (j, s) in rec.iter().enumerate() {
            values.push(parse_cell(path, i, j, s)?);
        }
    }
    Ok((header, DMatrix::from_row_slice(rows.len(), ncols, &values)))
}

/// Contents of a dataset's `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    /// Category labels per covariate; empty for continuous columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<Vec<String>>,
    /// Number of surfaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// File holding the true mean surfaces, relative to the dataset directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<String>,
    /// Free-form provenance, e.g. the simulation settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

impl DatasetMeta {
    fn schema(&self, path: &Path) -> Result<Vec<CovariateColumn>, IoError> {
        if self.names.len() != self.kinds.len() {
            return Err(IoError::format(
                path,
                format!("{} names but {} kinds", self.names.len(), self.kinds.len()),
            ));
        }
        if !self.levels.is_empty() && self.levels.len() != self.names.len() {
            return Err(IoError::format(path, "levels must list one array per covariate"));
        }
        Ok(self
            .names
            .iter()
            .zip(&self.kinds)
            .enumerate()
            .map(|(k, (name, kind))| CovariateColumn {
                name: name.clone(),
                kind: *kind,
                levels: self.levels.get(k).cloned().unwrap_or_default(),
            })
            .collect())
    }
}

pub fn write_points(path: &Path, grid: &GridDomain) -> Result<(), IoError> {
    let pts = DMatrix::from_fn(grid.len(), 2, |m, c| grid.point(m)[c]);
    write_matrix_csv(path, &pts, Some(&["s1".to_string(), "s2".to_string()]))
}

pub fn read_points(path: &Path) -> Result<GridDomain, IoError> {
    let (header, pts) = read_matrix_csv(path, true)?;
    if header != ["s1", "s2"] {
        return Err(IoError::format(path, format!("expected header s1,s2, found {}", header.join(","))));
    }
    Ok(GridDomain::new(pts.row_iter().map(|r| [r[0], r[1]]).collect())?)
}

/// Write `data` into `dir`; `generator` is stored verbatim in `meta.json`.
pub fn write_dataset(dir: &Path, data: &FunctionalDataset, generator: Option<serde_json::Value>) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    write_points(&dir.join("points.csv"), &data.grid)?;
    write_matrix_csv(&dir.join("z.csv"), &data.z, None)?;

    let x_path = dir.join("x.csv");
    let mut w = csv::Writer::from_writer(create(&x_path)?);
    w.write_record(data.schema.iter().map(|c| c.name.as_str()))
        .map_err(|e| IoError::csv(&x_path, e))?;
    for row in data.x.row_iter() {
        let cells = data.schema.iter().zip(row.iter()).map(|(col, v)| match col.kind {
            ColumnKind::Continuous => fmt_f64(*v),
            ColumnKind::Categorical => col.label(*v as u32),
        });
        w.write_record(cells).map_err(|e| IoError::csv(&x_path, e))?;
    }
    w.flush().map_err(|e| IoError::io(&x_path, e))?;

    if let Some(truth) = &data.truth {
        write_matrix_csv(&dir.join("xi.csv"), truth, None)?;
    }
    let levels = if data.schema.iter().any(|c| !c.levels.is_empty()) {
        data.schema.iter().map(|c| c.levels.clone()).collect()
    } else {
        Vec::new()
    };
    let meta = DatasetMeta {
        names: data.schema.iter().map(|c| c.name.clone()).collect(),
        kinds: data.schema.iter().map(|c| c.kind).collect(),
        levels,
        n: Some(data.n()),
        xi: data.truth.as_ref().map(|_| "xi.csv".to_string()),
        generator,
    };
    write_json(&dir.join("meta.json"), &meta)
}

/// Read and validate a dataset directory. Categorical cells may hold either an
/// integer code or one of the declared level labels; labels not declared in
/// `meta.json` are appended to the level list in order of first appearance.
pub fn read_dataset(dir: &Path) -> Result<FunctionalDataset, IoError> {
    if !dir.is_dir() {
        return Err(IoError::format(dir, "dataset directory not found"));
    }
    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta = read_json(&meta_path)?;
    let mut schema = meta.schema(&meta_path)?;
    let grid = read_points(&dir.join("points.csv"))?;
    let (_, z) = read_matrix_csv(&dir.join("z.csv"), false)?;

    let x_path = dir.join("x.csv");
    let (header, rows) = read_records(&x_path, true)?;
    if header != meta.names {
        return Err(IoError::format(
            &x_path,
            format!("header {:?} does not match meta.json names {:?}", header, meta.names),
        ));
    }
    let p = schema.len();
    let mut x = DMatrix::zeros(rows.len(), p);
    for (i, rec) in rows.iter().enumerate() {
        if rec.len() != p {
            return Err(IoError::format(&x_path, format!("row {} has {} fields, expected {p}", i + 1, rec.len())));
        }
        for (k, cell) in rec.iter().enumerate() {
            x[(i, k)] = match schema[k].kind {
                ColumnKind::Continuous => parse_cell(&x_path, i, k, cell)?,
                ColumnKind::Categorical => {
                    let levels = &mut schema[k].levels;
                    match levels.iter().position(|l| l == cell) {
                        Some(code) => code as f64,
                        None if levels.is_empty() => parse_cell(&x_path, i, k, cell)?,
                        None => {
                            levels.push(cell.to_string());
                            (levels.len() - 1) as f64
                        }
                    }
                }
            };
        }
    }

    let truth = match &meta.xi {
        Some(name) => Some(read_matrix_csv(&dir.join(name), false)?.1),
        None => None,
    };
    let z = if z.nrows() == 0 { DMatrix::zeros(0, grid.len()) } else { z };
    Ok(validate_dataset(FunctionalDataset { grid, z, x, schema, truth })?)
}

/// Read a covariate CSV (header of names) into the column order of `schema`.
/// Extra columns are ignored; categorical cells are labels from the schema's
/// levels, or integer codes when the schema has none.
pub fn read_covariates(path: &Path, schema: &[CovariateColumn]) -> Result<DMatrix<f64>, IoError> {
    let (header, rows) = read_records(path, true)?;
    let mut x = DMatrix::zeros(rows.len(), schema.len());
    for (c, col) in schema.iter().enumerate() {
        let k = header
            .iter()
            .position(|h| *h == col.name)
            .ok_or_else(|| IoError::format(path, format!("missing covariate column '{}'", col.name)))?;
        for (i, rec) in rows.iter().enumerate() {
            let cell = rec
                .get(k)
                .ok_or_else(|| IoError::format(path, format!("row {} is too short", i + 1)))?;
            x[(i, c)] = match (col.kind, col.levels.iter().position(|l| l == cell)) {
                (ColumnKind::Categorical, Some(code)) => code as f64,
                (ColumnKind::Categorical, None) if !col.levels.is_empty() => {
                    return Err(DataError::UnseenLevel {
                        column: col.name.clone(),
                        level: cell.to_string(),
                    }
                    .into())
                }
                _ => parse_cell(path, i, k, cell)?,
            };
        }
    }
    Ok(x)
}

/// One retained draw as stored in `draws.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    /// `Psi` (K x J) in row-major order.
    pub psi: Vec<f64>,
    pub sigma2: f64,
    pub lambda: Vec<f64>,
    pub trees: Ensemble,
}

impl DrawRecord {
    pub fn from_state(s: &SamplerState) -> Self {
        Self {
            psi: s.psi.transpose().as_slice().to_vec(),
            sigma2: s.sigma2,
            lambda: s.lambda.clone(),
            trees: s.ensemble.clone(),
        }
    }

    pub fn into_state(self, k: usize, j: usize) -> Option<SamplerState> {
        if self.psi.len() != k * j || self.lambda.len() != j {
            return None;
        }
        Some(SamplerState {
            psi: DMatrix::from_row_slice(k, j, &self.psi),
            ensemble: self.trees,
            sigma2: self.sigma2,
            lambda: self.lambda,
        })
    }
}

/// Chain diagnostics plus the explicit orthonormality check over retained draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    #[serde(flatten)]
    pub chain: ChainDiagnostics,
    pub max_draw_orthonormality_error: f64,
}

/// Maximum tolerated `|B_file - B_rebuilt|` when loading a fit.
const BASIS_TOLERANCE: f64 = 1e-9;

pub fn write_fit(dir: &Path, fit: &FitResult, export_penalty: bool) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    write_json(&dir.join("config.json"), &fit.config)?;
    write_points(&dir.join("points.csv"), &fit.grid)?;
    write_matrix_csv(&dir.join("basis.csv"), &fit.basis.b, None)?;
    if export_penalty {
        write_matrix_csv(&dir.join("penalty.csv"), &fit.basis.penalty, None)?;
    }
    write_json(&dir.join("encoding.json"), &fit.encoding)?;
    write_json(
        &dir.join("diagnostics.json"),
        &FitDiagnostics {
            chain: fit.diagnostics.clone(),
            max_draw_orthonormality_error: fit.max_draw_orthonormality_error,
        },
    )?;
    let path = dir.join("draws.jsonl");
    let mut w = create(&path)?;
    for d in &fit.draws {
        serde_json::to_writer(&mut w, &DrawRecord::from_state(d)).map_err(|e| IoError::json(&path, e))?;
        w.write_all(b"\n").map_err(|e| IoError::io(&path, e))?;
    }
    w.flush().map_err(|e| IoError::io(&path, e))
}

/// Load a fit directory. The basis is rebuilt from the grid and `K` and checked
/// against `basis.csv`, which guards against mismatched or edited files.
pub fn read_fit(dir: &Path) -> Result<FitResult, IoError> {
    if !dir.is_dir() {
        return Err(IoError::format(dir, "fit directory not found"));
    }
    let config: ModelConfig = read_json(&dir.join("config.json"))?;
    config.validate()?;
    let grid = read_points(&dir.join("points.csv"))?;
    let basis = BasisSystem::build(&grid, config.n_tps)?;
    let basis_path = dir.join("basis.csv");
    let (_, stored) = read_matrix_csv(&basis_path, false)?;
    if stored.shape() != basis.b.shape() || (&stored - &basis.b).amax() > BASIS_TOLERANCE {
        return Err(IoError::format(&basis_path, "basis does not match the one rebuilt from points.csv and K"));
    }
    let encoding: CovariateEncoding = read_json(&dir.join("encoding.json"))?;
    let diagnostics: FitDiagnostics = read_json(&dir.join("diagnostics.json"))?;

    let path = dir.join("draws.jsonl");
    let file = File::open(&path).map_err(|e| IoError::io(&path, e))?;
    let mut draws = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DrawRecord = serde_json::from_str(&line).map_err(|e| IoError::json(&path, e))?;
        let state = rec
            .into_state(config.n_tps, config.n_basis)
            .ok_or_else(|| IoError::format(&path, format!("line {}: Psi or lambda has the wrong size", i + 1)))?;
        draws.push(state);
    }
    if draws.is_empty() {
        return Err(IoError::format(&path, "no draws"));
    }
    Ok(FitResult {
        config,
        grid,
        basis,
        encoding,
        draws,
        diagnostics: diagnostics.chain,
        max_draw_orthonormality_error: diagnostics.max_draw_orthonormality_error,
    })
}
