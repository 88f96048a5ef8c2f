//! Subcommand definitions and handlers.

use std::fs;
use std::path::{Path, PathBuf};

use afbart::config::{Mode, ModelConfig};
use afbart::data::ColumnKind;
use afbart::io::{read_covariates, read_dataset, read_fit, read_json, write_dataset, write_fit, write_json, write_matrix_csv};
use afbart::sampler::{fit, predict_summary, variable_importance, FitResult};
use afbart::simgen::{generate, SimCase, SimSpec};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::bench::{init_threads, run_benchmark, run_cv, write_tables, BenchmarkSpec};
use crate::error::CliError;
use crate::eval::evaluate;
use crate::heatmap::{read_values, write_heatmap};

#[derive(Debug, Parser)]
#[command(name = "afbart", version, about = "Adaptive functional BART for gridded surfaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated train/test pair.
    Simulate(SimulateArgs),
    /// Run the sampler on a dataset directory.
    Fit(FitArgs),
    /// Posterior mean and interval surfaces for new covariate rows.
    Predict(PredictArgs),
    /// Score a fit against a test set with known mean surfaces.
    Evaluate(EvaluateArgs),
    /// Replicated simulation study, or k-fold cross-validation on a dataset.
    Benchmark(BenchmarkArgs),
    /// Posterior mean splitting proportions per covariate.
    Importance(ImportanceArgs),
    /// Write a surface as CSV and an 8-bit PGM raster.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation case: 1 (piecewise constant), 2 (smooth), 3 (rough bumps).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub case: u8,
    #[arg(long, default_value_t = 100)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    /// Grid resolution G; surfaces live on a G x G grid over the unit square.
    #[arg(long, default_value_t = 15)]
    pub grid: usize,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Extra uniform covariates that do not enter the mean.
    #[arg(long, default_value_t = 0)]
    pub noise_covariates: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model configuration JSON; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the penalty matrix as penalty.csv.
    #[arg(long)]
    pub export_basis: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub fit: PathBuf,
    /// Covariate CSV with a header row naming the fitted covariates.
    #[arg(long)]
    pub x: PathBuf,
    /// Predict one averaged row per level of this categorical covariate.
    #[arg(long)]
    pub average_by: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub fit: PathBuf,
    /// Test dataset directory; must provide xi.csv.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Directory receiving results.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Simulation cases, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub cases: Vec<u8>,
    /// Noise levels, comma separated; every case runs at every level.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub replicates: usize,
    #[arg(long, value_delimiter = ',', default_value = "afbart,fbart-tps")]
    pub methods: Vec<String>,
    /// Overrides on top of the simulation preset (J=5, K=40).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    #[arg(long, default_value_t = 15)]
    pub grid: usize,
    #[arg(long, default_value_t = 0)]
    pub noise_covariates: usize,
    /// Cross-validate on --data with this many folds instead of simulating.
    #[arg(long, requires = "data")]
    pub cv: Option<usize>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// Headerless CSV of surface values in row-major order.
    #[arg(long)]
    pub grid_values: PathBuf,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// Exponentiate first (log-intensity to intensity).
    #[arg(long)]
    pub exp: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Fit(a) => fit_cmd(&a),
        Command::Predict(a) => predict(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Benchmark(a) => benchmark(&a),
        Command::Importance(a) => importance(&a),
        Command::Heatmap(a) => write_heatmap(&read_values(&a.grid_values)?, a.rows, a.cols, a.exp, &a.out),
    }
}

fn runtime(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Refuse to write into a non-empty directory unless forced.
fn prepare_out(dir: &Path, force: bool, ours: &[&str]) -> Result<(), CliError> {
    let non_empty = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if non_empty && !force {
        return Err(CliError::Validation(format!(
            "{} exists and is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    for name in ours {
        let p = dir.join(name);
        if p.is_dir() {
            fs::remove_dir_all(&p).map_err(runtime(&p))?;
        }
    }
    fs::create_dir_all(dir).map_err(runtime(dir))
}

/// `base` overlaid with the keys present in the JSON file at `path`.
pub fn load_config(path: Option<&Path>, base: ModelConfig) -> Result<ModelConfig, CliError> {
    let Some(path) = path else {
        return Ok(base);
    };
    let overrides: serde_json::Value = read_json(path)?;
    let serde_json::Value::Object(overrides) = overrides else {
        return Err(CliError::Validation(format!("{}: config must be a JSON object", path.display())));
    };
    let mut merged = serde_json::to_value(&base).map_err(|e| CliError::Runtime(e.to_string()))?;
    merged
        .as_object_mut()
        .expect("ModelConfig serializes to an object")
        .extend(overrides);
    let config: ModelConfig =
        serde_json::from_value(merged).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let spec = SimSpec {
        n_train: a.n_train,
        n_test: a.n_test,
        grid: a.grid,
        noise_covariates: a.noise_covariates,
        ..SimSpec::new(SimCase::try_from(a.case).map_err(CliError::Validation)?, a.sigma, a.seed)
    };
    spec.validate()?;
    prepare_out(&a.out, a.force, &["train", "test"])?;
    let data = generate(&spec)?;
    let meta = serde_json::to_value(&data.meta).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_dataset(&a.out.join("train"), &data.train, Some(meta.clone()))?;
    write_dataset(&a.out.join("test"), &data.test, Some(meta))?;
    log::info!("wrote {} and {} surfaces to {}", spec.n_train, spec.n_test, a.out.display());
    Ok(())
}

fn fit_cmd(a: &FitArgs) -> Result<(), CliError> {
    let data = read_dataset(&a.data)?;
    let config = load_config(a.config.as_deref(), ModelConfig::default())?;
    prepare_out(&a.out, a.force, &[])?;
    let result = fit(&data, &config)?;
    log::info!(
        "{} draws kept; max |F^T F - I| = {:.2e}",
        result.draws.len(),
        result.max_draw_orthonormality_error
    );
    write_fit(&a.out, &result, a.export_basis)?;
    Ok(())
}

/// One row per level of `column`: continuous covariates averaged within the
/// level, other categorical covariates set to their most frequent code.
pub fn average_rows(x: &DMatrix<f64>, kinds: &[ColumnKind], column: usize) -> Vec<(u32, Vec<f64>)> {
    let mut levels: Vec<u32> = x.column(column).iter().map(|v| *v as u32).collect();
    levels.sort_unstable();
    levels.dedup();
    levels
        .into_iter()
        .map(|level| {
            let rows: Vec<usize> = (0..x.nrows()).filter(|&i| x[(i, column)] as u32 == level).collect();
            let values = (0..x.ncols())
                .map(|c| match kinds[c] {
                    _ if c == column => level as f64,
                    ColumnKind::Continuous => rows.iter().map(|&i| x[(i, c)]).sum::<f64>() / rows.len() as f64,
                    ColumnKind::Categorical => {
                        let mut codes: Vec<u32> = rows.iter().map(|&i| x[(i, c)] as u32).collect();
                        codes.sort_unstable();
                        let mut best = (codes[0], 0);
                        for chunk in codes.chunk_by(|p, q| p == q) {
                            if chunk.len() > best.1 {
                                best = (chunk[0], chunk.len());
                            }
                        }
                        best.0 as f64
                    }
                })
                .collect();
            (level, values)
        })
        .collect()
}

fn predict(a: &PredictArgs) -> Result<(), CliError> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Validation(format!("alpha must lie in (0, 1), got {}", a.alpha)));
    }
    let result = read_fit(&a.fit)?;
    let schema = &result.encoding.schema;
    let mut x = read_covariates(&a.x, schema)?;
    let mut labels: Vec<String> = (0..x.nrows()).map(|i| (i + 1).to_string()).collect();
    if let Some(name) = &a.average_by {
        let c = schema
            .iter()
            .position(|s| &s.name == name)
            .ok_or_else(|| CliError::Validation(format!("no covariate named '{name}'")))?;
        if schema[c].kind != ColumnKind::Categorical {
            return Err(CliError::Validation(format!("'{name}' is not categorical")));
        }
        let kinds: Vec<ColumnKind> = schema.iter().map(|s| s.kind).collect();
        let groups = average_rows(&x, &kinds, c);
        labels = groups.iter().map(|(level, _)| schema[c].label(*level)).collect();
        x = DMatrix::from_fn(groups.len(), schema.len(), |i, k| groups[i].1[k]);
    }
    let encoded = result.encoding.encode(&x)?;
    let summary = predict_summary_at(&result, &encoded, a.alpha);
    fs::create_dir_all(&a.out).map_err(runtime(&a.out))?;
    write_matrix_csv(&a.out.join("mean.csv"), &summary.mean, None)?;
    write_matrix_csv(&a.out.join("lower.csv"), &summary.lower, None)?;
    write_matrix_csv(&a.out.join("upper.csv"), &summary.upper, None)?;

    let mut header = vec!["row".to_string()];
    header.extend(schema.iter().map(|s| s.name.clone()));
    let path = a.out.join("rows.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_record(&header).map_err(|e| CliError::Runtime(e.to_string()))?;
    for (i, label) in labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(schema.iter().enumerate().map(|(k, s)| match s.kind {
            ColumnKind::Continuous => afbart::io::fmt_f64(x[(i, k)]),
            ColumnKind::Categorical => s.label(x[(i, k)] as u32),
        }));
        w.write_record(&rec).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(runtime(&path))
}

/// Posterior mean and central `1 - alpha` band from the retained draws.
fn predict_summary_at(result: &FitResult, x: &DMatrix<f64>, alpha: f64) -> afbart::sampler::PredictionSummary {
    if alpha == 0.05 {
        return predict_summary(result, x);
    }
    let m = result.grid.len();
    let mut s = afbart::sampler::PredictionSummary {
        mean: DMatrix::zeros(x.nrows(), m),
        lower: DMatrix::zeros(x.nrows(), m),
        upper: DMatrix::zeros(x.nrows(), m),
    };
    afbart::sampler::for_each_row_draws::<std::convert::Infallible>(result, x, |i, draws| {
        for c in 0..m {
            let mut v: Vec<f64> = draws.row(c).iter().copied().collect();
            s.mean[(i, c)] = v.iter().sum::<f64>() / v.len() as f64;
            v.sort_by(f64::total_cmp);
            s.lower[(i, c)] = afbart::metrics::quantile_sorted(&v, alpha / 2.0);
            s.upper[(i, c)] = afbart::metrics::quantile_sorted(&v, 1.0 - alpha / 2.0);
        }
        Ok(())
    })
    .expect("infallible");
    s
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<(), CliError> {
    let result = read_fit(&a.fit)?;
    let test = read_dataset(&a.test)?;
    let truth = test.truth.as_ref().ok_or_else(|| {
        CliError::Validation(format!(
            "{} has no xi.csv; RMSPE, MIS and MCRPS need the true mean surfaces",
            a.test.display()
        ))
    })?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Validation(format!("alpha must lie in (0, 1), got {}", a.alpha)));
    }
    let scores = evaluate(&result, &test, truth, a.alpha)?;
    fs::create_dir_all(&a.out).map_err(runtime(&a.out))?;
    write_json(&a.out.join("results.json"), &scores)?;
    println!(
        "rmspe={:.6} mis={:.6} mcrps={:.6} coverage={:.4}",
        scores.rmspe, scores.mis, scores.mcrps, scores.coverage
    );
    Ok(())
}

fn parse_methods(names: &[String]) -> Result<Vec<Mode>, CliError> {
    names
        .iter()
        .map(|n| Mode::parse(n).ok_or_else(|| CliError::Validation(format!("unknown method '{n}'"))))
        .collect()
}

fn benchmark(a: &BenchmarkArgs) -> Result<(), CliError> {
    init_threads()?;
    let methods = parse_methods(&a.methods)?;
    let rows = if let Some(k) = a.cv {
        let data = read_dataset(a.data.as_ref().expect("clap enforces --data with --cv"))?;
        let config = load_config(a.config.as_deref(), ModelConfig::default())?;
        run_cv(&data, k, &methods, &config, a.seed)?
    } else {
        let mut settings = Vec::new();
        for case in &a.cases {
            for sigma in &a.sigmas {
                settings.push((SimCase::try_from(*case).map_err(CliError::Validation)?, *sigma));
            }
        }
        let spec = BenchmarkSpec {
            config: load_config(a.config.as_deref(), ModelConfig::simulation())?,
            base_seed: a.seed,
            n_train: a.n_train,
            n_test: a.n_test,
            grid: a.grid,
            noise_covariates: a.noise_covariates,
            ..BenchmarkSpec::desk(settings, a.replicates, methods)
        };
        run_benchmark(&spec)?
    };
    write_tables(&a.out, &rows)?;
    for agg in crate::bench::aggregate(&rows) {
        println!(
            "{} {}: rmspe={:.4} mis={:.4} mcrps={:.4} coverage={:.3} ({} ok, {} failed)",
            agg.setting, agg.method, agg.rmspe, agg.mis, agg.mcrps, agg.coverage, agg.n_ok, agg.n_failed
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ImportanceEntry {
    covariate: String,
    proportion: f64,
}

fn importance(a: &ImportanceArgs) -> Result<(), CliError> {
    let result = read_fit(&a.fit)?;
    let imp = variable_importance(&result);
    let mut entries: Vec<ImportanceEntry> = result
        .encoding
        .schema
        .iter()
        .zip(&imp.by_source)
        .map(|(s, p)| ImportanceEntry {
            covariate: s.name.clone(),
            proportion: *p,
        })
        .collect();
    entries.sort_by(|x, y| y.proportion.total_cmp(&x.proportion));
    fs::create_dir_all(&a.out).map_err(runtime(&a.out))?;
    write_json(&a.out.join("importance.json"), &entries)?;
    let path = a.out.join("importance.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_record(["covariate", "proportion"]).map_err(|e| CliError::Runtime(e.to_string()))?;
    for e in &entries {
        w.write_record([e.covariate.clone(), afbart::io::fmt_f64(e.proportion)])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(runtime(&path))
}
