//! Replicated simulation benchmarks and k-fold cross-validation.

use std::path::Path;

use afbart::config::{Mode, ModelConfig};
use afbart::data::FunctionalDataset;
use afbart::sampler::fit;
use afbart::simgen::{generate, SimCase, SimSpec};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::eval::{evaluate, Evaluation};

/// Methods in a fixed order; the position feeds chain-seed derivation.
pub const ALL_METHODS: [Mode; 3] = [Mode::Adaptive, Mode::FixedTps, Mode::FixedFpc];

/// Replicates per setting must stay below this so dataset seeds never overlap.
const SEED_STRIDE: u64 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub settings: Vec<(SimCase, f64)>,
    pub replicates: usize,
    pub methods: Vec<Mode>,
    pub config: ModelConfig,
    pub base_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub grid: usize,
    pub noise_covariates: usize,
}

impl BenchmarkSpec {
    /// Desk scale: 100 training and 200 test surfaces on a 15 x 15 grid.
    pub fn desk(settings: Vec<(SimCase, f64)>, replicates: usize, methods: Vec<Mode>) -> Self {
        Self {
            settings,
            replicates,
            methods,
            config: ModelConfig::simulation(),
            base_seed: 1,
            n_train: 100,
            n_test: 200,
            grid: 15,
            noise_covariates: 0,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: &str| Err(CliError::Validation(m.into()));
        if self.replicates < 1 {
            return fail("replicates must be at least 1");
        }
        if self.replicates as u64 >= SEED_STRIDE {
            return fail("replicates must be below 10000");
        }
        if self.methods.is_empty() {
            return fail("at least one method is required");
        }
        if self.settings.is_empty() {
            return fail("at least one (case, sigma) setting is required");
        }
        self.config.validate()?;
        Ok(())
    }

    pub fn sim_spec(&self, setting: usize, replicate: usize) -> SimSpec {
        let (case, sigma) = self.settings[setting];
        SimSpec {
            n_train: self.n_train,
            n_test: self.n_test,
            grid: self.grid,
            noise_covariates: self.noise_covariates,
            ..SimSpec::new(case, sigma, self.data_seed(setting, replicate))
        }
    }

    /// Dataset seed, shared by every method on the same replicate.
    pub fn data_seed(&self, setting: usize, replicate: usize) -> u64 {
        self.base_seed
            .wrapping_add(SEED_STRIDE.wrapping_mul(setting as u64))
            .wrapping_add(replicate as u64)
    }
}

/// Chain seed for one (dataset, method) cell; distinct across cells.
pub fn chain_seed(data_seed: u64, method: Mode) -> u64 {
    let k = ALL_METHODS.iter().position(|m| *m == method).unwrap_or(0) as u64;
    data_seed.wrapping_mul(8).wrapping_add(1 + k)
}

/// One line of the long-format table. Failed cells carry `error` and empty scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub setting: String,
    pub method: String,
    pub replicate: usize,
    pub data_seed: u64,
    pub chain_seed: u64,
    pub rmspe: Option<f64>,
    pub mis: Option<f64>,
    pub mcrps: Option<f64>,
    pub coverage: Option<f64>,
    pub error: Option<String>,
}

impl BenchRow {
    fn new(setting: String, method: Mode, replicate: usize, data_seed: u64, result: Result<Evaluation, CliError>) -> Self {
        let (scores, error) = match result {
            Ok(e) => (Some(e), None),
            Err(e) => {
                log::warn!("{setting} {} replicate {replicate} failed: {e}", method.name());
                (None, Some(e.to_string()))
            }
        };
        Self {
            setting,
            method: method.name().to_string(),
            replicate,
            data_seed,
            chain_seed: chain_seed(data_seed, method),
            rmspe: scores.as_ref().map(|s| s.rmspe),
            mis: scores.as_ref().map(|s| s.mis),
            mcrps: scores.as_ref().map(|s| s.mcrps),
            coverage: scores.as_ref().map(|s| s.coverage),
            error,
        }
    }
}

pub fn setting_label(case: SimCase, sigma: f64) -> String {
    format!("case{}-sigma{sigma}", u8::from(case))
}

fn fit_and_score(train: &FunctionalDataset, test: &FunctionalDataset, truth: &nalgebra::DMatrix<f64>, config: &ModelConfig) -> Result<Evaluation, CliError> {
    let result = fit(train, config)?;
    evaluate(&result, test, truth, 0.05)
}

/// Run every (setting, replicate, method) cell; rows come back in that order.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<Vec<BenchRow>, CliError> {
    spec.validate()?;
    let cells: Vec<(usize, usize, Mode)> = (0..spec.settings.len())
        .flat_map(|s| (0..spec.replicates).flat_map(move |r| spec.methods.iter().map(move |m| (s, r, *m))))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(s, r, method)| {
            let (case, sigma) = spec.settings[s];
            let sim = spec.sim_spec(s, r);
            let config = ModelConfig {
                mode: method,
                seed: chain_seed(sim.seed, method),
                ..spec.config.clone()
            };
            let result = generate(&sim).map_err(CliError::from).and_then(|data| {
                let truth = data.test.truth.as_ref().expect("simulated test sets carry truth");
                fit_and_score(&data.train, &data.test, truth, &config)
            });
            log::info!("{} {} replicate {r} done", setting_label(case, sigma), method.name());
            BenchRow::new(setting_label(case, sigma), method, r, sim.seed, result)
        })
        .collect())
}

/// `k`-fold cross-validation on observed surfaces: held-out `z` plays the role of truth.
pub fn run_cv(data: &FunctionalDataset, k: usize, methods: &[Mode], config: &ModelConfig, seed: u64) -> Result<Vec<BenchRow>, CliError> {
    if k < 2 || k > data.n() {
        return Err(CliError::Validation(format!("--cv needs 2 <= k <= n, got k={k} with n={}", data.n())));
    }
    if methods.is_empty() {
        return Err(CliError::Validation("at least one method is required".into()));
    }
    config.validate()?;
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds: Vec<Vec<usize>> = (0..k)
        .map(|f| {
            let mut idx: Vec<usize> = order.iter().skip(f).step_by(k).copied().collect();
            idx.sort_unstable();
            idx
        })
        .collect();
    let cells: Vec<(usize, Mode)> = (0..k).flat_map(|f| methods.iter().map(move |m| (f, *m))).collect();
    Ok(cells
        .par_iter()
        .map(|&(f, method)| {
            let held = &folds[f];
            let train_idx: Vec<usize> = (0..data.n()).filter(|i| held.binary_search(i).is_err()).collect();
            let fold_seed = seed.wrapping_add(f as u64);
            let config = ModelConfig {
                mode: method,
                seed: chain_seed(fold_seed, method),
                ..config.clone()
            };
            let test = data.subset(held);
            let result = fit_and_score(&data.subset(&train_idx), &test, &test.z, &config);
            BenchRow::new(format!("cv{k}"), method, f, fold_seed, result)
        })
        .collect())
}

/// Per (setting, method) means over the successful rows, in first-seen order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub setting: String,
    pub method: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub rmspe: f64,
    pub mis: f64,
    pub mcrps: f64,
    pub coverage: f64,
}

pub fn aggregate(rows: &[BenchRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.setting.clone(), r.method.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(setting, method)| {
            let group: Vec<&BenchRow> = rows.iter().filter(|r| r.setting == setting && r.method == method).collect();
            let ok: Vec<&&BenchRow> = group.iter().filter(|r| r.error.is_none()).collect();
            let mean = |f: fn(&BenchRow) -> Option<f64>| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().filter_map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            Aggregate {
                n_ok: ok.len(),
                n_failed: group.len() - ok.len(),
                rmspe: mean(|r| r.rmspe),
                mis: mean(|r| r.mis),
                mcrps: mean(|r| r.mcrps),
                coverage: mean(|r| r.coverage),
                setting,
                method,
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(afbart::io::fmt_f64).unwrap_or_default()
}

pub fn write_tables(dir: &Path, rows: &[BenchRow]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Runtime(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let mut w = csv::Writer::from_path(dir.join("long.csv")).map_err(io)?;
    w.write_record(["setting", "method", "replicate", "data_seed", "chain_seed", "rmspe", "mis", "mcrps", "coverage", "error"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            r.setting.clone(),
            r.method.clone(),
            r.replicate.to_string(),
            r.data_seed.to_string(),
            r.chain_seed.to_string(),
            opt(r.rmspe),
            opt(r.mis),
            opt(r.mcrps),
            opt(r.coverage),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut w = csv::Writer::from_path(dir.join("aggregate.csv")).map_err(io)?;
    w.write_record(["setting", "method", "n_ok", "n_failed", "rmspe", "mis", "mcrps", "coverage"])
        .map_err(io)?;
    for a in aggregate(rows) {
        w.write_record([
            a.setting,
            a.method,
            a.n_ok.to_string(),
            a.n_failed.to_string(),
            afbart::io::fmt_f64(a.rmspe),
            afbart::io::fmt_f64(a.mis),
            afbart::io::fmt_f64(a.mcrps),
            afbart::io::fmt_f64(a.coverage),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

/// Build the global rayon pool, capped by `AFBART_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("AFBART_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Validation(format!("AFBART_THREADS must be a positive integer, got '{v}'")))?;
    // a second call finds the pool already built; keeping the first cap is fine
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn row(setting: &str, method: &str, rmspe: Option<f64>) -> BenchRow {
        BenchRow {
            setting: setting.into(),
            method: method.into(),
            replicate: 0,
            data_seed: 0,
            chain_seed: 0,
            rmspe,
            mis: rmspe,
            mcrps: rmspe,
            coverage: rmspe,
            error: rmspe.is_none().then(|| "boom".to_string()),
        }
    }

    #[test]
    fn seeds_are_disjoint_across_cells() {
        let spec = BenchmarkSpec {
            base_seed: 17,
            ..BenchmarkSpec::desk(vec![(SimCase::One, 0.1), (SimCase::Two, 0.1), (SimCase::One, 0.01)], 50, ALL_METHODS.to_vec())
        };
        let mut data = HashSet::new();
        let mut chains = HashSet::new();
        for s in 0..3 {
            for r in 0..50 {
                assert!(data.insert(spec.data_seed(s, r)));
                for m in ALL_METHODS {
                    assert!(chains.insert(chain_seed(spec.data_seed(s, r), m)));
                }
            }
        }
    }

    #[test]
    fn aggregate_is_the_mean_of_successful_rows() {
        let rows = vec![
            row("a", "afbart", Some(1.0)),
            row("a", "afbart", Some(2.0)),
            row("a", "afbart", None),
            row("a", "fbart-tps", Some(4.0)),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!((agg[0].n_ok, agg[0].n_failed, agg[0].rmspe), (2, 1, 1.5));
        assert_eq!(agg[1].rmspe, 4.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let ok = BenchmarkSpec::desk(vec![(SimCase::One, 0.1)], 1, vec![Mode::Adaptive]);
        ok.validate().unwrap();
        assert!(BenchmarkSpec { replicates: 0, ..ok.clone() }.validate().is_err());
        assert!(BenchmarkSpec { methods: vec![], ..ok.clone() }.validate().is_err());
        assert!(BenchmarkSpec { settings: vec![], ..ok }.validate().is_err());
    }

    #[test]
    fn one_cell_gives_one_row() {
        let spec = BenchmarkSpec {
            n_train: 12,
            n_test: 4,
            grid: 5,
            config: ModelConfig {
                n_trees: 3,
                n_basis: 2,
                n_tps: 8,
                n_mcmc: 6,
                burn_in: 3,
                ..ModelConfig::default()
            },
            ..BenchmarkSpec::desk(vec![(SimCase::One, 0.1)], 1, vec![Mode::FixedTps])
        };
        let rows = run_benchmark(&spec).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].error.is_none(), "{:?}", rows[0].error);
        assert_eq!(rows[0].setting, "case1-sigma0.1");
    }
}
