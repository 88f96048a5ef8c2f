//! End-to-end behaviour of a fitted chain on small simulated data.

use afbart::config::{Mode, ModelConfig};
use afbart::metrics::rmspe;
use afbart::sampler::{fit, predict_summary};
use afbart::simgen::{generate, SimCase, SimSpec};

fn small_spec(seed: u64) -> SimSpec {
    let mut spec = SimSpec::new(SimCase::One, 0.1, seed);
    spec.n_train = 60;
    spec.n_test = 10;
    spec.grid = 8;
    // a truth outside the span of the fitted basis would be absorbed by sigma^2
    spec.k_true = 20;
    spec
}

fn small_config(mode: Mode, seed: u64) -> ModelConfig {
    ModelConfig {
        n_trees: 10,
        n_basis: 5,
        n_tps: 20,
        n_mcmc: 300,
        burn_in: 200,
        mode,
        seed,
        ..ModelConfig::simulation()
    }
}

#[test]
fn same_seed_gives_identical_draws() {
    let sim = generate(&small_spec(3)).unwrap();
    let a = fit(&sim.train, &small_config(Mode::Adaptive, 9)).unwrap();
    let b = fit(&sim.train, &small_config(Mode::Adaptive, 9)).unwrap();
    assert_eq!(a.draws, b.draws);
    let c = fit(&sim.train, &small_config(Mode::Adaptive, 10)).unwrap();
    assert_ne!(a.draws, c.draws);
}

#[test]
fn adaptive_basis_stays_orthonormal() {
    let sim = generate(&small_spec(4)).unwrap();
    let result = fit(&sim.train, &small_config(Mode::Adaptive, 2)).unwrap();
    assert_eq!(result.draws.len(), 100);
    assert!(result.diagnostics.max_orthonormality_error <= 1e-8);
    assert!(result.diagnostics.max_rescale_drift <= 1e-10);
    assert!(result.max_draw_orthonormality_error <= 1e-8);
    let first = &result.draws[0].psi;
    assert!(result.draws.iter().any(|d| d.psi != *first), "psi never moved");
}

#[test]
fn fixed_modes_keep_the_initial_basis() {
    let sim = generate(&small_spec(5)).unwrap();
    for mode in [Mode::FixedTps, Mode::FixedFpc] {
        let result = fit(&sim.train, &small_config(mode, 1)).unwrap();
        let first = &result.draws[0];
        for d in &result.draws {
            assert_eq!(d.psi, first.psi);
            assert_eq!(d.lambda, first.lambda);
        }
    }
}

#[test]
fn noise_variance_is_recovered() {
    let sim = generate(&small_spec(6)).unwrap();
    let result = fit(&sim.train, &small_config(Mode::Adaptive, 5)).unwrap();
    let mut s: Vec<f64> = result.draws.iter().map(|d| d.sigma2).collect();
    s.sort_by(f64::total_cmp);
    let median = s[s.len() / 2];
    let truth = 0.1f64 * 0.1;
    assert!(median >= 0.5 * truth && median <= 2.0 * truth, "median sigma^2 {median}");
}

#[test]
fn noiseless_factor_data_is_fit_in_sample() {
    let sim = generate(&SimSpec::new(SimCase::One, 0.0, 12)).unwrap();
    let config = ModelConfig {
        seed: 12,
        ..ModelConfig::simulation()
    };
    let result = fit(&sim.train, &config).unwrap();
    let x = result.encoding.encode_dataset(&sim.train).unwrap();
    let mean = predict_summary(&result, &x).mean;
    let err = rmspe(&sim.train.z, &mean).unwrap();
    assert!(err <= 0.05, "in-sample RMSPE {err}");
}
