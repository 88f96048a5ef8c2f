use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid model configuration: {0}")]
    Invalid(String),
}

/// Which basis the chain uses for the functional response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Adaptive basis `F = B Psi`, sampled with the orthonormality constraint.
    #[serde(rename = "afbart")]
    Adaptive,
    /// Fixed basis: the first `J` orthonormal thin-plate columns.
    #[serde(rename = "fbart-tps")]
    FixedTps,
    /// Fixed basis: the first `J` functional principal components, projected onto `B`.
    #[serde(rename = "fbart-fpc")]
    FixedFpc,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Adaptive => "afbart",
            Mode::FixedTps => "fbart-tps",
            Mode::FixedFpc => "fbart-fpc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "afbart" => Some(Mode::Adaptive),
            "fbart-tps" => Some(Mode::FixedTps),
            "fbart-fpc" => Some(Mode::FixedFpc),
            _ => None,
        }
    }

    pub fn adapts_basis(self) -> bool {
        self == Mode::Adaptive
    }
}

/// Model and chain settings. JSON keys follow the model notation
/// (`T`, `J`, `K`, ...); every key is optional and falls back to the default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "T")]
    pub n_trees: usize,
    #[serde(rename = "J")]
    pub n_basis: usize,
    #[serde(rename = "K")]
    pub n_tps: usize,
    pub n_mcmc: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub a: f64,
    pub gamma: f64,
    pub nu: f64,
    pub sigma_quantile: f64,
    pub k_shrink: f64,
    pub mode: Mode,
    pub seed: u64,
    pub n_cutpoints: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            n_basis: 20,
            n_tps: 70,
            n_mcmc: 2000,
            burn_in: 1600,
            thin: 1,
            a: 0.95,
            gamma: 0.5,
            nu: 3.0,
            sigma_quantile: 0.9,
            k_shrink: 2.0,
            mode: Mode::Adaptive,
            seed: 1,
            n_cutpoints: 100,
        }
    }
}

impl ModelConfig {
    /// Long chain used for real shot-chart data: 48000 iterations, 40000 burn-in, thinning 20.
    pub fn real_data() -> Self {
        Self {
            n_mcmc: 48_000,
            burn_in: 40_000,
            thin: 20,
            ..Self::default()
        }
    }

    /// Simulation settings: `J = 5`, `K = 40`, 2000 iterations keeping the last 400.
    pub fn simulation() -> Self {
        Self {
            n_basis: 5,
            n_tps: 40,
            ..Self::default()
        }
    }

    pub fn retained_draws(&self) -> usize {
        (self.n_mcmc - self.burn_in) / self.thin
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if self.n_trees < 1 {
            return fail("T must be at least 1".into());
        }
        if self.n_basis < 1 || self.n_basis > self.n_tps {
            return fail(format!("need 1 <= J <= K, got J={} K={}", self.n_basis, self.n_tps));
        }
        if self.n_tps < 5 {
            return fail(format!("K must be at least 5 (3 polynomial terms + 2 knots), got {}", self.n_tps));
        }
        if !(self.a > 0.0 && self.a <= 1.0) {
            return fail(format!("a must lie in (0, 1], got {}", self.a));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.nu >= 1.0) {
            return fail(format!("nu must be at least 1, got {}", self.nu));
        }
        if !(self.sigma_quantile > 0.0 && self.sigma_quantile < 1.0) {
            return fail(format!("sigma_quantile must lie in (0, 1), got {}", self.sigma_quantile));
        }
        if !(self.k_shrink > 0.0) {
            return fail(format!("k_shrink must be positive, got {}", self.k_shrink));
        }
        if self.thin < 1 {
            return fail("thin must be at least 1".into());
        }
        if self.burn_in >= self.n_mcmc {
            return fail(format!(
                "burn_in ({}) must be smaller than n_mcmc ({})",
                self.burn_in, self.n_mcmc
            ));
        }
        if self.n_cutpoints < 1 {
            return fail("n_cutpoints must be at least 1".into());
        }
        Ok(())
    }

    /// Checks that depend on the data: `K <= M` and `J <= min(n, M)`.
    pub fn validate_for(&self, n: usize, m: usize) -> Result<(), ConfigError> {
        self.validate()?;
        if self.n_tps > m {
            return Err(ConfigError::Invalid(format!(
                "K={} exceeds the number of grid points M={m}",
                self.n_tps
            )));
        }
        if self.n_basis > n {
            return Err(ConfigError::Invalid(format!(
                "J={} functional principal components cannot be extracted from n={n} surfaces \
                 (the FPC rank is at most n); lower J",
                self.n_basis
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::real_data().validate().unwrap();
        assert_eq!(ModelConfig::default().retained_draws(), 400);
        assert_eq!(ModelConfig::real_data().retained_draws(), 400);
    }

    #[test]
    fn retained_draw_count_floors() {
        let c = ModelConfig {
            n_mcmc: 10,
            burn_in: 5,
            thin: 2,
            ..ModelConfig::default()
        };
        assert_eq!(c.retained_draws(), 2);
    }

    #[test]
    fn json_keys_and_partial_override() {
        let c: ModelConfig = serde_json::from_str(r#"{"T": 10, "J": 5, "mode": "fbart-fpc"}"#).unwrap();
        assert_eq!(c.n_trees, 10);
        assert_eq!(c.n_basis, 5);
        assert_eq!(c.n_tps, 70);
        assert_eq!(c.mode, Mode::FixedFpc);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"trees": 3}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for c in [
            ModelConfig { a: 0.0, ..ModelConfig::default() },
            ModelConfig { gamma: 1.0, ..ModelConfig::default() },
            ModelConfig { burn_in: 2000, ..ModelConfig::default() },
            ModelConfig { n_basis: 80, ..ModelConfig::default() },
            ModelConfig { thin: 0, ..ModelConfig::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(ModelConfig::default().validate_for(10, 500).is_err());
        assert!(ModelConfig::default().validate_for(100, 50).is_err());
    }
}
