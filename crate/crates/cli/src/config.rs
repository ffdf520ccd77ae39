use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use poisson_chaos::rgg::RadiusRule;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Verify,
    Bounds,
    Besov,
    Rgg,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::Verify => "verify",
            Command::Bounds => "bounds",
            Command::Besov => "besov",
            Command::Rgg => "rgg",
        };
        f.write_str(s)
    }
}

/// Everything one run needs. Fields missing from the file take defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub reps: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub quick: bool,
    #[serde(default)]
    pub bounds: BoundsParams,
    #[serde(default)]
    pub besov: BesovParams,
    #[serde(default)]
    pub rgg: RggParams,
}

fn default_seed() -> u64 {
    20_240_601
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: None,
            seed: default_seed(),
            reps: None,
            output_dir: default_output_dir(),
            quick: false,
            bounds: BoundsParams::default(),
            besov: BesovParams::default(),
            rgg: RggParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// `S' = I`.
    Identity,
    /// `S' = S`, so only the moment terms remain.
    Covariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsParams {
    /// Kernel JSON files, one per chaos order. Empty means a random fixture.
    pub kernels: Vec<PathBuf>,
    pub orders: Vec<usize>,
    pub atoms: usize,
    pub k_dim: usize,
    pub target: Target,
}

impl Default for BoundsParams {
    fn default() -> Self {
        Self { kernels: Vec::new(), orders: vec![1, 2], atoms: 4, k_dim: 2, target: Target::Identity }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BesovParams {
    pub beta: f64,
    pub lambdas: Vec<f64>,
    pub n_time: usize,
    pub n_jump: usize,
    /// Resolution of the triple-integral quadrature and of the HS check.
    pub rate_n: usize,
    /// Intensity for the smooth-distance estimate; omit to skip it.
    pub smooth_lambda: Option<f64>,
    pub dictionary: usize,
}

impl Default for BesovParams {
    fn default() -> Self {
        Self {
            beta: 0.25,
            lambdas: vec![1e1, 1e2, 1e3, 1e4],
            n_time: 64,
            n_jump: 256,
            rate_n: 512,
            smooth_lambda: Some(100.0),
            dictionary: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RggParams {
    pub d: usize,
    pub half_width: f64,
    pub radius: RadiusRule,
    pub time_grid: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub mc_lambda: f64,
    pub cells_per_radius: usize,
}

impl Default for RggParams {
    fn default() -> Self {
        Self {
            d: 1,
            half_width: 1.0,
            radius: RadiusRule::LambdaPsi { target: 1.0 },
            time_grid: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            lambdas: (4..=10).map(|e| 2f64.powi(e)).collect(),
            mc_lambda: 64.0,
            cells_per_radius: 4,
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        // kernel paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        for k in &mut cfg.bounds.kernels {
            if k.is_relative() {
                *k = base.join(&*k);
            }
        }
        Ok(cfg)
    }

    pub fn reps(&self) -> usize {
        self.reps.unwrap_or(if self.quick { 10_000 } else { 100_000 })
    }

    /// Checks everything that can be checked without running an experiment.
    pub fn validate(&self) -> Result<Command, ConfigError> {
        let bad = |m: &str| Err(ConfigError(m.to_string()));
        let command = match self.command {
            Some(c) => c,
            None => return bad("no command given (verify, bounds, besov or rgg)"),
        };
        if self.reps() < 2 {
            return bad("reps must be at least 2");
        }
        if self.output_dir.exists() && !self.output_dir.is_dir() {
            return Err(ConfigError(format!("{} is not a directory", self.output_dir.display())));
        }
        match command {
            Command::Bounds => self.bounds.validate()?,
            Command::Besov => self.besov.validate()?,
            Command::Rgg => self.rgg.validate()?,
            Command::Verify => {}
        }
        Ok(command)
    }
}

impl BoundsParams {
    fn validate(&self) -> Result<(), ConfigError> {
        if self.kernels.is_empty() {
            if self.orders.is_empty() || self.orders.iter().any(|&q| q == 0 || q > 4) {
                return Err(ConfigError("bounds.orders must be non-empty with entries in 1..=4".into()));
            }
            let mut sorted = self.orders.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != self.orders.len() {
                return Err(ConfigError("bounds.orders has duplicates".into()));
            }
            if self.atoms == 0 || self.atoms > 32 || self.k_dim == 0 || self.k_dim > 16 {
                return Err(ConfigError("bounds.atoms must be in 1..=32 and bounds.k_dim in 1..=16".into()));
            }
        } else {
            for k in &self.kernels {
                if !k.is_file() {
                    return Err(ConfigError(format!("kernel file {} not found", k.display())));
                }
            }
        }
        Ok(())
    }
}

impl BesovParams {
    fn validate(&self) -> Result<(), ConfigError> {
        poisson_chaos::besov::FracParams::new(self.beta, 1.0).map_err(|e| ConfigError(format!("besov: {e}")))?;
        if self.lambdas.len() < 2 || self.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(ConfigError("besov.lambdas needs at least two positive values".into()));
        }
        if self.n_time == 0 || self.n_jump == 0 || self.rate_n == 0 {
            return Err(ConfigError("besov grid sizes must be positive".into()));
        }
        if let Some(l) = self.smooth_lambda {
            if !(l > 0.0 && l.is_finite()) || self.dictionary == 0 {
                return Err(ConfigError("besov.smooth_lambda and besov.dictionary must be positive".into()));
            }
        }
        Ok(())
    }
}

impl RggParams {
    pub fn config(&self, lambda: f64) -> Result<poisson_chaos::rgg::RggConfig, ConfigError> {
        poisson_chaos::rgg::RggConfig::new(self.d, lambda, self.half_width, self.radius, self.time_grid.clone())
            .map_err(|e| ConfigError(format!("rgg: {e}")))
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.lambdas.len() < 2 {
            return Err(ConfigError("rgg.lambdas needs at least two values".into()));
        }
        for &l in self.lambdas.iter().chain([&self.mc_lambda]) {
            self.config(l)?;
        }
        if self.cells_per_radius == 0 {
            return Err(ConfigError("rgg.cells_per_radius must be positive".into()));
        }
        if self.d == 2 {
            return Err(ConfigError("rgg sweeps use band kernels and need d = 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig { command: Some(Command::Rgg), ..Default::default() };
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("command = \"verify\"\nsede = 3\n").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[besov]\nbeta = 0.2\nlamda = [1.0]\n").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[rgg]\nradius = { rule = \"constant\", radius = 0.1, x = 1 }\n").is_err());
    }

    #[test]
    fn radius_rules_parse() {
        let cfg: ExperimentConfig =
            toml::from_str("[rgg]\nradius = { rule = \"power\", c = 0.5, gamma = 1.5 }\n").unwrap();
        assert_eq!(cfg.rgg.radius, RadiusRule::Power { c: 0.5, gamma: 1.5 });
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_err());
        cfg.command = Some(Command::Besov);
        assert!(cfg.validate().is_ok());
        cfg.besov.beta = 0.7;
        assert!(cfg.validate().is_err());
        cfg.besov.beta = 0.25;
        cfg.reps = Some(1);
        assert!(cfg.validate().is_err());
    }
}
