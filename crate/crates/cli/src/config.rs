use std::fmt;
use std::path::{Path, PathBuf};

use comhe::harness::{DatasetConfig, Regularizer, TrainConfig};
use comhe::minimizer::MinimizeConfig;
use comhe::theorylab::Sampling;
use serde::{Deserialize, Serialize};

/// Problems with the configuration itself (exit status 2).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

/// Whole experiment description. Every section is optional; flags given on
/// the command line override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// If set, must name the subcommand being run.
    pub command: Option<String>,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub minimize: MinimizeSection,
    pub train: TrainSection,
    pub theory: TheorySection,
    pub bilateral: BilateralSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: None,
            seed: 0,
            out: PathBuf::from("out"),
            threads: 1,
            minimize: MinimizeSection::default(),
            train: TrainSection::default(),
            theory: TheorySection::default(),
            bilateral: BilateralSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError::new(format!("{}: {}", path.display(), e.0)))
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::new(e.to_string()))
    }
}

/// Points on a sphere and the optimizer. The optimizer seed is replaced by the
/// top-level seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeSection {
    pub n: usize,
    pub dim: usize,
    pub s: f64,
    pub normalized: bool,
    /// Independent starts with seeds `seed, seed + 1, ...`.
    pub restarts: usize,
    pub optimizer: MinimizeConfig,
}

impl Default for MinimizeSection {
    fn default() -> Self {
        Self {
            n: 4,
            dim: 3,
            s: 1.0,
            normalized: false,
            restarts: 1,
            optimizer: MinimizeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `TrainConfig::energy_dynamics`.
    #[default]
    EnergyDynamics,
    /// `TrainConfig::default`.
    Library,
}

/// Training arms. `params` holds `TrainConfig` keys applied on top of the
/// preset; the regularizer and seeds come from `arms` and `seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub arms: Vec<Regularizer>,
    /// Also run rotation training.
    pub rotation: bool,
    pub hidden: Vec<usize>,
    /// Number of seeds, `seed, seed + 1, ...`.
    pub seeds: usize,
    pub preset: Preset,
    pub dataset: DatasetConfig,
    pub params: toml::Table,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            arms: vec![Regularizer::None, Regularizer::HsMhe, Regularizer::Rp],
            rotation: false,
            hidden: vec![64, 64, 64],
            seeds: 5,
            preset: Preset::EnergyDynamics,
            dataset: DatasetConfig::default(),
            params: toml::Table::new(),
        }
    }
}

impl TrainSection {
    /// Preset, then `params`, then `overrides`.
    pub fn train_config(
        &self,
        overrides: &toml::Table,
        seed: u64,
    ) -> Result<TrainConfig, ConfigError> {
        for key in ["regularizer", "seeds"] {
            if self.params.contains_key(key) || overrides.contains_key(key) {
                return Err(ConfigError::new(format!(
                    "train.params.{key} is not allowed; use train.arms and train.seeds"
                )));
            }
        }
        if self.seeds == 0 {
            return Err(ConfigError::new("train.seeds must be positive"));
        }
        let base = match self.preset {
            Preset::EnergyDynamics => TrainConfig::energy_dynamics(Regularizer::None),
            Preset::Library => TrainConfig::default(),
        };
        let mut table =
            toml::Table::try_from(&base).map_err(|e| ConfigError::new(e.to_string()))?;
        table.extend(self.params.clone());
        table.extend(overrides.clone());
        let mut cfg: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::new(format!("train.params: {e}")))?;
        cfg.seeds = (seed..seed + self.seeds as u64).collect();
        cfg.validate()
            .map_err(|e| ConfigError::new(format!("train.params: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Check {
    Theorem1,
    Theorem2,
    Jll,
    Lemma1,
    Orthogonality,
    Tightness,
    #[default]
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub which: Check,
    pub d: usize,
    pub k: usize,
    pub eps: f64,
    pub angle: f64,
    pub trials: usize,
    pub sampling: Sampling,
    /// Grid for the tightness comparison.
    pub tightness_eps: Vec<f64>,
    pub tightness_angles: Vec<f64>,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            which: Check::All,
            d: 1000,
            k: 800,
            eps: 0.3,
            angle: 60.0,
            trials: 10_000,
            sampling: Sampling::Reduced,
            tightness_eps: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            tightness_angles: (1..=17).map(|i| 5.0 * i as f64).collect(),
        }
    }
}

/// Low-rank reconstruction demo: a rank-`rank` weight matrix with `m`-dim
/// neurons and `n` neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BilateralSection {
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub s: f64,
}

impl Default for BilateralSection {
    fn default() -> Self {
        Self {
            m: 32,
            n: 48,
            rank: 6,
            s: 2.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(
            ExperimentConfig::parse("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse("[minimize]\nnn = 3\n").unwrap_err();
        assert!(err.0.contains("nn"), "{}", err.0);
        assert!(ExperimentConfig::parse("[train.params]\nepochz = 3\n")
            .unwrap()
            .train
            .train_config(&toml::Table::new(), 0)
            .is_err());
    }

    #[test]
    fn params_override_the_preset() {
        let cfg =
            ExperimentConfig::parse("seed = 7\n[train]\nseeds = 2\n[train.params]\nepochs = 3\n")
                .unwrap();
        let tc = cfg
            .train
            .train_config(&toml::Table::new(), cfg.seed)
            .unwrap();
        assert_eq!(tc.epochs, 3);
        assert_eq!(tc.seeds, vec![7, 8]);
        assert_eq!(
            tc.reg_weight,
            TrainConfig::energy_dynamics(Regularizer::None).reg_weight
        );
        let mut flags = toml::Table::new();
        flags.insert("epochs".into(), toml::Value::Integer(4));
        assert_eq!(cfg.train.train_config(&flags, 0).unwrap().epochs, 4);
    }

    #[test]
    fn regularizer_belongs_in_arms() {
        let cfg = ExperimentConfig::parse("[train.params]\nregularizer = \"rp\"\n").unwrap();
        assert!(cfg.train.train_config(&toml::Table::new(), 0).is_err());
    }
}
