//! Experiment configuration: one flat TOML table.
//!
//! Every key is optional and defaults to the values below. Unknown keys are
//! rejected by name.
//!
//! ```toml
//! # training
//! alpha = 0.03
//! beta = 25.0
//! tau = 0.95
//! tau_prime = 0.975
//! kappa = 0.2
//! temperature = 0.05
//! t_prime = 0.85
//! lr = 0.001
//! epochs = 100
//! step_order = "joint"     # or "two_phase"
//! # data
//! rotation_deg = 35.0
//! shots = 3
//! # ablation switches
//! adbc = true
//! abc_negative = true
//! # run
//! seeds = [0, 1, 2]
//! output_dir = "runs"
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DomainSpec;
use crate::error::{Error, Result};
use crate::trainer::{AblationFlags, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(flatten)]
    pub domain: DomainSpec,
    #[serde(flatten)]
    pub flags: AblationFlags,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Load pools from a CSV dump instead of generating them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
    /// Seed for data generation; each training seed is used when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            domain: DomainSpec::default(),
            flags: AblationFlags::full(),
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs"),
            data_path: None,
            data_seed: None,
        }
    }
}

/// The per-run seed lives in `seeds`; `seed` alone is not a config key.
const RESERVED: &[&str] = &["seed"];
const OPTIONAL: &[&str] = &["data_path", "data_seed"];

fn known_keys() -> BTreeSet<String> {
    let table = toml::Table::try_from(ExperimentConfig::default()).expect("default config serializes");
    table
        .keys()
        .filter(|k| !RESERVED.contains(&k.as_str()))
        .cloned()
        .chain(OPTIONAL.iter().map(|k| k.to_string()))
        .collect()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
        let known = known_keys();
        if let Some(key) = table.keys().find(|k| !known.contains(*k)) {
            return Err(Error::config(key.as_str(), "unknown key"));
        }
        let mut config: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
        if let Some(&first) = config.seeds.first() {
            config.train.seed = first;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data_path.is_none() {
            self.domain.validate()?;
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        Ok(())
    }

    /// Training config for one seed.
    pub fn train_for_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    /// Resolved config as TOML, with every key spelled out.
    pub fn to_toml_string(&self) -> Result<String> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::ConfigParse(e.to_string()))?;
        for k in RESERVED {
            table.remove(*k);
        }
        toml::to_string(&table).map_err(|e| Error::ConfigParse(e.to_string()))
    }
}

/// One check of a shipped default against its reference value.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheck {
    pub key: &'static str,
    pub expected: f64,
    pub actual: f64,
}

impl SelfCheck {
    pub fn passed(&self) -> bool {
        self.expected == self.actual
    }
}

/// Defaults that must equal reference values.
pub fn selftest() -> Vec<SelfCheck> {
    let t = ExperimentConfig::default().train;
    [
        ("alpha", 0.03, t.alpha),
        ("beta", 25.0, t.beta),
        ("tau", 0.95, t.tau),
        ("tau_prime", 0.975, t.tau_prime),
        ("kappa", 0.20, t.kappa),
        ("temperature", 0.05, t.temperature),
        ("t_prime", 0.85, t.t_prime),
        ("epochs", 100.0, t.epochs as f64),
        ("batch_source", 24.0, t.batch_source as f64),
        ("batch_labeled", 24.0, t.batch_labeled as f64),
        ("batch_pseudo", 24.0, t.batch_pseudo as f64),
        ("batch_unlabeled", 48.0, t.batch_unlabeled as f64),
    ]
    .into_iter()
    .map(|(key, expected, actual)| SelfCheck { key, expected, actual })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml_str("alpha = 0.1\nbetta = 3.0\n").unwrap_err();
        match err {
            Error::InvalidConfig { key, .. } => assert_eq!(key, "betta"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            ExperimentConfig::from_toml_str("seed = 4"),
            Err(Error::InvalidConfig { key, .. }) if key == "seed"
        ));
    }

    #[test]
    fn invalid_value_is_named() {
        let err = ExperimentConfig::from_toml_str("tau_prime = 0.5").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { key, .. } if key == "tau_prime"));
        let err = ExperimentConfig::from_toml_str("seeds = []").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { key, .. } if key == "seeds"));
        assert!(matches!(
            ExperimentConfig::from_toml_str("alpha = \"high\""),
            Err(Error::ConfigParse(_))
        ));
    }

    #[test]
    fn overrides_and_round_trip() {
        let text = "beta = 10\nrotation_deg = 50.0\nwdbc = false\nseeds = [7, 8]\nstep_order = \"two_phase\"\ndata_seed = 3\n";
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.train.beta, 10.0);
        assert_eq!(c.domain.rotation_deg, 50.0);
        assert!(!c.flags.wdbc);
        assert_eq!(c.seeds, vec![7, 8]);
        assert_eq!(c.data_seed, Some(3));
        assert_eq!(c.train_for_seed(8).seed, 8);
        let echoed = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&echoed).unwrap(), c);
    }

    #[test]
    fn selftest_passes_on_defaults() {
        for c in selftest() {
            assert!(c.passed(), "{c:?}");
        }
    }
}
