//! Self-describing experiment configuration. One TOML document carries every
//! knob, so a run can be reproduced from its manifest alone; the command-line
//! layer only ever overrides the seed and the output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PartitionSpec;
use crate::error::{Error, Result};
use crate::federation::{Experiment, Method, RoundConfig};
use crate::metrics::{BootstrapConfig, WirePrecision};
use crate::models::{ArchConfig, TaskMode};

/// Which methods run, under which seed, on which task shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Method names, run in the order given.
    pub methods: Vec<String>,
    pub seed: u64,
    pub task_mode: TaskMode,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            methods: Method::ALL.iter().map(|m| m.as_str().to_string()).collect(),
            seed: 42,
            task_mode: TaskMode::Multiclass,
        }
    }
}

/// Synthetic data shape and the non-iid partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub train_examples: usize,
    pub test_examples: usize,
    /// Size of the shared unlabeled proxy set (logit distillation only).
    pub proxy_examples: usize,
    /// Distance between class mean clusters, in noise standard deviations.
    pub class_separation: f64,
    pub num_clients: usize,
    /// Dirichlet concentration; smaller is more skewed.
    pub alpha: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            num_classes: 8,
            feature_dim: 32,
            train_examples: 3000,
            test_examples: 1000,
            proxy_examples: 200,
            class_separation: 2.5,
            num_clients: 3,
            alpha: 0.3,
        }
    }
}

/// Network widths for extractor, predictor head, and generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub extractor_hidden: Vec<usize>,
    pub predictor_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            latent_dim: 16,
            noise_dim: 8,
            extractor_hidden: vec![64, 64],
            predictor_hidden: vec![],
            generator_hidden: vec![64],
        }
    }
}

/// Bootstrap settings for the per-class AUC confidence intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub bootstrap_resamples: usize,
    pub bootstrap_level: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            bootstrap_resamples: 200,
            bootstrap_level: 0.95,
        }
    }
}

/// Artifact toggles; everything lands under the chosen output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub per_round_csv: bool,
    pub ledger_csv: bool,
    /// Write model/generator binary checkpoints after every round.
    pub checkpoints: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            per_round_csv: true,
            ledger_csv: true,
            checkpoints: false,
        }
    }
}

/// The whole experiment, as written in (and re-serialized to) TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub rounds: RoundConfig,
    pub evaluation: EvaluationSection,
    pub wire: WirePrecision,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Canonical rendering, used for the run manifest.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(format!("config render: {e}")))
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.experiment
            .methods
            .iter()
            .map(|name| Method::parse(name))
            .collect()
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            feature_dim: self.data.feature_dim,
            latent_dim: self.model.latent_dim,
            num_classes: self.data.num_classes,
            noise_dim: self.model.noise_dim,
            extractor_hidden: self.model.extractor_hidden.clone(),
            predictor_hidden: self.model.predictor_hidden.clone(),
            generator_hidden: self.model.generator_hidden.clone(),
        }
    }

    pub fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig {
            resamples: self.evaluation.bootstrap_resamples,
            level: self.evaluation.bootstrap_level,
        }
    }

    pub fn partition_spec(&self, seed: u64) -> PartitionSpec {
        PartitionSpec {
            num_clients: self.data.num_clients,
            alpha: self.data.alpha,
            seed,
        }
    }

    /// Assemble the runnable experiment for a (possibly overridden) seed.
    pub fn experiment_for(&self, seed: u64) -> Experiment {
        Experiment {
            arch: self.arch(),
            mode: self.experiment.task_mode,
            rounds: self.rounds.clone(),
            boot: self.bootstrap(),
            wire: self.wire,
            seed,
        }
    }

    /// Full cross-field validation; every diagnostic names the field.
    pub fn validate(&self) -> Result<()> {
        if self.experiment.methods.is_empty() {
            return Err(Error::invalid("experiment.methods must not be empty"));
        }
        let methods = self.methods()?;
        if self.data.train_examples == 0 || self.data.test_examples == 0 {
            return Err(Error::invalid(
                "data.train_examples and data.test_examples must be positive",
            ));
        }
        if methods.contains(&Method::FedKD) && self.data.proxy_examples == 0 {
            return Err(Error::invalid(
                "data.proxy_examples must be positive when fedkd is listed",
            ));
        }
        if self.data.num_clients == 0 {
            return Err(Error::invalid("data.num_clients must be positive"));
        }
        if self.data.alpha <= 0.0 || !self.data.alpha.is_finite() {
            return Err(Error::invalid("data.alpha must be positive and finite"));
        }
        if !self.data.class_separation.is_finite() || self.data.class_separation < 0.0 {
            return Err(Error::invalid(
                "data.class_separation must be finite and non-negative",
            ));
        }
        if self.data.num_clients > self.data.train_examples {
            return Err(Error::invalid(
                "data.num_clients must not exceed data.train_examples",
            ));
        }
        self.arch().validate()?;
        self.rounds.validate()?;
        self.bootstrap().validate()?;
        self.wire.validate()?;
        Ok(())
    }
}
