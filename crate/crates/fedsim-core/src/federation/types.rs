//! Shared protocol types: payload taxonomy, per-client state, round
//! hyperparameters, and the method roster.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::ModelParams;

/// Everything a client is ever allowed to put on the wire. Raw features and
/// per-example labels have no representation here, which is the privacy
/// boundary: payload construction goes through this taxonomy or not at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    /// Full parameter vector (extractor + predictor).
    FullModel,
    /// Predictor head only.
    PredictorOnly,
    /// Per-example, per-class logits over a shared proxy set.
    LogitMatrix,
    /// Per-class label counts (no per-example information).
    LabelHistogram,
}

impl PayloadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::FullModel => "full_model",
            PayloadKind::PredictorOnly => "predictor_only",
            PayloadKind::LogitMatrix => "logit_matrix",
            PayloadKind::LabelHistogram => "label_histogram",
        }
    }
}

/// The five training regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Centralized,
    Standalone,
    FedAvg,
    FedKD,
    FedKDF,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Centralized,
        Method::Standalone,
        Method::FedAvg,
        Method::FedKD,
        Method::FedKDF,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Centralized => "centralized",
            Method::Standalone => "standalone",
            Method::FedAvg => "fedavg",
            Method::FedKD => "fedkd",
            Method::FedKDF => "fedkdf",
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        match name.to_ascii_lowercase().as_str() {
            "centralized" => Ok(Method::Centralized),
            "standalone" => Ok(Method::Standalone),
            "fedavg" => Ok(Method::FedAvg),
            "fedkd" => Ok(Method::FedKD),
            "fedkdf" => Ok(Method::FedKDF),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One client's world: identity, private shard, and its current local model.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// Private data; never serialized, never placed in a payload.
    pub data: Dataset,
    pub model: ModelParams,
}

impl ClientState {
    pub fn num_examples(&self) -> usize {
        self.data.len()
    }
}

/// Hyperparameters for every phase of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundConfig {
    pub total_rounds: usize,
    pub local_epochs: usize,
    pub local_batch: usize,
    pub local_lr: f64,
    /// Server-side distillation / fine-tune step count (may be 0).
    pub server_steps: usize,
    pub server_batch: usize,
    pub server_lr: f64,
    /// Generator training step count per round (may be 0).
    pub generator_steps: usize,
    pub generator_lr: f64,
    /// Client-side steps toward downloaded logits (may be 0).
    pub client_distill_steps: usize,
    pub client_distill_lr: f64,
    /// Weight uploaded predictors uniformly instead of by sample count.
    pub uniform_predictor_weighting: bool,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            total_rounds: 12,
            local_epochs: 1,
            local_batch: 32,
            local_lr: 0.05,
            server_steps: 40,
            server_batch: 64,
            server_lr: 0.05,
            generator_steps: 100,
            generator_lr: 0.1,
            client_distill_steps: 5,
            client_distill_lr: 0.05,
            uniform_predictor_weighting: false,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_rounds == 0 || self.local_epochs == 0 {
            return Err(Error::invalid("rounds and local epochs must be positive"));
        }
        if self.local_batch == 0 || self.server_batch == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        for (name, lr) in [
            ("local_lr", self.local_lr),
            ("server_lr", self.server_lr),
            ("generator_lr", self.generator_lr),
            ("client_distill_lr", self.client_distill_lr),
        ] {
            if lr <= 0.0 || !lr.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }
}
