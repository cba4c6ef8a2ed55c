use alloc::format;

use serde::{Deserialize, Serialize};

use crate::losses::ContrastiveConfig;
use crate::models::ModalityMode;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    #[serde(rename = "partialfl")]
    PartialFl,
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedprox")]
    FedProx,
    Centralized,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::PartialFl => "partialfl",
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
            Algorithm::Centralized => "centralized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Plain mean over the round's participants.
    #[default]
    Uniform,
    /// Mean weighted by shard size.
    SizeWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub algorithm: Algorithm,
    pub clients: usize,
    pub sample_rate: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    #[serde(rename = "lr")]
    pub learning_rate: f64,
    #[serde(rename = "tau")]
    pub temperature: f64,
    pub beta: f64,
    #[serde(rename = "mu")]
    pub prox_weight: f64,
    /// Add the proximal term to PartialFL's global-model training as well.
    pub prox: bool,
    pub aggregation: Aggregation,
    pub modality: ModalityMode,
    pub inter_modal_negatives: bool,
    pub normalize_embeddings: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::PartialFl,
            clients: 200,
            sample_rate: 0.1,
            rounds: 200,
            local_epochs: 1,
            batch_size: 16,
            learning_rate: 5e-4,
            temperature: 0.1,
            beta: 0.01,
            prox_weight: 0.01,
            prox: false,
            aggregation: Aggregation::Uniform,
            modality: ModalityMode::UniModal,
            inter_modal_negatives: false,
            normalize_embeddings: false,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("clients", "need at least one client"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::config("sample_rate", "must be in (0, 1]"));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.algorithm == Algorithm::PartialFl && self.batch_size < 2 {
            return Err(Error::config(
                "batch_size",
                format!("contrastive losses need batches of at least 2, got {}", self.batch_size),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::config("lr", "must be finite and >= 0"));
        }
        if !self.prox_weight.is_finite() || self.prox_weight < 0.0 {
            return Err(Error::config("mu", "must be finite and >= 0"));
        }
        self.contrastive().validate()
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            temperature: self.temperature,
            beta: self.beta,
            inter_modal_negatives: self.inter_modal_negatives,
            normalize: self.normalize_embeddings,
        }
    }

    /// `floor(sample_rate * K)`, at least one. The small slack absorbs
    /// products such as `0.29 * 100` landing just below an integer.
    pub fn participants_per_round(&self) -> usize {
        let m = libm::floor(self.sample_rate * self.clients as f64 + 1e-9) as usize;
        m.clamp(1, self.clients.max(1))
    }

    /// Proximal weight applied to global-model training, if any.
    pub fn active_prox_weight(&self) -> Option<f64> {
        let on = match self.algorithm {
            Algorithm::FedProx => true,
            Algorithm::PartialFl => self.prox,
            Algorithm::FedAvg | Algorithm::Centralized => false,
        };
        (on && self.prox_weight > 0.0).then_some(self.prox_weight)
    }

    pub fn uses_shareable_alignment(&self) -> bool {
        self.algorithm == Algorithm::PartialFl
    }
}
