//! Run configuration files. Every section is optional; omitted fields take
//! their defaults.

use std::path::Path;

use hsg_core::baselines::UnknownLabelPolicy;
use hsg_core::metrics::Averaging;
use hsg_core::model::ModelConfig;
use hsg_core::scene::STRUCTURAL_LABELS;
use hsg_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Used when no separate test directory is given.
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Object labels dropped on load.
    pub exclude_labels: Vec<String>,
    pub alpha: f64,
    pub unknown_labels: UnknownLabelPolicy,
    pub region_averaging: Averaging,
    /// Optional external label embeddings file.
    pub external_embeddings: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            train_fraction: 0.8,
            split_seed: 0,
            exclude_labels: STRUCTURAL_LABELS.iter().map(|s| s.to_string()).collect(),
            alpha: 0.8,
            unknown_labels: UnknownLabelPolicy::Error,
            region_averaging: Averaging::Micro,
            external_embeddings: None,
        }
    }
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&error::read_string(path)?).map_err(|e| Error::parse(path, e))
}

pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), load_json)
}
