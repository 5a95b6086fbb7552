//! Run configuration files. A run directory's `config.json` is the full
//! resolved configuration: together with the seed and data paths it makes
//! the run reproducible.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use kghop_core::kge::KgeConfig;
use kghop_core::policy::PolicyConfig;
use kghop_core::trainer::TrainConfig;

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    pub train: PathBuf,
    #[serde(default)]
    pub valid: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Adjacency cap per entity; None disables truncation.
    #[serde(default = "default_max_out_degree")]
    pub max_out_degree: Option<usize>,
}

fn default_max_out_degree() -> Option<usize> {
    Some(200)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KgeRunConfig {
    pub data: DataConfig,
    pub precision: String,
    pub kge: KgeConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentRunConfig {
    pub data: DataConfig,
    /// Directory holding the pretrained score-model checkpoint.
    pub kge_checkpoint: PathBuf,
    pub precision: String,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
}
