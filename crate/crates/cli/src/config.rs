use std::path::Path;

use faf_core::model::ModelConfig;
use faf_core::tasks::{GraspConfig, PushScenario};
use faf_core::training::TrainConfig;
use faf_core::{FafError, Result};
use serde::Deserialize;

/// Contents of `--config`; every table is optional.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub push: PushScenario,
    pub grasp: GraspConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| FafError::Config(format!("{}: {e}", path.display())))
    }
}
