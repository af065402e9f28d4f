use std::path::Path;

use serde::{Deserialize, Serialize};
use sparsevox::detect::InferenceConfig;
use sparsevox::forensics::ForensicsConfig;
use sparsevox::losses::LossWeights;
use sparsevox::voxel::VoxelizerConfig;

use crate::error::{CliError, CliResult};

/// Settings loadable from `--config <file.json>`; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub voxelizer: VoxelizerConfig,
    pub inference: InferenceConfig,
    pub forensics: ForensicsConfig,
    pub loss: LossWeights,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?;
        cfg.voxelizer.validate()?;
        cfg.inference.validate()?;
        cfg.loss.validate()?;
        Ok(cfg)
    }
}
