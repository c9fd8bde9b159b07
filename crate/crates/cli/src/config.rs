use std::path::{Path, PathBuf};

use bcgnn::{MissSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

/// A training run as checked into an experiment folder.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Generates the training mask when no mask file is given.
    pub missingness: Option<MissSpec>,
    pub paths: Paths,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(bcgnn::Error::from)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid run configuration {}: {e}", path.display())))
    }
}
