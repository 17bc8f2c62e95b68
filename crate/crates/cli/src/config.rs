//! Settings file. A flag given on the command line wins over the file,
//! which wins over built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tof_core::oracle::BackendConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FileConfig {
    pub method: Option<String>,
    pub weighted: Option<bool>,
    pub seed: Option<u64>,
    pub name: Option<String>,
    pub relaxed: Option<bool>,
    pub classifier: Option<String>,
    pub speaker: Option<String>,
    pub threshold: Option<f64>,
    pub coherence: Option<String>,
    pub coherence_threshold: Option<f64>,
    pub count: Option<usize>,
    pub max_len: Option<usize>,
    pub revisit: Option<usize>,
    pub cap: Option<usize>,
    pub repeat: Option<usize>,
    pub tracking: Option<bool>,
    pub description: Option<String>,
    pub lexicons: Option<PathBuf>,
    pub max_in_flight: Option<usize>,
    pub backend: Option<BackendConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// `flag`, else `file`, else `default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
