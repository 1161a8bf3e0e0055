//! Run configuration file: training, filtering and explanation settings plus
//! optional input paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sessrec::corpus::{FilterConfig, DEFAULT_SPLIT_RATIOS};
use sessrec::explain::ExplainConfig;
use sessrec::trainer::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub explain: ExplainConfig,
    pub filter: FilterConfig,
    pub split_ratios: [u32; 3],
    /// Used when `--sessions` is not given.
    pub sessions: Option<PathBuf>,
    /// Used when `--items` is not given.
    pub items: Option<PathBuf>,
    /// JSON Lines token vectors; hashed encoder when absent.
    pub encoder_file: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            explain: ExplainConfig::default(),
            filter: FilterConfig::default(),
            split_ratios: DEFAULT_SPLIT_RATIOS,
            sessions: None,
            items: None,
            encoder_file: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.explain.validate().map_err(CliError::Usage)?;
        if self.split_ratios.iter().all(|&r| r == 0) {
            return Err(CliError::Usage("split_ratios must not all be zero".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"train": {"dim": 16}, "explain": {"sim_threshold": 0.5}}"#).unwrap();
        assert_eq!(c.train.dim, 16);
        assert_eq!(c.train.lambda, 0.01);
        assert_eq!(c.explain.sim_threshold, 0.5);
        assert_eq!(c.explain.count_threshold, 10);
        assert_eq!(c.split_ratios, [7, 2, 1]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"dimm": 3}}"#).is_err());
    }

    #[test]
    fn readme_block_is_the_default() {
        let readme = include_str!("../../../README.md");
        let start = readme.find("```json\n").expect("json block") + 8;
        let len = readme[start..].find("```").unwrap();
        let documented: RunConfig = serde_json::from_str(&readme[start..start + len]).unwrap();
        assert_eq!(documented, RunConfig::default());
    }

    #[test]
    fn round_trips() {
        let c = RunConfig::default();
        assert_eq!(serde_json::from_str::<RunConfig>(&c.to_json()).unwrap(), c);
    }
}
