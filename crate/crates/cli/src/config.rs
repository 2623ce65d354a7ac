//! Run configuration: one JSON document holding every tunable, with unknown
//! keys rejected. Command-line flags are applied on top and the effective
//! result is echoed next to the command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use echoseg::dataset::SplitRatios;
use echoseg::model::ModelConfig;
use echoseg::phantom::PhantomParams;
use echoseg::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const ECHO_FILE: &str = "run_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub phantom: PhantomParams,
    pub phantom_count: usize,
    pub phantom_seed: u64,
    pub splits: SplitRatios,
    pub eval_split: EvalSplit,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::toy(),
            phantom: PhantomParams::default(),
            phantom_count: 100,
            phantom_seed: 0,
            splits: SplitRatios::default(),
            eval_split: EvalSplit::Test,
            data: None,
            out: None,
            ckpt: None,
            report: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(ECHO_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
        value.as_ref().with_context(|| format!("--{what} is required (flag or `{what}` config key)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"modle": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"model": {"embed_dims": 8}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
    }

    #[test]
    fn echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig { phantom_count: 7, ..RunConfig::default() };
        c.echo(dir.path()).unwrap();
        assert_eq!(RunConfig::load(Some(&dir.path().join(ECHO_FILE))).unwrap(), c);
    }
}
