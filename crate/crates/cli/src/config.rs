//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use quail_core::corrupt::CorruptionMode;
use quail_core::data::Task;
use quail_core::search::{ModelKind, SearchSpace, StudyOptions};

use crate::UsageError;

/// Environment variable overriding `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "QUAIL_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub id: String,
    /// Relative paths resolve against the configuration file's directory.
    pub path: PathBuf,
    pub target: String,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub trials: usize,
    pub splits: usize,
    pub top_k: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let o = StudyOptions::default();
        StudyConfig {
            trials: o.n_trials,
            splits: o.n_splits,
            top_k: o.top_k,
            max_epochs: o.max_epochs,
            patience: o.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Relative paths resolve against the configuration file's directory.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_modes")]
    pub modes: Vec<CorruptionMode>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub search: SearchSpace,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_modes() -> Vec<CorruptionMode> {
    CorruptionMode::ALL.to_vec()
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> anyhow::Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| UsageError(format!("invalid configuration: {e}")))?;
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base_dir.join(&cfg.output_dir);
        }
        for d in &mut cfg.datasets {
            if d.path.is_relative() {
                d.path = base_dir.join(&d.path);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base).with_context(|| format!("loading {}", path.display()))
    }

    /// Applies `QUAIL_OUTPUT_DIR` when set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let usage = |m: String| Err(UsageError(m).into());
        if self.datasets.is_empty() {
            return usage("no datasets configured".into());
        }
        if self.modes.is_empty() || self.models.is_empty() {
            return usage("modes and models must be non-empty".into());
        }
        if self.study.trials == 0 {
            return usage("trial budget must be positive".into());
        }
        if self.study.splits == 0 || self.study.max_epochs == 0 || self.study.patience == 0 || self.study.top_k == 0 {
            return usage("splits, max_epochs, patience and top_k must be positive".into());
        }
        if self.workers == Some(0) {
            return usage("workers must be positive".into());
        }
        let mut ids: Vec<&str> = self.datasets.iter().map(|d| d.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return usage("dataset ids must be unique".into());
        }
        if let Some(bad) = self.datasets.iter().find(|d| d.id.is_empty() || d.id.contains(['/', '\\'])) {
            return usage(format!("invalid dataset id {:?}", bad.id));
        }
        self.search.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(())
    }

    pub fn study_options(&self) -> StudyOptions {
        StudyOptions {
            n_trials: self.study.trials,
            n_splits: self.study.splits,
            seed: self.seed,
            max_epochs: self.study.max_epochs,
            patience: self.study.patience,
            top_k: self.study.top_k,
            space: self.search.clone(),
        }
    }

    /// Models to run, in dependency order; QuAIL pulls in the MLP baseline.
    pub fn model_plan(&self) -> Vec<ModelKind> {
        let mut models = self.models.clone();
        if models.contains(&ModelKind::Quail) && !models.contains(&ModelKind::Mlp) {
            models.push(ModelKind::Mlp);
        }
        models.sort_unstable();
        models.dedup();
        models
    }

    pub fn mode_plan(&self) -> Vec<CorruptionMode> {
        let mut modes = self.modes.clone();
        modes.sort_unstable();
        modes.dedup();
        modes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[[datasets]]
id = "iris"
path = "iris.csv"
target = "species"
task = "classification"
"#;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = ExperimentConfig::from_toml(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.datasets[0].path, PathBuf::from("/data/iris.csv"));
        assert_eq!(cfg.study, StudyConfig::default());
        assert_eq!(cfg.models, ModelKind::ALL.to_vec());
        cfg.validate().unwrap();
    }

    #[test]
    fn seed_is_mandatory_and_unknown_keys_rejected() {
        let no_seed = MINIMAL.replace("seed = 7", "");
        assert!(ExperimentConfig::from_toml(&no_seed, Path::new(".")).is_err());
        let extra = format!("bogus = 1\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml(&extra, Path::new(".")).is_err());
    }

    #[test]
    fn search_overrides_merge_with_defaults() {
        let text = format!("{MINIMAL}\n[search]\nwidth = [8]\nlambda0 = [0.01, 0.02]\n");
        let cfg = ExperimentConfig::from_toml(&text, Path::new(".")).unwrap();
        assert_eq!(cfg.search.width, vec![8]);
        assert_eq!(cfg.search.lambda0, (0.01, 0.02));
        assert_eq!(cfg.search.batch_size, SearchSpace::default().batch_size);
    }

    #[test]
    fn zero_budget_is_a_usage_error() {
        let text = format!("{MINIMAL}\n[study]\ntrials = 0\n");
        let cfg = ExperimentConfig::from_toml(&text, Path::new(".")).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn quail_pulls_in_mlp() {
        let text = MINIMAL.replace("seed = 7", "seed = 7\nmodels = [\"quail\"]");
        let cfg = ExperimentConfig::from_toml(&text, Path::new(".")).unwrap();
        assert_eq!(cfg.model_plan(), vec![ModelKind::Mlp, ModelKind::Quail]);
    }
}
