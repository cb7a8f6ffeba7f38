use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spe_core::calibration::{Family, DEFAULT_REPEATS, DEFAULT_SUPPORT_SIZE};
use spe_core::data::GrayConversion;
use spe_core::segmenter::CheckpointRef;
use spe_core::synthetic::SyntheticParams;
use spe_core::{MetricId, Result, SpeError};

/// Everything a run depends on. Loaded from TOML, then overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Empty means the command's default set.
    pub metrics: Vec<MetricId>,
    pub support_size: usize,
    pub n_repeats: usize,
    pub train_cap: Option<usize>,
    /// Forces the mapping family instead of selecting it.
    pub family: Option<Family>,
    /// Consider log-linear for every metric, not only hd95.
    pub log_linear_all: bool,
    pub plugin_cmd: Option<Vec<String>>,
    pub plugin_timeout_secs: u64,
    pub dataset: Option<DatasetConfig>,
    pub model: Option<ModelConfig>,
    pub synthetic: Option<SyntheticParams>,
    /// Holdout quality levels per synthetic demo run.
    pub holdout_levels: usize,
    /// Number of consecutive seeds the synthetic demo runs.
    pub n_seeds: usize,
    pub estimate: EstimateConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub manifest: PathBuf,
    #[serde(default)]
    pub gray: GrayConversion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Builtin adapter name, used when `command` is absent.
    #[serde(default = "default_adapter")]
    pub adapter: String,
    /// External adapter: run as `<command...> <workdir> <locator>`.
    pub command: Option<Vec<String>>,
    #[serde(default)]
    pub checkpoints: Vec<CheckpointRef>,
}

fn default_adapter() -> String {
    "threshold".into()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub artifacts: Vec<PathBuf>,
    pub unlabeled_dir: Option<PathBuf>,
    pub deployed: Option<CheckpointRef>,
    /// Synthetic runs only: deploy the level with this population dice.
    pub deployed_quality: Option<f64>,
    pub allow_protocol_override: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            metrics: Vec::new(),
            support_size: DEFAULT_SUPPORT_SIZE,
            n_repeats: DEFAULT_REPEATS,
            train_cap: None,
            family: None,
            log_linear_all: false,
            plugin_cmd: None,
            plugin_timeout_secs: 600,
            dataset: None,
            model: None,
            synthetic: None,
            holdout_levels: 5,
            n_seeds: 1,
            estimate: EstimateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SpeError::Ingestion {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| SpeError::Parse {
            what: path.display().to_string(),
            reason: e.to_string(),
        })?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(d) = cfg.dataset.as_mut() {
            d.manifest = base.join(&d.manifest);
        }
        cfg.estimate.artifacts = cfg.estimate.artifacts.iter().map(|p| base.join(p)).collect();
        if let Some(u) = cfg.estimate.unlabeled_dir.as_mut() {
            *u = base.join(&*u);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = self.metrics.clone();
        seen.sort_by_key(|m| m.name());
        seen.dedup();
        if seen.len() != self.metrics.len() {
            return Err(SpeError::Validation("metrics must not repeat".into()));
        }
        if self.n_seeds == 0 {
            return Err(SpeError::Validation("n_seeds must be at least 1".into()));
        }
        Ok(())
    }

    pub fn metrics_or(&self, default: &[MetricId]) -> Vec<MetricId> {
        if self.metrics.is_empty() {
            default.to_vec()
        } else {
            self.metrics.clone()
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// `SOURCE_DATE_EPOCH` when set, else 0, so repeated runs write identical bytes.
pub fn created_at() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_file() {
        let text = r#"
            seed = 3
            metrics = ["dice", "hd95"]
            support_size = 32
            plugin_cmd = ["python3", "plugin.py"]

            [dataset]
            manifest = "data/manifest.json"
            gray = "average"

            [model]
            checkpoints = [
                { model_id = "unet", epoch = 5, locator = "ckpt/5.pt" },
                { model_id = "unet", epoch = 10, locator = "ckpt/10.pt" },
            ]

            [synthetic]
            n_shapes = 120
            quality_range = [0.4, 0.9]
            coupling = { a = 1.0, b = 0.0, sigma = 0.0 }
            operators = [{ erode = { radius_fraction = 0.5 } }, { boundary_noise = 0.3 }]
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.metrics, vec![MetricId::Dice, MetricId::Hd95]);
        assert_eq!(cfg.n_repeats, 6);
        assert_eq!(cfg.model.unwrap().checkpoints[1].epoch, 10);
        let syn = cfg.synthetic.unwrap();
        assert_eq!(syn.n_shapes, 120);
        assert_eq!(syn.n_checkpoints, 20);
        assert_eq!(syn.operators.len(), 2);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(toml::from_str::<RunConfig>("sead = 3").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.synthetic = Some(SyntheticParams::default());
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
