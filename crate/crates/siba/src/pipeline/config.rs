//! Experiment configuration: a strict TOML schema with no code execution.
//! Unknown keys are rejected so typos surface as validation errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SibaError};
use crate::model::Architecture;
use crate::synthesis::SynthesisConfig;
use crate::train::TrainConfig;
use crate::types::{ImageShape, LabelRule};

pub const DATA_DIR_ENV: &str = "SIBA_DATA_DIR";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub attack: AttackSection,
    pub surrogate: ModelSection,
    pub victim: ModelSection,
    #[serde(default)]
    pub defense: DefenseSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub id: String,
    /// "cifar10" (binary batches under the data dir) or "synthetic".
    pub dataset: String,
    /// Overrides the SIBA_DATA_DIR environment variable when set.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Fraction of the training split available to the surrogate.
    #[serde(default = "default_one")]
    pub data_fraction: f64,
    /// Synthetic dataset sizes; ignored for cifar10.
    #[serde(default = "default_synth_train")]
    pub synthetic_train: usize,
    #[serde(default = "default_synth_test")]
    pub synthetic_test: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
}

fn default_seed() -> u64 {
    0
}
fn default_one() -> f64 {
    1.0
}
fn default_synth_train() -> usize {
    3000
}
fn default_synth_test() -> usize {
    600
}
fn default_classes() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    /// "siba", "sparse", "random", "patch" or "blended".
    pub method: String,
    /// "all_to_one" or "all_to_all".
    #[serde(default = "default_rule")]
    pub label_rule: String,
    #[serde(default)]
    pub target_class: usize,
    #[serde(default = "default_rate")]
    pub poisoning_rate: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_iters")]
    pub iterations: usize,
    #[serde(default = "default_mask_period")]
    pub mask_update_period: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub spatial_grouping: bool,
    /// Optional inference-time amplification budget.
    #[serde(default)]
    pub amplify_eps: Option<f64>,
}

fn default_rule() -> String {
    "all_to_one".into()
}
fn default_rate() -> f64 {
    0.01
}
fn default_k() -> usize {
    100
}
fn default_eps() -> f64 {
    8.0 / 255.0
}
fn default_alpha() -> f64 {
    0.2
}
fn default_iters() -> usize {
    200
}
fn default_mask_period() -> usize {
    5
}
fn default_batch() -> usize {
    128
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// "small-resnet", "small-vgg" or "small-cnn".
    pub arch: String,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_milestones")]
    pub lr_milestones: Vec<usize>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_train_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub augment: bool,
}

fn default_epochs() -> usize {
    100
}
fn default_lr() -> f64 {
    0.1
}
fn default_milestones() -> Vec<usize> {
    vec![60, 90]
}
fn default_momentum() -> f64 {
    0.9
}
fn default_wd() -> f64 {
    5e-4
}
fn default_train_batch() -> usize {
    128
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct DefenseSection {
    /// Any of "strip", "scale_up", "fine_prune", "neural_cleanse".
    #[serde(default)]
    pub enabled: Vec<String>,
    #[serde(default = "default_strip_overlays")]
    pub strip_overlays: usize,
    #[serde(default = "default_strip_blend")]
    pub strip_blend: f64,
    #[serde(default = "default_scales")]
    pub scale_up_scales: Vec<f64>,
    #[serde(default = "default_scale_threshold")]
    pub scale_up_threshold: f64,
    #[serde(default)]
    pub prune_steps: Vec<usize>,
    #[serde(default = "default_nc_epochs")]
    pub neural_cleanse_epochs: usize,
    /// Samples drawn per defense evaluation stream.
    #[serde(default = "default_defense_samples")]
    pub max_samples: usize,
}

fn default_strip_overlays() -> usize {
    64
}
fn default_strip_blend() -> f64 {
    0.5
}
fn default_scales() -> Vec<f64> {
    vec![2.0, 3.0, 4.0, 5.0, 6.0]
}
fn default_scale_threshold() -> f64 {
    0.8
}
fn default_nc_epochs() -> usize {
    50
}
fn default_defense_samples() -> usize {
    200
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            SibaError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)
            .map_err(|e| SibaError::Config(format!("config validation failed: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| SibaError::Config(format!("config serialization failed: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let e = |msg: String| Err(SibaError::Config(msg));
        match self.experiment.dataset.as_str() {
            "cifar10" | "synthetic" => {}
            other => return e(format!("experiment.dataset: unknown dataset \"{other}\"")),
        }
        if !(0.0 < self.experiment.data_fraction && self.experiment.data_fraction <= 1.0) {
            return e("experiment.data_fraction: must be in (0, 1]".into());
        }
        if self.experiment.id.is_empty()
            || !self
                .experiment
                .id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return e("experiment.id: must be a non-empty [A-Za-z0-9_-]+ token".into());
        }
        match self.attack.method.as_str() {
            "siba" | "sparse" | "random" | "patch" | "blended" => {}
            other => return e(format!("attack.method: unknown method \"{other}\"")),
        }
        match self.attack.label_rule.as_str() {
            "all_to_one" | "all_to_all" => {}
            other => return e(format!("attack.label_rule: unknown rule \"{other}\"")),
        }
        if self.attack.target_class >= self.experiment.num_classes {
            return e("attack.target_class: out of class range".into());
        }
        if !(0.0 < self.attack.poisoning_rate && self.attack.poisoning_rate <= 1.0) {
            return e("attack.poisoning_rate: must be in (0, 1]".into());
        }
        for (section, arch) in [("surrogate", &self.surrogate), ("victim", &self.victim)] {
            Architecture::from_id(&arch.arch)
                .map_err(|_| SibaError::Config(format!("{section}.arch: unknown architecture \"{}\"", arch.arch)))?;
        }
        for name in &self.defense.enabled {
            match name.as_str() {
                "strip" | "scale_up" | "fine_prune" | "neural_cleanse" => {}
                other => return e(format!("defense.enabled: unknown defense \"{other}\"")),
            }
        }
        Ok(())
    }

    pub fn image_shape(&self) -> ImageShape {
        // both supported datasets are 32x32 RGB
        ImageShape::new(32, 32, 3).expect("static shape")
    }

    pub fn label_rule(&self) -> LabelRule {
        match self.attack.label_rule.as_str() {
            "all_to_all" => LabelRule::all_to_all(),
            _ => LabelRule::all_to_one(self.attack.target_class),
        }
    }

    pub fn synthesis_config(&self) -> SynthesisConfig {
        SynthesisConfig {
            batch_size: self.attack.batch_size,
            step_size: self.attack.alpha as f32,
            iterations: self.attack.iterations,
            mask_update_period: self.attack.mask_update_period,
            k_budget: self.attack.k,
            eps_budget: self.attack.eps as f32,
            label_rule: self.label_rule(),
            spatial_grouping: self.attack.spatial_grouping,
            seed: self.experiment.seed,
        }
    }

    pub fn train_config(section: &ModelSection, seed: u64) -> Result<TrainConfig> {
        let config = TrainConfig {
            arch: Architecture::from_id(&section.arch)?,
            epochs: section.epochs,
            initial_lr: section.lr,
            lr_milestones: section.lr_milestones.clone(),
            momentum: section.momentum,
            weight_decay: section.weight_decay,
            batch_size: section.batch_size,
            augment_crop: section.augment,
            augment_flip: section.augment,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Where raw dataset archives live: explicit config key, else
    /// SIBA_DATA_DIR.
    pub fn data_dir(&self) -> Result<PathBuf> {
        if let Some(dir) = &self.experiment.data_dir {
            return Ok(dir.clone());
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(v) => Ok(PathBuf::from(v)),
            None => Err(SibaError::Config(format!(
                "dataset \"{}\" needs experiment.data_dir or ${DATA_DIR_ENV}",
                self.experiment.dataset
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
[experiment]
id = "demo"
dataset = "synthetic"

[attack]
method = "siba"

[surrogate]
arch = "small-cnn"

[victim]
arch = "small-resnet"
"#;

    #[test]
    fn minimal_config_gets_paper_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.attack.k, 100);
        assert!((c.attack.eps - 8.0 / 255.0).abs() < 1e-9);
        assert!((c.attack.alpha - 0.2).abs() < 1e-12);
        assert_eq!(c.attack.iterations, 200);
        assert_eq!(c.attack.mask_update_period, 5);
        assert!((c.attack.poisoning_rate - 0.01).abs() < 1e-12);
        assert_eq!(c.surrogate.epochs, 100);
        assert_eq!(c.surrogate.lr_milestones, vec![60, 90]);
        assert!((c.surrogate.weight_decay - 5e-4).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_named_in_the_error() {
        let bad = MINIMAL.replace("method = \"siba\"", "method = \"siba\"\nbananas = 3");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("bananas"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected_with_key_names() {
        for (needle, replacement, expect) in [
            ("method = \"siba\"", "method = \"nope\"", "attack.method"),
            ("dataset = \"synthetic\"", "dataset = \"imagenet\"", "experiment.dataset"),
            ("arch = \"small-cnn\"", "arch = \"resnet152\"", "surrogate.arch"),
        ] {
            let bad = MINIMAL.replace(needle, replacement);
            let err = ExperimentConfig::from_toml(&bad).unwrap_err();
            assert!(err.to_string().contains(expect), "{err}");
        }
    }

    #[test]
    fn roundtrips_through_toml() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn data_dir_resolution_prefers_config_key() {
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.experiment.data_dir = Some(PathBuf::from("/data/sets"));
        assert_eq!(c.data_dir().unwrap(), PathBuf::from("/data/sets"));
    }
}
