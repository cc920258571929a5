//! Run configuration, stored as TOML next to each experiment.
//!
//! Unknown keys anywhere in the file are errors, which catches silent
//! typos before a multi-hour run starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::arch::ArchKind;
use crate::data::AugmentationPlan;
use crate::phoc::PhocConfig;

fn default_learning_rate() -> f64 {
    1e-4
}

fn default_batch_size() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// One of `lenet`, `tppnet`, `resnet`, `densenet`.
    pub arch: String,
    pub seed: u64,
    /// Initial learning rate; divided by 10 once at `lr_step`.
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    pub lr_step: u64,
    pub total_iterations: u64,
    /// Gradients are computed per sample and averaged over this many
    /// samples before each optimizer step.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Additionally write a checkpoint every this many iterations.
    #[serde(default)]
    pub checkpoint_period: Option<u64>,
    #[serde(default)]
    pub phoc: PhocSection,
    pub data: DataSection,
    #[serde(default)]
    pub augment: AugmentSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhocSection {
    pub levels: Vec<usize>,
    pub alphabet: String,
    pub overlap_threshold: f64,
}

impl Default for PhocSection {
    fn default() -> Self {
        PhocSection {
            levels: crate::phoc::DEFAULT_LEVELS.to_vec(),
            alphabet: crate::phoc::DEFAULT_ALPHABET.to_string(),
            overlap_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_manifest: PathBuf,
    /// Train on one fold of the four-fold page split instead of the
    /// whole manifest.
    #[serde(default)]
    pub gw_fold: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub target_total: usize,
    pub rotation_deg: f64,
    pub shear_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub translate_frac: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let plan = AugmentationPlan::default();
        AugmentSection {
            target_total: plan.target_total,
            rotation_deg: plan.rotation_deg,
            shear_deg: plan.shear_deg,
            scale_min: plan.scale_min,
            scale_max: plan.scale_max,
            translate_frac: plan.translate_frac,
            seed: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<TrainConfig, HarnessError> {
        let config: TrainConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<TrainConfig, HarnessError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.arch_kind()?;
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HarnessError::Config("learning_rate must be positive".into()));
        }
        if self.lr_step > self.total_iterations {
            return Err(HarnessError::Config(format!(
                "lr_step {} exceeds total_iterations {}",
                self.lr_step, self.total_iterations
            )));
        }
        if let Some(fold) = self.data.gw_fold {
            if fold >= 4 {
                return Err(HarnessError::Config(format!(
                    "gw_fold {fold} out of range (0..4)"
                )));
            }
        }
        self.phoc_config()?;
        self.augmentation_plan().validate()?;
        Ok(())
    }

    pub fn arch_kind(&self) -> Result<ArchKind, HarnessError> {
        self.arch
            .parse::<ArchKind>()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn phoc_config(&self) -> Result<PhocConfig, HarnessError> {
        PhocConfig::new(
            self.phoc.alphabet.chars(),
            self.phoc.levels.clone(),
            self.phoc.overlap_threshold,
        )
        .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn augmentation_plan(&self) -> AugmentationPlan {
        AugmentationPlan {
            target_total: self.augment.target_total,
            rotation_deg: self.augment.rotation_deg,
            shear_deg: self.augment.shear_deg,
            scale_min: self.augment.scale_min,
            scale_max: self.augment.scale_max,
            translate_frac: self.augment.translate_frac,
            seed: self.augment.seed.unwrap_or(self.seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        arch = "lenet"
        seed = 7
        lr_step = 100
        total_iterations = 200

        [data]
        train_manifest = "train.tsv"
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let config = TrainConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(config.learning_rate, 1e-4);
        assert_eq!(config.batch_size, 10);
        assert_eq!(config.phoc.levels, vec![1, 2, 4, 8]);
        assert_eq!(config.phoc_config().unwrap().dim(), 540);
        assert_eq!(config.augmentation_plan().seed, 7);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\nlearning_rte = 0.1\n");
        match TrainConfig::from_toml(&bad) {
            Err(HarnessError::Config(msg)) => assert!(msg.contains("learning_rte"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let bad_nested = MINIMAL.replace("train_manifest", "train_manifst");
        assert!(TrainConfig::from_toml(&bad_nested).is_err());
    }

    #[test]
    fn schedule_invariant_is_enforced() {
        let bad = MINIMAL.replace("lr_step = 100", "lr_step = 300");
        match TrainConfig::from_toml(&bad) {
            Err(HarnessError::Config(msg)) => assert!(msg.contains("lr_step"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn paper_scale_configurations_are_accepted() {
        // benchmark-scale settings parse and validate without code changes
        let gw = r#"
            arch = "tppnet"
            seed = 1
            learning_rate = 1e-4
            lr_step = 70000
            total_iterations = 80000
            batch_size = 10

            [data]
            train_manifest = "gw/train_fold1.tsv"
            gw_fold = 0

            [augment]
            target_total = 500000
        "#;
        let config = TrainConfig::from_toml(gw).unwrap();
        assert_eq!(config.augmentation_plan().target_total, 500_000);

        let iam = r#"
            arch = "resnet"
            seed = 1
            lr_step = 100000
            total_iterations = 240000

            [data]
            train_manifest = "iam/train.tsv"

            [augment]
            target_total = 500000
        "#;
        TrainConfig::from_toml(iam).unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let config = TrainConfig::from_toml(MINIMAL).unwrap();
        let text = config.to_toml();
        let back = TrainConfig::from_toml(&text).unwrap();
        assert_eq!(back.arch, "lenet");
        assert_eq!(back.lr_step, 100);
    }
}
