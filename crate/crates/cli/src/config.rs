//! Run configuration: a TOML file mirroring the model, training, and data
//! settings, a preset base when no file is given, and per-field flag
//! overrides. The merged result is echoed into every run directory, so a
//! finished run's `config.toml` is itself a valid `--config` input.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use a4net::model::{AttributeSet, ModelConfig, ObjectiveMode};
use a4net::train::TrainConfig;
use a4net::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Preset {
    /// Desk-scale: 64 px, dims 32-256, 4/5/4 classes, small-batch recipe
    #[default]
    Mini,
    /// Paper-scale: 224 px, dims 128-1024, 8/255/7 classes, batch 80, lr 3e-6
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataPaths,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
}

/// Desk-scale training recipe paired with the mini model.
pub fn mini_train() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        learning_rate: 1e-3,
        weight_decay: 1e-4,
        epochs: 3,
        seed: 7,
        attribute_set: AttributeSet::ALL,
        objective_mode: ObjectiveMode::Fixed,
        emotion_classes: 4,
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> RunConfig {
        match preset {
            Preset::Full => RunConfig {
                model: ModelConfig::full(),
                train: TrainConfig::default(),
                data: DataPaths::default(),
            },
            Preset::Mini => RunConfig {
                model: ModelConfig::mini(),
                train: mini_train(),
                data: DataPaths::default(),
            },
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config serialization: {e}")))
    }
}

/// Flags shared by the training-shaped subcommands. Each one overrides a
/// single config field; `--config` replaces the preset base wholesale.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct ConfigOverrides {
    /// Base values when no --config file is given
    #[arg(long, value_enum, default_value = "mini", conflicts_with = "config")]
    pub preset: Preset,
    /// TOML run config; unknown keys are rejected
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Backbone blocks per stage, e.g. 3,3,4,3
    #[arg(long, value_delimiter = ',')]
    pub stage_depths: Option<Vec<usize>>,
    /// Backbone channels per stage, e.g. 32,64,128,256
    #[arg(long, value_delimiter = ',')]
    pub stage_dims: Option<Vec<usize>>,
    /// Square input resolution in pixels
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Stochastic-depth rate across blocks
    #[arg(long)]
    pub drop_path_rate: Option<f64>,
    /// Shared embedding width for fusion
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Emotion classes (also sets the training loss head)
    #[arg(long)]
    pub emotion_classes: Option<usize>,
    /// Scene classes including the unknown class
    #[arg(long)]
    pub scene_classes: Option<usize>,
    /// Facial-expression classes including the unknown class
    #[arg(long)]
    pub fe_classes: Option<usize>,

    /// Samples per optimizer step
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// AdamW learning rate
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Decoupled weight decay
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Passes over the training set
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for init, shuffling, and augmentation
    #[arg(long)]
    pub seed: Option<u64>,
    /// Active attribute branches, e.g. B+C+S+F or none
    #[arg(long)]
    pub attributes: Option<String>,
    /// Loss weighting: fixed or uncertainty
    #[arg(long, value_parser = parse_objective)]
    pub objective: Option<ObjectiveMode>,

    /// Training manifest path
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// Held-out manifest path
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
}

fn parse_objective(text: &str) -> std::result::Result<ObjectiveMode, String> {
    match text {
        "fixed" => Ok(ObjectiveMode::Fixed),
        "uncertainty" => Ok(ObjectiveMode::Uncertainty),
        other => Err(format!("unknown objective `{other}`; use fixed or uncertainty")),
    }
}

fn to_array4(name: &str, v: &[usize]) -> Result<[usize; 4]> {
    v.try_into()
        .map_err(|_| Error::Config(format!("{name} needs exactly 4 values, got {}", v.len())))
}

impl ConfigOverrides {
    /// Preset or file base, then flag overrides, then validation. The train
    /// head size always follows the model's emotion classes.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::preset(self.preset),
        };
        if let Some(v) = &self.stage_depths {
            cfg.model.backbone.stage_depths = to_array4("--stage-depths", v)?;
        }
        if let Some(v) = &self.stage_dims {
            cfg.model.backbone.stage_dims = to_array4("--stage-dims", v)?;
        }
        if let Some(v) = self.input_size {
            cfg.model.backbone.input_size = v;
        }
        if let Some(v) = self.drop_path_rate {
            cfg.model.backbone.drop_path_rate = v;
        }
        if let Some(v) = self.embed_dim {
            cfg.model.embed_dim = v;
        }
        if let Some(v) = self.emotion_classes {
            cfg.model.emotion_classes = v;
        }
        if let Some(v) = self.scene_classes {
            cfg.model.scene_classes = v;
        }
        if let Some(v) = self.fe_classes {
            cfg.model.fe_classes = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.train.weight_decay = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(text) = &self.attributes {
            cfg.train.attribute_set = AttributeSet::parse(text)?;
        }
        if let Some(v) = self.objective {
            cfg.train.objective_mode = v;
        }
        if self.train_data.is_some() {
            cfg.data.train_manifest = self.train_data.clone();
        }
        if self.eval_data.is_some() {
            cfg.data.eval_manifest = self.eval_data.clone();
        }
        cfg.train.emotion_classes = cfg.model.emotion_classes;
        cfg.model.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for preset in [Preset::Mini, Preset::Full] {
            let cfg = RunConfig::preset(preset);
            let text = cfg.to_toml().unwrap();
            let back: RunConfig = toml::from_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::preset(Preset::Mini).to_toml().unwrap();
        text.push_str("\n[extras]\nx = 1\n");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
        let bad = text.replace("batch_size", "batch_sizes");
        assert!(toml::from_str::<RunConfig>(&bad).is_err());
    }

    #[test]
    fn overrides_apply_field_by_field() {
        let cfg = ConfigOverrides {
            epochs: Some(9),
            learning_rate: Some(0.5),
            attributes: Some("S+F".into()),
            emotion_classes: Some(6),
            ..ConfigOverrides::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.train.learning_rate, 0.5);
        assert_eq!(cfg.train.attribute_set, AttributeSet::parse("S+F").unwrap());
        assert_eq!(cfg.model.emotion_classes, 6);
        assert_eq!(cfg.train.emotion_classes, 6);
    }

    #[test]
    fn bad_override_is_a_config_error() {
        let bad = ConfigOverrides {
            stage_depths: Some(vec![3, 3]),
            ..ConfigOverrides::default()
        };
        assert!(matches!(bad.resolve(), Err(Error::Config(_))));
        let bad = ConfigOverrides {
            attributes: Some("B+Q".into()),
            ..ConfigOverrides::default()
        };
        assert!(bad.resolve().is_err());
    }
}
