//! Experiment configuration: one serializable struct covering data
//! generation, model shape, training, and beam search, resolved from a
//! profile or a config file with flag overrides on top (file < flags).

use clap::Args;
use procplan::attention::{AttentionConfig, MaskKind};
use procplan::envgen::{sha256_hex, GenConfig};
use procplan::model::{CoreKind, ModelConfig};
use procplan::planner::BeamConfig;
use procplan::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub beam: BeamConfig,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Desk-scale profile: 2-layer / 4-head model, batch 32, a learning
    /// rate tuned so the default synthetic family trains in seconds.
    pub fn desk() -> Self {
        let dataset = GenConfig::default();
        ExperimentConfig {
            model: ModelConfig {
                obs_dim: dataset.obs_dim,
                num_actions: dataset.num_actions,
                latent_dim: 32,
                encoder_hidden: 64,
                core: CoreKind::Transformer,
                attention: AttentionConfig {
                    d_model: 32,
                    num_heads: 4,
                    num_layers: 2,
                    mask: MaskKind::Causal,
                    dropout: 0.1,
                },
                future_heads: 1,
                init_seed: 1,
            },
            train: TrainConfig { epochs: 40, batch_size: 32, lr: 1e-3, seed: 1 },
            beam: BeamConfig::default(),
            out_dir: PathBuf::from("runs/desk"),
            dataset,
        }
    }

    /// Reference-scale profile: 8-layer / 8-head model, batch 256,
    /// 200 epochs at learning rate 1e-4. Selectable, not exercised by the
    /// test suite.
    pub fn paper() -> Self {
        let mut config = Self::desk();
        config.model.latent_dim = 128;
        config.model.encoder_hidden = 256;
        config.model.attention = AttentionConfig {
            d_model: 128,
            num_heads: 8,
            num_layers: 8,
            mask: MaskKind::Causal,
            dropout: 0.1,
        };
        config.train = TrainConfig { epochs: 200, batch_size: 256, lr: 1e-4, seed: 1 };
        config.out_dir = PathBuf::from("runs/paper");
        config
    }

    /// Cross-field checks with the offending fields named.
    pub fn validate(&self) -> Result<(), CliError> {
        self.dataset.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.beam.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.model.obs_dim != self.dataset.obs_dim {
            return Err(CliError::Config(format!(
                "model.obs_dim {} != dataset.obs_dim {}",
                self.model.obs_dim, self.dataset.obs_dim
            )));
        }
        if self.model.num_actions != self.dataset.num_actions {
            return Err(CliError::Config(format!(
                "model.num_actions {} != dataset.num_actions {}",
                self.model.num_actions, self.dataset.num_actions
            )));
        }
        if let Some(&h) = self.dataset.horizons.iter().max() {
            if h > self.beam.n_max {
                return Err(CliError::Config(format!(
                    "dataset.horizons contains {h} beyond beam.n_max {}",
                    self.beam.n_max
                )));
            }
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(CliError::Config("train.epochs and train.batch_size must be positive".into()));
        }
        if !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return Err(CliError::Config(format!("train.lr {} must be positive", self.train.lr)));
        }
        Ok(())
    }

    /// Lineage hash over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Flags shared by every subcommand. A `--config` file replaces the profile
/// wholesale; individual flags then override single keys.
#[derive(Args, Clone, Debug)]
pub struct ConfigArgs {
    /// Base profile when no --config file is given: "desk" or "paper".
    #[arg(long, default_value = "desk")]
    pub profile: String,
    /// Complete experiment config as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for artifacts (dataset, checkpoints, reports).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Dataset generation seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_states: Option<usize>,
    /// Action-space size; applied to both dataset and model.
    #[arg(long)]
    pub num_actions: Option<usize>,
    #[arg(long)]
    pub num_tasks: Option<usize>,
    /// Observation width; applied to both dataset and model.
    #[arg(long)]
    pub obs_dim: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Comma-separated plan lengths to sample, e.g. 3,4.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub num_trajectories: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for epoch shuffles and dropout.
    #[arg(long)]
    pub train_seed: Option<u64>,
    /// Seed for parameter initialization.
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Sequence core: "transformer" or "mlp".
    #[arg(long)]
    pub core: Option<String>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    /// Discrepancy buffer: extensions tried per hypothesis.
    #[arg(long)]
    pub beam_buffer: Option<usize>,
}

impl Default for ConfigArgs {
    fn default() -> Self {
        ConfigArgs {
            profile: "desk".into(),
            config: None,
            out_dir: None,
            seed: None,
            num_states: None,
            num_actions: None,
            num_tasks: None,
            obs_dim: None,
            noise_sigma: None,
            horizons: None,
            num_trajectories: None,
            train_fraction: None,
            epochs: None,
            batch_size: None,
            lr: None,
            train_seed: None,
            init_seed: None,
            core: None,
            beam_width: None,
            beam_buffer: None,
        }
    }
}

pub fn resolve(args: &ConfigArgs) -> Result<ExperimentConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str(&raw)
                .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))?
        }
        None => match args.profile.as_str() {
            "desk" => ExperimentConfig::desk(),
            "paper" => ExperimentConfig::paper(),
            other => {
                return Err(CliError::Config(format!(
                    "unknown profile \"{other}\" (expected desk or paper)"
                )))
            }
        },
    };

    if let Some(v) = &args.out_dir {
        config.out_dir = v.clone();
    }
    if let Some(v) = args.seed {
        config.dataset.seed = v;
    }
    if let Some(v) = args.num_states {
        config.dataset.num_states = v;
    }
    if let Some(v) = args.num_actions {
        config.dataset.num_actions = v;
        config.model.num_actions = v;
    }
    if let Some(v) = args.num_tasks {
        config.dataset.num_tasks = v;
    }
    if let Some(v) = args.obs_dim {
        config.dataset.obs_dim = v;
        config.model.obs_dim = v;
    }
    if let Some(v) = args.noise_sigma {
        config.dataset.noise_sigma = v;
    }
    if let Some(v) = &args.horizons {
        config.dataset.horizons = v.clone();
    }
    if let Some(v) = args.num_trajectories {
        config.dataset.num_trajectories = v;
    }
    if let Some(v) = args.train_fraction {
        config.dataset.train_fraction = v;
    }
    if let Some(v) = args.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.train.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.train.lr = v;
    }
    if let Some(v) = args.train_seed {
        config.train.seed = v;
    }
    if let Some(v) = args.init_seed {
        config.model.init_seed = v;
    }
    if let Some(v) = &args.core {
        config.model.core = match v.as_str() {
            "transformer" => CoreKind::Transformer,
            "mlp" => CoreKind::Mlp,
            other => {
                return Err(CliError::Config(format!(
                    "unknown core \"{other}\" (expected transformer or mlp)"
                )))
            }
        };
    }
    if let Some(v) = args.beam_width {
        config.beam.width = v;
    }
    if let Some(v) = args.beam_buffer {
        config.beam.buffer = v;
    }

    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_and_hash_stably() {
        let desk = ExperimentConfig::desk();
        desk.validate().unwrap();
        ExperimentConfig::paper().validate().unwrap();
        assert_eq!(desk.hash(), ExperimentConfig::desk().hash());
        assert_ne!(desk.hash(), ExperimentConfig::paper().hash());
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let mut base = ExperimentConfig::desk();
        base.train.epochs = 7;
        std::fs::write(&path, serde_json::to_string(&base).unwrap()).unwrap();

        let args = ConfigArgs {
            config: Some(path),
            lr: Some(0.5),
            obs_dim: Some(24),
            ..ConfigArgs::default()
        };
        let resolved = resolve(&args).unwrap();
        assert_eq!(resolved.train.epochs, 7); // from file
        assert_eq!(resolved.train.lr, 0.5); // flag wins
        assert_eq!(resolved.dataset.obs_dim, 24);
        assert_eq!(resolved.model.obs_dim, 24); // paired override
    }

    #[test]
    fn unknown_keys_and_cross_field_mismatches_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let mut json = serde_json::to_value(ExperimentConfig::desk()).unwrap();
        json["surprise"] = serde_json::json!(1);
        std::fs::write(&path, serde_json::to_string(&json).unwrap()).unwrap();
        let args = ConfigArgs { config: Some(path), ..ConfigArgs::default() };
        assert!(matches!(resolve(&args), Err(CliError::Config(_))));

        let args = ConfigArgs { num_actions: Some(8), ..ConfigArgs::default() };
        let mut config = resolve(&args).unwrap();
        config.model.num_actions = 5;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("num_actions"));
    }
}
