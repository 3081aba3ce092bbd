//! Training configuration, read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use pipesched_core::rl::DEFAULT_REWARD_EPSILON;
use pipesched_core::sampler::DEFAULT_MEMORY_RANGE;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid training config: `{field}` {message}")]
    Invalid { field: &'static str, message: String },
}

/// Hyperparameters and file locations for one training run.
///
/// Every field has a default; a TOML file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Sampler degree bounds; each contributes `graphs_per_degree` graphs.
    pub degrees: Vec<usize>,
    pub graphs_per_degree: usize,
    pub num_nodes: usize,
    pub num_stages: usize,
    pub hidden_dim: usize,
    pub reward_epsilon: f64,
    pub seed: u64,
    /// Fixed graphs used to decide baseline promotion.
    pub validation_graphs: usize,
    /// Inclusive per-node memory bounds in bytes.
    pub memory_range: [u64; 2],
    /// Graphs whose oracle needs more search nodes are skipped.
    pub oracle_max_expansions: Option<u64>,
    /// Epochs before the divergence check starts.
    pub warmup_epochs: usize,
    /// Abort when an epoch's mean sampled reward falls below this after warmup.
    pub divergence_reward: f64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1e-4,
            batch_size: 128,
            degrees: vec![2, 3, 4, 5, 6],
            graphs_per_degree: 200_000,
            num_nodes: 30,
            num_stages: 4,
            hidden_dim: 128,
            reward_epsilon: DEFAULT_REWARD_EPSILON,
            seed: 0,
            validation_graphs: 256,
            memory_range: [DEFAULT_MEMORY_RANGE.0, DEFAULT_MEMORY_RANGE.1],
            oracle_max_expansions: Some(50_000_000),
            warmup_epochs: 5,
            divergence_reward: 0.01,
            checkpoint: PathBuf::from("policy.json"),
            metrics: PathBuf::from("metrics.jsonl"),
        }
    }
}

impl TrainConfig {
    /// Reads a TOML file. Relative output paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: TrainConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.checkpoint, &mut cfg.metrics] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, message: &str| {
            Err(ConfigError::Invalid {
                field,
                message: message.to_string(),
            })
        };
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("graphs_per_degree", self.graphs_per_degree),
            ("num_stages", self.num_stages),
            ("hidden_dim", self.hidden_dim),
            ("validation_graphs", self.validation_graphs),
        ];
        for (field, value) in positive {
            if value == 0 {
                return invalid(field, "must be positive");
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate", "must be positive");
        }
        if !(self.reward_epsilon > 0.0 && self.reward_epsilon.is_finite()) {
            return invalid("reward_epsilon", "must be positive");
        }
        if self.degrees.is_empty() {
            return invalid("degrees", "must not be empty");
        }
        if let Some(&d) = self.degrees.iter().find(|&&d| d == 0 || d >= self.num_nodes) {
            return invalid("degrees", &format!("{d} is outside 1..num_nodes"));
        }
        if self.num_stages > self.num_nodes {
            return invalid("num_stages", "exceeds num_nodes");
        }
        if self.memory_range[0] > self.memory_range[1] {
            return invalid("memory_range", "minimum exceeds maximum");
        }
        Ok(())
    }

    /// Embedding width the policy is built for.
    pub fn max_degree(&self) -> usize {
        self.degrees.iter().copied().max().unwrap_or(1)
    }

    pub fn dataset_size(&self) -> usize {
        self.degrees.len() * self.graphs_per_degree
    }
}
