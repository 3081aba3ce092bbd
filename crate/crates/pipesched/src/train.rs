//! REINFORCE training against exact-oracle labels with a greedy rollout
//! baseline.
//!
//! Results depend only on the configuration: every random draw is seeded
//! from `cfg.seed` and the graph or episode it belongs to, and batch
//! gradients are summed in fixed-size chunks whose partial sums are combined
//! in order, so the thread count never changes a bit of the output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use pipesched_core::embed::{embed_graph, GraphEmbedding};
use pipesched_core::error::{EpisodeError, GraphError, ScheduleError};
use pipesched_core::exact::ExactConfig;
use pipesched_core::graph::ComputeDag;
use pipesched_core::policy::{PolicyConfig, PolicyParams};
use pipesched_core::rl::{greedy_reward, oracle_label, reinforce_episode, Adam, AdamConfig, OracleLabel, RewardConfig};
use pipesched_core::sampler::{sample_dag, SamplerConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, TrainConfig};
use crate::io::{save_checkpoint, IoError};

/// Episodes per partial gradient sum.
const GRAD_CHUNK: usize = 8;

/// Independent seed streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Train = 1,
    Validation = 2,
    Test = 3,
    Init = 4,
    Shuffle = 5,
    Episode = 6,
    Check = 7,
    Sample = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for item `(a, b)` of `stream` under run seed `seed`.
pub fn derive_seed(seed: u64, stream: Stream, a: u64, b: u64) -> u64 {
    [stream as u64, a, b].iter().fold(splitmix64(seed), |h, &x| splitmix64(h ^ x))
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("writing metrics to {path}: {source}")]
    Metrics {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sampling graph {name}: {source}")]
    Sample {
        name: String,
        #[source]
        source: GraphError,
    },
    #[error("graph {name}: {source}")]
    Episode {
        name: String,
        #[source]
        source: EpisodeError,
    },
    #[error("no {split} graph could be labelled ({skipped} oracle timeouts)")]
    EmptySplit { split: &'static str, skipped: usize },
    #[error(
        "training diverged at epoch {epoch}: mean reward {mean_reward:.4} is below {threshold} \
         (validation reward {val_reward:.4}, baseline {baseline_val_reward:.4})"
    )]
    Diverged {
        epoch: usize,
        mean_reward: f64,
        val_reward: f64,
        baseline_val_reward: f64,
        threshold: f64,
    },
}

/// One labelled graph.
#[derive(Debug, Clone)]
pub struct Example {
    pub dag: ComputeDag,
    /// Degree bound the graph was sampled with.
    pub degree: usize,
    pub embedding: GraphEmbedding,
    pub label: OracleLabel,
}

/// Labelled graphs plus the names of those the oracle could not finish.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub skipped: Vec<String>,
}

/// What to sample for one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub stream: Stream,
    pub num_nodes: usize,
    pub degrees: Vec<usize>,
    /// Graphs in the split; degrees are assigned round-robin.
    pub count: usize,
    pub memory_range: (u64, u64),
    pub seed: u64,
}

impl SplitSpec {
    pub fn for_config(cfg: &TrainConfig, stream: Stream, count: usize) -> Self {
        Self {
            stream,
            num_nodes: cfg.num_nodes,
            degrees: cfg.degrees.clone(),
            count,
            memory_range: (cfg.memory_range[0], cfg.memory_range[1]),
            seed: cfg.seed,
        }
    }

    /// Sampler settings for every graph, in split order.
    pub fn samplers(&self) -> Vec<(String, SamplerConfig)> {
        (0..self.count)
            .map(|i| {
                let degree = self.degrees[i % self.degrees.len()];
                let seed = derive_seed(self.seed, self.stream, degree as u64, i as u64);
                let cfg = SamplerConfig::new(self.num_nodes, degree, seed)
                    .with_memory_range(self.memory_range.0, self.memory_range.1);
                (format!("{:?}-{i:06}-d{degree}", self.stream).to_lowercase(), cfg)
            })
            .collect()
    }

    pub fn sample(&self) -> Result<Vec<(ComputeDag, usize)>, TrainError> {
        self.samplers()
            .into_par_iter()
            .map(|(name, cfg)| {
                let dag = sample_dag(&cfg).map_err(|source| TrainError::Sample {
                    name: name.clone(),
                    source,
                })?;
                Ok((dag.renamed(name), cfg.max_degree))
            })
            .collect()
    }
}

/// Embeds and labels graphs in parallel, keeping input order. Graphs whose
/// oracle hits the search budget are skipped and named in the result.
pub fn label_graphs(
    graphs: Vec<(ComputeDag, usize)>,
    num_stages: usize,
    max_degree: usize,
    exact: &ExactConfig,
) -> Result<Dataset, TrainError> {
    let labelled: Vec<Result<Result<Example, String>, TrainError>> = graphs
        .into_par_iter()
        .map(|(dag, degree)| {
            let fail = |source: EpisodeError| TrainError::Episode {
                name: dag.name().to_string(),
                source,
            };
            let embedding = embed_graph(&dag, max_degree).map_err(|e| fail(e.into()))?;
            match oracle_label(&dag, num_stages, exact) {
                Ok(label) => Ok(Ok(Example {
                    dag,
                    degree,
                    embedding,
                    label,
                })),
                Err(ScheduleError::SearchLimit(limit)) => {
                    log::warn!("{}: oracle gave up after {limit} search nodes; skipped", dag.name());
                    Ok(Err(dag.name().to_string()))
                }
                Err(e) => Err(fail(e.into())),
            }
        })
        .collect();
    let mut out = Dataset::default();
    for r in labelled {
        match r? {
            Ok(ex) => out.examples.push(ex),
            Err(name) => out.skipped.push(name),
        }
    }
    Ok(out)
}

/// Per-epoch record written to the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 0 is the untrained policy; training epochs count from 1.
    pub epoch: usize,
    /// Mean reward of the sampled training episodes.
    pub mean_reward: Option<f64>,
    /// Mean greedy reward of the current policy on the validation set.
    pub val_reward: f64,
    pub baseline_promoted: bool,
    /// Validation reward of the baseline after this epoch.
    pub baseline_val_reward: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best policy seen on the validation set.
    pub params: PolicyParams,
    pub history: Vec<EpochMetrics>,
    pub train_graphs: usize,
    pub skipped_graphs: usize,
}

/// Mean greedy reward of `params` over `examples`.
pub fn mean_greedy_reward(examples: &[Example], params: &PolicyParams, reward: &RewardConfig) -> Result<f64, TrainError> {
    let rewards: Vec<Result<f64, TrainError>> = examples
        .par_iter()
        .map(|ex| {
            greedy_reward(&ex.embedding, &ex.dag, &ex.label.target, params, reward).map_err(|source| TrainError::Episode {
                name: ex.dag.name().to_string(),
                source,
            })
        })
        .collect();
    let mut sum = 0.0;
    for r in rewards {
        sum += r?;
    }
    Ok(sum / examples.len().max(1) as f64)
}

/// Initial parameters for a run.
pub fn initial_params(cfg: &TrainConfig) -> PolicyParams {
    PolicyParams::init(
        PolicyConfig::new(cfg.hidden_dim, cfg.max_degree()),
        derive_seed(cfg.seed, Stream::Init, 0, 0),
    )
}

fn exact_config(cfg: &TrainConfig) -> ExactConfig {
    ExactConfig {
        max_expansions: cfg.oracle_max_expansions,
    }
}

/// Samples and labels the training and validation splits.
pub fn build_datasets(cfg: &TrainConfig) -> Result<(Dataset, Dataset), TrainError> {
    let exact = exact_config(cfg);
    let split = |stream, count, name| -> Result<Dataset, TrainError> {
        let graphs = SplitSpec::for_config(cfg, stream, count).sample()?;
        let data = label_graphs(graphs, cfg.num_stages, cfg.max_degree(), &exact)?;
        if data.examples.is_empty() {
            return Err(TrainError::EmptySplit {
                split: name,
                skipped: data.skipped.len(),
            });
        }
        Ok(data)
    };
    Ok((
        split(Stream::Train, cfg.dataset_size(), "training")?,
        split(Stream::Validation, cfg.validation_graphs, "validation")?,
    ))
}

/// Runs training on prepared splits, reporting each epoch to `on_epoch`.
pub fn train_on(
    cfg: &TrainConfig,
    train: &Dataset,
    validation: &Dataset,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let reward = RewardConfig {
        epsilon: cfg.reward_epsilon,
    };
    let mut params = initial_params(cfg);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &params,
    );
    let mut baseline = params.clone();
    let start = Instant::now();
    let mut baseline_val = mean_greedy_reward(&validation.examples, &baseline, &reward)?;
    let mut history = vec![EpochMetrics {
        epoch: 0,
        mean_reward: None,
        val_reward: baseline_val,
        baseline_promoted: false,
        baseline_val_reward: baseline_val,
        wall_ms: start.elapsed().as_millis() as u64,
    }];
    on_epoch(&history[0])?;

    let examples = &train.examples;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::Shuffle, epoch as u64, 0));
        order.sort_unstable();
        order.shuffle(&mut shuffle);

        let mut reward_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let partials: Vec<Result<(PolicyParams, f64), TrainError>> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut grad = params.zeros_like();
                    let mut rewards = 0.0;
                    for &i in chunk {
                        let ex = &examples[i];
                        let fail = |source| TrainError::Episode {
                            name: ex.dag.name().to_string(),
                            source,
                        };
                        let target = &ex.label.target;
                        let b = greedy_reward(&ex.embedding, &ex.dag, target, &baseline, &reward).map_err(fail)?;
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::Episode, epoch as u64, i as u64));
                        let out = reinforce_episode(&ex.embedding, &ex.dag, target, &params, b, &reward, &mut rng)
                            .map_err(fail)?;
                        grad.add_scaled(1.0, &out.grad);
                        rewards += out.trace.reward;
                    }
                    Ok((grad, rewards))
                })
                .collect();
            let mut grad = params.zeros_like();
            for p in partials {
                let (g, r) = p?;
                grad.add_scaled(1.0, &g);
                reward_sum += r;
            }
            grad.scale(1.0 / batch.len() as f64);
            adam.update(&mut params, &grad);
        }
        let mean_reward = reward_sum / examples.len() as f64;

        let val_reward = mean_greedy_reward(&validation.examples, &params, &reward)?;
        let promoted = val_reward > baseline_val;
        if promoted {
            baseline = params.clone();
            baseline_val = val_reward;
        }
        let record = EpochMetrics {
            epoch,
            mean_reward: Some(mean_reward),
            val_reward,
            baseline_promoted: promoted,
            baseline_val_reward: baseline_val,
            wall_ms: t0.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {epoch}: mean reward {mean_reward:.4}, validation {val_reward:.4}{}",
            if promoted { " (new baseline)" } else { "" }
        );
        on_epoch(&record)?;
        history.push(record);
        if epoch > cfg.warmup_epochs && mean_reward < cfg.divergence_reward {
            return Err(TrainError::Diverged {
                epoch,
                mean_reward,
                val_reward,
                baseline_val_reward: baseline_val,
                threshold: cfg.divergence_reward,
            });
        }
    }
    Ok(TrainOutcome {
        params: baseline,
        history,
        train_graphs: examples.len(),
        skipped_graphs: train.skipped.len() + validation.skipped.len(),
    })
}

/// Full run: builds the data, trains, streams metrics as JSON lines and
/// writes the best policy to `cfg.checkpoint`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let (train_set, validation) = build_datasets(cfg)?;
    log::info!(
        "{} training and {} validation graphs labelled, {} skipped",
        train_set.examples.len(),
        validation.examples.len(),
        train_set.skipped.len() + validation.skipped.len()
    );
    let metrics_err = |source| TrainError::Metrics {
        path: cfg.metrics.display().to_string(),
        source,
    };
    if let Some(dir) = cfg.metrics.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(metrics_err)?;
    }
    let mut metrics = BufWriter::new(File::create(&cfg.metrics).map_err(metrics_err)?);
    let outcome = train_on(cfg, &train_set, &validation, |record| {
        let line = serde_json::to_string(record).expect("in-memory JSON serialisation");
        writeln!(metrics, "{line}").and_then(|_| metrics.flush()).map_err(metrics_err)
    })?;
    save_checkpoint(Path::new(&cfg.checkpoint), &outcome.params)?;
    Ok(outcome)
}
