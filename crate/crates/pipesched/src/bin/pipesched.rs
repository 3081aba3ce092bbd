use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pipesched::check::oracle_check;
use pipesched::config::TrainConfig;
use pipesched::evaluate::{evaluate, EvalOptions};
use pipesched::io::{list_graph_files, load_checkpoint, load_graph, save_graph, save_report, save_schedule};
use pipesched::train::{derive_seed, train, Stream};
use pipesched_core::deploy::CoStageRule;
use pipesched_core::exact::{exact_schedule_with, ExactConfig};
use pipesched_core::heuristic::list_schedule;
use pipesched_core::rl::policy_schedule;
use pipesched_core::sampler::{sample_dag, SamplerConfig, DEFAULT_MEMORY_RANGE};

#[derive(Parser)]
#[command(name = "pipesched", version, about = "Pipeline-stage scheduling of computational DAGs")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Exact,
    Heuristic,
    Rl,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoStage {
    /// Enforce dependencies only.
    Off,
    /// Children on later stages than their parent share one stage.
    Crossing,
    /// All children of a node share one stage.
    All,
}

impl From<CoStage> for CoStageRule {
    fn from(c: CoStage) -> Self {
        match c {
            CoStage::Off => CoStageRule::Off,
            CoStage::Crossing => CoStageRule::CrossingFanOut,
            CoStage::All => CoStageRule::AllChildren,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write random graphs.
    Sample {
        #[arg(long)]
        nodes: usize,
        /// Largest in-degree; every graph attains it.
        #[arg(long)]
        degree: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MEMORY_RANGE.0)]
        memory_min: u64,
        #[arg(long, default_value_t = DEFAULT_MEMORY_RANGE.1)]
        memory_max: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Schedule one graph.
    Schedule {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        stages: usize,
        #[arg(long, value_enum)]
        method: Method,
        /// Policy checkpoint, required by `--method rl`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sibling rule applied when repairing a policy schedule.
        #[arg(long, value_enum, default_value = "off")]
        co_stage: CoStage,
        /// Give up on the exact search after this many search nodes.
        #[arg(long)]
        max_expansions: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the checkpoint path in the config file.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides the metrics path in the config file.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Compare a policy with the exact and heuristic schedulers.
    Evaluate {
        /// Directory of graph files.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        stages: usize,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "off")]
        co_stage: CoStage,
        #[arg(long)]
        max_expansions: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the exact search against exhaustive enumeration.
    OracleCheck {
        #[arg(long, default_value_t = 8)]
        max_nodes: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    let threads = pipesched::init_threads()?;
    log::debug!("{threads} worker threads");
    match cli.command {
        Command::Sample {
            nodes,
            degree,
            count,
            seed,
            memory_min,
            memory_max,
            out,
        } => {
            for i in 0..count {
                let cfg = SamplerConfig::new(nodes, degree, derive_seed(seed, Stream::Sample, degree as u64, i as u64))
                    .with_memory_range(memory_min, memory_max);
                let dag = sample_dag(&cfg)?.renamed(format!("sample-n{nodes}-d{degree}-{i:05}"));
                save_graph(&out.join(format!("graph-{i:05}.json")), &dag)?;
            }
            println!("wrote {count} graphs to {}", out.display());
        }
        Command::Schedule {
            graph,
            stages,
            method,
            checkpoint,
            co_stage,
            max_expansions,
            out,
        } => {
            let dag = load_graph(&graph)?;
            let t = Instant::now();
            let schedule = match method {
                Method::Exact => exact_schedule_with(&dag, stages, &ExactConfig { max_expansions })?.0,
                Method::Heuristic => list_schedule(&dag, stages)?.0,
                Method::Rl => {
                    let Some(path) = checkpoint else {
                        bail!("--method rl needs --checkpoint");
                    };
                    let params = load_checkpoint(&path)?;
                    let (_, report) = policy_schedule(&dag, &params, stages, co_stage.into())
                        .with_context(|| format!("scheduling {}", graph.display()))?;
                    if report.shortfall() > 0 {
                        log::warn!(
                            "repair emptied stages {:?}; writing {} stages",
                            report.empty_stages,
                            stages - report.shortfall()
                        );
                    }
                    report.compacted()
                }
            };
            log::info!("scheduled in {:.3} ms", t.elapsed().as_secs_f64() * 1e3);
            let objective = schedule.objective(&dag);
            save_schedule(&out, &schedule, &objective)?;
            println!("peak_stage_memory {}", objective.peak_stage_memory);
            println!("per_stage_memory {:?}", objective.per_stage_memory);
        }
        Command::Train {
            config,
            seed,
            checkpoint,
            metrics,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.checkpoint = checkpoint.unwrap_or(cfg.checkpoint);
            cfg.metrics = metrics.unwrap_or(cfg.metrics);
            let outcome = train(&cfg)?;
            let best = outcome.history.iter().map(|m| m.baseline_val_reward).fold(f64::MIN, f64::max);
            println!(
                "trained on {} graphs ({} skipped); best validation reward {best:.4}",
                outcome.train_graphs, outcome.skipped_graphs
            );
            println!("checkpoint {}", cfg.checkpoint.display());
            println!("metrics {}", cfg.metrics.display());
        }
        Command::Evaluate {
            dataset,
            stages,
            checkpoint,
            co_stage,
            max_expansions,
            out,
        } => {
            let params = load_checkpoint(&checkpoint)?;
            let files = list_graph_files(&dataset)?;
            if files.is_empty() {
                bail!("{}: no graph files", dataset.display());
            }
            let graphs = files.iter().map(|f| load_graph(f)).collect::<Result<Vec<_>, _>>()?;
            let opts = EvalOptions {
                co_stage: co_stage.into(),
                exact: ExactConfig { max_expansions },
                ..EvalOptions::new(stages)
            };
            let report = evaluate(&graphs, &params, &opts)?;
            save_report(&out, &report)?;
            let s = &report.summary;
            println!(
                "{} graphs ({} skipped): mean reward {:.4}, mean gap {:.2}% (heuristic {:.2}%), feasible {:.3}",
                s.graphs,
                report.skipped.len(),
                s.mean_reward,
                s.mean_gap_pct,
                s.mean_heuristic_gap_pct,
                s.feasibility_rate
            );
            println!(
                "mean solve ms: rl {:.3}, exact {:.3}, heuristic {:.3}",
                s.mean_solve_ms.rl, s.mean_solve_ms.exact, s.mean_solve_ms.heuristic
            );
        }
        Command::OracleCheck {
            max_nodes,
            trials,
            seed,
        } => {
            if max_nodes > pipesched_core::exact::BRUTE_FORCE_LIMIT {
                bail!("--max-nodes is limited to {}", pipesched_core::exact::BRUTE_FORCE_LIMIT);
            }
            let report = oracle_check(max_nodes, trials, seed)?;
            for m in &report.mismatches {
                eprintln!(
                    "trial {}: |V| = {}, n = {}: exact {:?} (peak {}) vs exhaustive {:?} (peak {})",
                    m.trial, m.num_nodes, m.num_stages, m.exact, m.exact_peak, m.brute_force, m.brute_force_peak
                );
            }
            println!("{} trials, {} mismatches", report.trials, report.mismatches.len());
            if !report.mismatches.is_empty() {
                bail!("the exact search disagrees with exhaustive enumeration");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
