//! Gap-to-optimal and solve-time evaluation of a policy against the exact
//! and heuristic schedulers.

use std::collections::BTreeMap;
use std::time::Instant;

use pipesched_core::deploy::{cost_model, gap_to_optimal, repair_schedule, CoStageRule, RepairReport};
use pipesched_core::error::{EpisodeError, ScheduleError};
use pipesched_core::exact::{exact_schedule_with, ExactConfig};
use pipesched_core::graph::ComputeDag;
use pipesched_core::heuristic::list_schedule;
use pipesched_core::policy::PolicyParams;
use pipesched_core::rl::{cosine_reward, policy_schedule, seq_to_schedule, DEFAULT_REWARD_EPSILON};
use pipesched_core::schedule::{label_sequence, Schedule, ScheduleObjective};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("graph {name}: {source}")]
    Episode {
        name: String,
        #[source]
        source: EpisodeError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub num_stages: usize,
    pub co_stage: CoStageRule,
    pub exact: ExactConfig,
    pub reward_epsilon: f64,
}

impl EvalOptions {
    pub fn new(num_stages: usize) -> Self {
        Self {
            num_stages,
            co_stage: CoStageRule::Off,
            exact: ExactConfig::default(),
            reward_epsilon: DEFAULT_REWARD_EPSILON,
        }
    }
}

/// Stable name of a co-stage rule in reports and on the command line.
pub fn co_stage_name(rule: CoStageRule) -> &'static str {
    match rule {
        CoStageRule::Off => "off",
        CoStageRule::CrossingFanOut => "crossing",
        CoStageRule::AllChildren => "all",
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerMethod<T> {
    pub rl: T,
    pub exact: T,
    pub heuristic: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub graph: String,
    pub num_nodes: usize,
    /// Largest in-degree.
    pub degree: usize,
    pub n: usize,
    pub peak_rl: u64,
    pub peak_exact: u64,
    pub peak_heuristic: u64,
    pub gap_pct: f64,
    pub heuristic_gap_pct: f64,
    /// Imitation reward of the greedy decode, before repair.
    pub reward: f64,
    /// The repaired policy schedule respects every dependency.
    pub feasible: bool,
    /// Stages the repaired policy schedule leaves empty.
    pub shortfall: usize,
    /// Stage memory per method, in stage order.
    pub per_stage: PerMethod<Vec<u64>>,
    pub proxy_latency: PerMethod<f64>,
    pub solve_ms: PerMethod<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub graphs: usize,
    pub mean_reward: f64,
    pub mean_gap_pct: f64,
    pub max_gap_pct: f64,
    pub mean_heuristic_gap_pct: f64,
    pub feasibility_rate: f64,
    pub mean_solve_ms: PerMethod<f64>,
}

impl Aggregate {
    fn of<'a>(reports: impl Iterator<Item = &'a GraphReport> + Clone) -> Self {
        let count = reports.clone().count();
        let mean = |f: &dyn Fn(&GraphReport) -> f64| {
            if count == 0 {
                0.0
            } else {
                reports.clone().map(f).sum::<f64>() / count as f64
            }
        };
        Self {
            graphs: count,
            mean_reward: mean(&|r| r.reward),
            mean_gap_pct: mean(&|r| r.gap_pct),
            max_gap_pct: reports.clone().map(|r| r.gap_pct).fold(0.0, f64::max),
            mean_heuristic_gap_pct: mean(&|r| r.heuristic_gap_pct),
            feasibility_rate: mean(&|r| if r.feasible { 1.0 } else { 0.0 }),
            mean_solve_ms: PerMethod {
                rl: mean(&|r| r.solve_ms.rl),
                exact: mean(&|r| r.solve_ms.exact),
                heuristic: mean(&|r| r.solve_ms.heuristic),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeAggregate {
    pub degree: usize,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub co_stage: String,
    pub summary: Aggregate,
    pub per_degree: Vec<DegreeAggregate>,
    /// Graphs the exact search could not finish within its budget.
    pub skipped: Vec<String>,
    pub graphs: Vec<GraphReport>,
}

/// Repairs `raw` and scores the result.
pub fn deploy(dag: &ComputeDag, raw: &Schedule, rule: CoStageRule) -> (RepairReport, ScheduleObjective) {
    let report = repair_schedule(raw, dag, rule);
    let objective = report.schedule.objective(dag);
    (report, objective)
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Scores one graph, or `None` when the exact search runs out of budget.
pub fn evaluate_graph(dag: &ComputeDag, params: &PolicyParams, opts: &EvalOptions) -> Result<Option<GraphReport>, EvalError> {
    let n = opts.num_stages;
    let fail = |source: EpisodeError| EvalError::Episode {
        name: dag.name().to_string(),
        source,
    };

    let t = Instant::now();
    let exact = exact_schedule_with(dag, n, &opts.exact);
    let exact_ms = ms(t);
    let (exact_sched, exact_obj, _) = match exact {
        Ok(r) => r,
        Err(ScheduleError::SearchLimit(limit)) => {
            log::warn!("{}: exact search gave up after {limit} search nodes; skipped", dag.name());
            return Ok(None);
        }
        Err(e) => return Err(fail(e.into())),
    };

    let t = Instant::now();
    let heuristic = list_schedule(dag, n);
    let heuristic_ms = ms(t);
    let (heur_sched, heur_obj) = heuristic.map_err(|e| fail(e.into()))?;

    let t = Instant::now();
    let rl = policy_schedule(dag, params, n, opts.co_stage);
    let rl_ms = ms(t);
    let (trace, repaired) = rl.map_err(fail)?;
    let rl_obj = repaired.schedule.objective(dag);

    let gamma = label_sequence(&exact_sched, dag).map_err(|e| fail(e.into()))?;
    let target = seq_to_schedule(&gamma, dag, n).map_err(|e| fail(e.into()))?;
    let raw = seq_to_schedule(&trace.sequence, dag, n).map_err(|e| fail(e.into()))?;
    let reward = cosine_reward(&target.stage_of, &raw.stage_of, opts.reward_epsilon).map_err(|e| fail(e.into()))?;

    let latency = |s: &Schedule| cost_model(s, dag).pipeline_latency;
    Ok(Some(GraphReport {
        graph: dag.name().to_string(),
        num_nodes: dag.len(),
        degree: dag.max_in_degree(),
        n,
        peak_rl: rl_obj.peak_stage_memory,
        peak_exact: exact_obj.peak_stage_memory,
        peak_heuristic: heur_obj.peak_stage_memory,
        gap_pct: gap_to_optimal(&rl_obj, &exact_obj).percent(),
        heuristic_gap_pct: gap_to_optimal(&heur_obj, &exact_obj).percent(),
        reward,
        feasible: repaired.schedule.check_dependencies(dag).is_ok(),
        shortfall: repaired.shortfall(),
        per_stage: PerMethod {
            rl: rl_obj.per_stage_memory.clone(),
            exact: exact_obj.per_stage_memory.clone(),
            heuristic: heur_obj.per_stage_memory.clone(),
        },
        proxy_latency: PerMethod {
            rl: latency(&repaired.compacted()),
            exact: latency(&exact_sched),
            heuristic: latency(&heur_sched),
        },
        solve_ms: PerMethod {
            rl: rl_ms,
            exact: exact_ms,
            heuristic: heuristic_ms,
        },
    }))
}

/// Evaluates every graph in order. Graphs run one at a time so the solve
/// times are not skewed by contention.
pub fn evaluate(graphs: &[ComputeDag], params: &PolicyParams, opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    let mut reports = Vec::with_capacity(graphs.len());
    let mut skipped = Vec::new();
    for dag in graphs {
        match evaluate_graph(dag, params, opts)? {
            Some(r) => reports.push(r),
            None => skipped.push(dag.name().to_string()),
        }
    }
    let mut by_degree: BTreeMap<usize, Vec<&GraphReport>> = BTreeMap::new();
    for r in &reports {
        by_degree.entry(r.degree).or_default().push(r);
    }
    let per_degree = by_degree
        .into_iter()
        .map(|(degree, rs)| DegreeAggregate {
            degree,
            aggregate: Aggregate::of(rs.iter().copied()),
        })
        .collect();
    Ok(EvalReport {
        n: opts.num_stages,
        co_stage: co_stage_name(opts.co_stage).to_string(),
        summary: Aggregate::of(reports.iter()),
        per_degree,
        skipped,
        graphs: reports,
    })
}
