//! Imitation rewards, the sequence-to-schedule map and REINFORCE pieces.
//!
//! The trainer samples a permutation `pi` from the policy, maps it and the
//! oracle's label sequence `gamma` to stage vectors with [`seq_to_schedule`],
//! scores them with [`cosine_reward`] and descends on
//! `advantage * log p(pi | G)` with `advantage = (1 - R) - (1 - R_baseline)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::deploy::{repair_schedule, CoStageRule, RepairReport};
use crate::embed::{embed_graph, GraphEmbedding};
use crate::error::{EpisodeError, RewardError, ScheduleError};
use crate::exact::{exact_schedule_with, ExactConfig, SearchStats};
use crate::graph::ComputeDag;
use crate::policy::{backward, decode_sequence, encode, greedy_decode, DecodeMode, EpisodeTrace, PolicyParams};
use crate::schedule::{check_stage_count, label_sequence, target_fill, FillTarget, Schedule, ScheduleObjective};

pub const DEFAULT_REWARD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub epsilon: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_REWARD_EPSILON,
        }
    }
}

/// Maps a node ordering to `n` stages by memory-target filling.
///
/// The target is the smallest stage capacity at which filling along `pi`
/// fits in `n` stages, so the result is the min-peak split of `pi` into `n`
/// consecutive runs. With `|V| >= n` every stage ends up non-empty. The
/// result need not respect dependencies when `pi` is not topological.
pub fn seq_to_schedule(pi: &[usize], dag: &ComputeDag, n: usize) -> Result<Schedule, ScheduleError> {
    if pi.len() != dag.len() {
        return Err(ScheduleError::ShapeError {
            expected: dag.len(),
            got: pi.len(),
        });
    }
    let mut seen = vec![false; pi.len()];
    for &v in pi {
        if v >= pi.len() || seen[v] {
            return Err(ScheduleError::ShapeError {
                expected: dag.len(),
                got: seen.iter().filter(|&&s| s).count(),
            });
        }
        seen[v] = true;
    }
    check_stage_count(dag.len(), n)?;
    Ok(Schedule::new(target_fill(pi, |v| dag.memory(v), n, FillTarget::Smallest), n))
}

fn cosine(a: impl Iterator<Item = f64> + Clone, b: impl Iterator<Item = f64> + Clone, epsilon: f64) -> f64 {
    let num: f64 = a.clone().zip(b.clone()).map(|(x, y)| x * y).sum();
    let na: f64 = a.map(|x| x * x).sum();
    let nb: f64 = b.map(|x| x * x).sum();
    // sqrt(na * nb) rather than sqrt(na) * sqrt(nb): exact when na == nb
    let den = libm::sqrt(na * nb).max(epsilon);
    (num / den).clamp(0.0, 1.0)
}

/// Cosine similarity of two stage vectors, guarded by `epsilon`.
pub fn cosine_reward(s: &[usize], s_prime: &[usize], epsilon: f64) -> Result<f64, RewardError> {
    if s.len() != s_prime.len() {
        return Err(RewardError::ShapeError(s.len(), s_prime.len()));
    }
    let f = |x: &usize| *x as f64;
    Ok(cosine(s.iter().map(f), s_prime.iter().map(f), epsilon))
}

/// Cosine similarity of two node orderings taken as integer vectors.
pub fn sequence_reward(pi: &[usize], gamma: &[usize], epsilon: f64) -> Result<f64, RewardError> {
    cosine_reward(pi, gamma, epsilon)
}

/// Oracle labels for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleLabel {
    pub schedule: Schedule,
    pub objective: ScheduleObjective,
    /// `gamma`: nodes sorted by (stage, level, index).
    pub sequence: Vec<usize>,
    /// `rho(gamma)`: the reward target.
    pub target: Schedule,
    pub stats: SearchStats,
}

pub fn oracle_label(dag: &ComputeDag, n: usize, cfg: &ExactConfig) -> Result<OracleLabel, ScheduleError> {
    let (schedule, objective, stats) = exact_schedule_with(dag, n, cfg)?;
    let sequence = label_sequence(&schedule, dag)?;
    let target = seq_to_schedule(&sequence, dag, n)?;
    Ok(OracleLabel {
        schedule,
        objective,
        sequence,
        target,
        stats,
    })
}

/// Reward of the policy's greedy decode against `target`.
pub fn greedy_reward(
    embedding: &GraphEmbedding,
    dag: &ComputeDag,
    target: &Schedule,
    params: &PolicyParams,
    reward: &RewardConfig,
) -> Result<f64, EpisodeError> {
    let enc = encode(embedding, params)?;
    let trace = greedy_decode(&enc, params)?;
    let s = seq_to_schedule(&trace.sequence, dag, target.num_stages)?;
    Ok(cosine_reward(&target.stage_of, &s.stage_of, reward.epsilon)?)
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub trace: EpisodeTrace,
    pub advantage: f64,
    /// Gradient of `advantage * log p(pi | G)`.
    pub grad: PolicyParams,
}

/// Samples one episode and returns its REINFORCE gradient.
///
/// `baseline_reward` is the greedy reward of the baseline policy on the same
/// graph.
pub fn reinforce_episode<R: Rng + ?Sized>(
    embedding: &GraphEmbedding,
    dag: &ComputeDag,
    target: &Schedule,
    params: &PolicyParams,
    baseline_reward: f64,
    reward: &RewardConfig,
    rng: &mut R,
) -> Result<EpisodeOutcome, EpisodeError> {
    let enc = encode(embedding, params)?;
    let mut trace = decode_sequence(&enc, params, DecodeMode::Sample, rng)?;
    let s = seq_to_schedule(&trace.sequence, dag, target.num_stages)?;
    trace.reward = cosine_reward(&target.stage_of, &s.stage_of, reward.epsilon)?;
    let advantage = (1.0 - trace.reward) - (1.0 - baseline_reward);
    let grad = backward(&enc, &trace, advantage, params)?;
    Ok(EpisodeOutcome { trace, advantage, grad })
}

/// Inference path: greedy decode, map to `n` stages, repair.
pub fn policy_schedule(
    dag: &ComputeDag,
    params: &PolicyParams,
    n: usize,
    rule: CoStageRule,
) -> Result<(EpisodeTrace, RepairReport), EpisodeError> {
    let embedding = embed_graph(dag, params.config.max_degree)?;
    let enc = encode(&embedding, params)?;
    let trace = greedy_decode(&enc, params)?;
    let raw = seq_to_schedule(&trace.sequence, dag, n)?;
    let report = repair_schedule(&raw, dag, rule);
    Ok((trace, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: PolicyParams,
    pub v: PolicyParams,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &PolicyParams) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// One descent step along `grad`.
    pub fn update(&mut self, params: &mut PolicyParams, grad: &PolicyParams) {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(beta1, t as f64);
        let c2 = 1.0 - libm::pow(beta2, t as f64);
        let ps = params.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, m), v), g) in ps.into_iter().zip(ms).zip(vs).zip(grad.tensors()) {
            let it = p
                .as_mut_slice()
                .iter_mut()
                .zip(m.as_mut_slice().iter_mut())
                .zip(v.as_mut_slice().iter_mut())
                .zip(g.as_slice());
            for (((p, m), v), &g) in it {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= learning_rate * mh / (libm::sqrt(vh) + epsilon);
            }
        }
    }
}
