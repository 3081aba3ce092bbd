//! Exhaustive cross-check of the exact search on small random graphs.

use pipesched_core::error::ScheduleError;
use pipesched_core::exact::{brute_force_schedule, exact_schedule};
use pipesched_core::sampler::{sample_dag, SamplerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::train::{derive_seed, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub trial: usize,
    pub num_nodes: usize,
    pub num_stages: usize,
    pub sampler_seed: u64,
    pub exact: Vec<usize>,
    pub exact_peak: u64,
    pub brute_force: Vec<usize>,
    pub brute_force_peak: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleCheckReport {
    pub trials: usize,
    pub mismatches: Vec<Mismatch>,
}

/// Compares [`exact_schedule`] with [`brute_force_schedule`] on `trials`
/// random graphs of 4 to `max_nodes` nodes and 2 to 4 stages. Both the peak
/// and the returned stage vector must agree. Odd trials draw memory from a
/// narrow range so that ties are common.
pub fn oracle_check(max_nodes: usize, trials: usize, seed: u64) -> Result<OracleCheckReport, ScheduleError> {
    let max_nodes = max_nodes.max(4);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Check, 0, 0));
    let mut mismatches = Vec::new();
    for trial in 0..trials {
        let v = rng.random_range(4..=max_nodes);
        let n = rng.random_range(2..=4usize.min(v));
        let degree = rng.random_range(1..v);
        let sampler_seed = rng.random();
        let mut cfg = SamplerConfig::new(v, degree, sampler_seed);
        if trial % 2 == 1 {
            cfg = cfg.with_memory_range(1, 8);
        }
        let dag = sample_dag(&cfg).expect("sampler settings are in range");
        let (a, ao) = exact_schedule(&dag, n)?;
        let (b, bo) = brute_force_schedule(&dag, n)?;
        if a != b || ao != bo {
            mismatches.push(Mismatch {
                trial,
                num_nodes: v,
                num_stages: n,
                sampler_seed,
                exact: a.stage_of,
                exact_peak: ao.peak_stage_memory,
                brute_force: b.stage_of,
                brute_force_peak: bo.peak_stage_memory,
            });
        }
    }
    Ok(OracleCheckReport { trials, mismatches })
}
