//! Random DAG generator shaped after DNN operator graphs.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::GraphError;
use crate::graph::{ComputeDag, OpNode};

/// Default memory range: 1 KiB to 4 MiB per operator.
pub const DEFAULT_MEMORY_RANGE: (u64, u64) = (1 << 10, 4 << 20);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub num_nodes: usize,
    pub max_degree: usize,
    /// Inclusive bounds for per-operator memory.
    pub memory_range: (u64, u64),
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(num_nodes: usize, max_degree: usize, seed: u64) -> Self {
        Self {
            num_nodes,
            max_degree,
            memory_range: DEFAULT_MEMORY_RANGE,
            seed,
        }
    }

    pub fn with_memory_range(mut self, min: u64, max: u64) -> Self {
        self.memory_range = (min, max);
        self
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.num_nodes < 2 {
            return Err(GraphError::ConfigError("num_nodes must be at least 2"));
        }
        if self.max_degree < 1 {
            return Err(GraphError::ConfigError("max_degree must be at least 1"));
        }
        if self.max_degree >= self.num_nodes {
            return Err(GraphError::ConfigError(
                "max_degree must be below num_nodes so it can be attained",
            ));
        }
        if self.memory_range.0 > self.memory_range.1 {
            return Err(GraphError::ConfigError("memory_range min exceeds max"));
        }
        Ok(())
    }
}

/// Samples a DAG whose topology is fixed by `cfg.seed`.
///
/// Node 0 is the only guaranteed source. Every later node `i` draws a parent
/// count uniformly from `1..=max_degree` (capped at `i`) and that many distinct
/// parents uniformly from `0..i`, so edges always point to higher indices. If
/// no node reaches `max_degree` parents, the last node is given a fresh
/// `max_degree`-sized parent set.
pub fn sample_dag(cfg: &SamplerConfig) -> Result<ComputeDag, GraphError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.num_nodes;
    let d = cfg.max_degree;

    let mut parent_sets: Vec<Vec<usize>> = Vec::with_capacity(n);
    parent_sets.push(Vec::new());
    for i in 1..n {
        let k = rng.random_range(1..=d).min(i);
        parent_sets.push(draw_parents(&mut rng, i, k));
    }
    if parent_sets.iter().all(|p| p.len() < d) {
        parent_sets[n - 1] = draw_parents(&mut rng, n - 1, d);
    }

    let (lo, hi) = cfg.memory_range;
    let nodes = (0..n)
        .map(|i| OpNode::new(format!("op_{i}"), rng.random_range(lo..=hi)))
        .collect();
    let edges = parent_sets
        .iter()
        .enumerate()
        .flat_map(|(c, ps)| ps.iter().map(move |&p| (p, c)))
        .collect();
    ComputeDag::new(format!("synthetic-{}", cfg.seed), nodes, edges)
}

fn draw_parents(rng: &mut ChaCha8Rng, below: usize, count: usize) -> Vec<usize> {
    let mut ps = index::sample(rng, below, count).into_vec();
    ps.sort_unstable();
    ps
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn two_nodes_degree_one_is_single_edge() {
        for seed in 0..20 {
            let g = sample_dag(&SamplerConfig::new(2, 1, seed)).unwrap();
            assert_eq!(g.edges(), &[(0, 1)]);
        }
    }

    #[test]
    fn same_seed_same_graph() {
        let cfg = SamplerConfig::new(30, 4, 99);
        assert_eq!(sample_dag(&cfg).unwrap(), sample_dag(&cfg).unwrap());
        let other = SamplerConfig::new(30, 4, 100);
        assert_ne!(sample_dag(&cfg).unwrap(), sample_dag(&other).unwrap());
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(sample_dag(&SamplerConfig::new(1, 1, 0)).is_err());
        assert!(sample_dag(&SamplerConfig::new(5, 0, 0)).is_err());
        assert!(sample_dag(&SamplerConfig::new(3, 3, 0)).is_err());
        assert!(sample_dag(&SamplerConfig::new(5, 2, 0).with_memory_range(9, 3)).is_err());
    }

    #[test]
    fn degree_bound_attained_and_never_exceeded() {
        for d in 2..=6 {
            for seed in 0..1000u64 {
                let g = sample_dag(&SamplerConfig::new(30, d, seed)).unwrap();
                assert_eq!(g.max_in_degree(), d, "degree {d} seed {seed}");
            }
        }
    }

    #[test]
    fn no_isolated_nodes() {
        for seed in 0..200 {
            let g = sample_dag(&SamplerConfig::new(12, 3, seed)).unwrap();
            let mut touched = vec![false; g.len()];
            for &(p, c) in g.edges() {
                touched[p] = true;
                touched[c] = true;
            }
            assert!(touched.iter().all(|&t| t));
            assert!(g.is_index_topological());
        }
    }

    #[test]
    fn memory_mean_near_midpoint() {
        let (lo, hi) = DEFAULT_MEMORY_RANGE;
        let mut sum = 0f64;
        let mut count = 0f64;
        for seed in 0..10_000 {
            let g = sample_dag(&SamplerConfig::new(10, 3, seed)).unwrap();
            for node in g.nodes() {
                assert!((lo..=hi).contains(&node.memory_bytes));
                sum += node.memory_bytes as f64;
                count += 1.0;
            }
        }
        let mid = (lo + hi) as f64 / 2.0;
        let rel = libm::fabs(sum / count - mid) / mid;
        assert!(rel < 0.02, "relative deviation {rel}");
    }
}
