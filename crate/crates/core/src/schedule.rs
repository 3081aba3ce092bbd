//! Stage assignments, their memory objective and feasibility checks.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::ScheduleError;
use crate::graph::ComputeDag;

/// Total map from node index to pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schedule {
    pub stage_of: Vec<usize>,
    pub num_stages: usize,
}

/// Per-stage parameter memory and its maximum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleObjective {
    pub peak_stage_memory: u64,
    pub per_stage_memory: Vec<u64>,
}

impl Schedule {
    pub fn new(stage_of: Vec<usize>, num_stages: usize) -> Self {
        Self {
            stage_of,
            num_stages,
        }
    }

    /// Every node on stage 0.
    pub fn single_stage(num_nodes: usize) -> Self {
        Self::new(vec![0; num_nodes], 1)
    }

    pub fn len(&self) -> usize {
        self.stage_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stage_of.is_empty()
    }

    /// Number of nodes on each stage.
    pub fn stage_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_stages];
        for &s in &self.stage_of {
            if s < self.num_stages {
                sizes[s] += 1;
            }
        }
        sizes
    }

    /// Sums node memory per stage. Out-of-range stages are ignored.
    pub fn objective(&self, dag: &ComputeDag) -> ScheduleObjective {
        let mut per_stage_memory = vec![0u64; self.num_stages];
        for (v, &s) in self.stage_of.iter().enumerate() {
            if s < self.num_stages {
                per_stage_memory[s] += dag.memory(v);
            }
        }
        let peak_stage_memory = per_stage_memory.iter().copied().max().unwrap_or(0);
        ScheduleObjective {
            peak_stage_memory,
            per_stage_memory,
        }
    }

    /// Checks length, stage range and `stage_of[u] <= stage_of[v]` for every edge.
    pub fn check_dependencies(&self, dag: &ComputeDag) -> Result<(), ScheduleError> {
        if self.stage_of.len() != dag.len() {
            return Err(ScheduleError::ShapeError {
                expected: dag.len(),
                got: self.stage_of.len(),
            });
        }
        if let Some(&stage) = self.stage_of.iter().find(|&&s| s >= self.num_stages) {
            return Err(ScheduleError::StageOutOfRange {
                stage,
                num_stages: self.num_stages,
            });
        }
        for &(p, c) in dag.edges() {
            if self.stage_of[p] > self.stage_of[c] {
                return Err(ScheduleError::FeasibilityError {
                    parent: p,
                    child: c,
                    parent_stage: self.stage_of[p],
                    child_stage: self.stage_of[c],
                });
            }
        }
        Ok(())
    }

    /// Dependency check plus the requirement that every stage holds a node.
    pub fn check_feasible(&self, dag: &ComputeDag) -> Result<(), ScheduleError> {
        self.check_dependencies(dag)?;
        if let Some(s) = self.stage_sizes().iter().position(|&c| c == 0) {
            return Err(ScheduleError::EmptyStage(s));
        }
        Ok(())
    }

    pub fn is_feasible(&self, dag: &ComputeDag) -> bool {
        self.check_feasible(dag).is_ok()
    }
}

pub(crate) fn check_stage_count(num_nodes: usize, n: usize) -> Result<(), ScheduleError> {
    if n == 0 {
        return Err(ScheduleError::ZeroStages);
    }
    if n > num_nodes {
        return Err(ScheduleError::Infeasible {
            nodes: num_nodes,
            stages: n,
        });
    }
    Ok(())
}

/// Orders nodes by `(stage, asap_level, index)`: the imitation target of a schedule.
pub fn label_sequence(schedule: &Schedule, dag: &ComputeDag) -> Result<Vec<usize>, ScheduleError> {
    schedule.check_dependencies(dag)?;
    let levels = dag.levels();
    let mut order: Vec<usize> = (0..dag.len()).collect();
    order.sort_by_key(|&v| (schedule.stage_of[v], levels[v], v));
    Ok(order)
}

/// Stage capacity used by [`target_fill`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FillTarget {
    /// `total / n`: a stage closes before it would pass an even share.
    EvenShare,
    /// The smallest capacity `c >= max(ceil(total / n), max node)` at which
    /// greedy filling covers the order in at most `n` stages. Equals the
    /// even share whenever that share is reachable.
    Smallest,
}

/// Walks `order` and fills stages up to a memory target.
///
/// Before placing a node on the current stage `k`, the walk moves to `k + 1`
/// when the stage already holds something and either the node would push its
/// sum past the target, or the nodes left are only just enough to give every
/// later stage one node. With `order.len() >= n` every stage is non-empty.
/// Under [`FillTarget::Smallest`] no stage exceeds the target.
pub(crate) fn target_fill(order: &[usize], memory: impl Fn(usize) -> u64, n: usize, target: FillTarget) -> Vec<usize> {
    let mem: Vec<u64> = order.iter().map(|&v| memory(v)).collect();
    let cap = match target {
        FillTarget::EvenShare => mem.iter().map(|&m| u128::from(m)).sum::<u128>() / n.max(1) as u128,
        FillTarget::Smallest => fill_target(&mem, n),
    };
    let len = order.len();
    let mut stage_of = vec![0usize; len];
    let mut stage = 0usize;
    let mut sum: u128 = 0;
    let mut count = 0usize;
    for (pos, (&v, &m)) in order.iter().zip(&mem).enumerate() {
        let m = u128::from(m);
        let remaining = len - pos;
        let stages_after = n - 1 - stage;
        if count > 0 && stage + 1 < n && (sum + m > cap || remaining <= stages_after) {
            stage += 1;
            sum = 0;
            count = 0;
        }
        stage_of[v] = stage;
        sum += m;
        count += 1;
    }
    stage_of
}

/// Smallest capacity at which greedy filling of `mem` needs at most `n` stages.
fn fill_target(mem: &[u64], n: usize) -> u128 {
    let total: u128 = mem.iter().map(|&m| u128::from(m)).sum();
    let largest = mem.iter().copied().max().map_or(0, u128::from);
    let stages_needed = |cap: u128| {
        let (mut stages, mut sum) = (1usize, 0u128);
        for &m in mem {
            let m = u128::from(m);
            if sum > 0 && sum + m > cap {
                stages += 1;
                sum = 0;
            }
            sum += m;
        }
        stages
    };
    let (mut lo, mut hi) = (total.div_ceil(n.max(1) as u128).max(largest), total.max(largest));
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if stages_needed(mid) <= n {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::OpNode;
    use alloc::format;

    fn chain(mem: &[u64]) -> ComputeDag {
        let nodes = mem
            .iter()
            .enumerate()
            .map(|(i, &m)| OpNode::new(format!("n{i}"), m))
            .collect();
        let edges = (1..mem.len()).map(|i| (i - 1, i)).collect();
        ComputeDag::new("chain", nodes, edges).unwrap()
    }

    #[test]
    fn objective_sums_per_stage() {
        let g = chain(&[4, 2, 2, 4]);
        let s = Schedule::new(vec![0, 0, 1, 1], 2);
        let o = s.objective(&g);
        assert_eq!(o.per_stage_memory, vec![6, 6]);
        assert_eq!(o.peak_stage_memory, 6);
        assert!(s.is_feasible(&g));
    }

    #[test]
    fn detects_violations() {
        let g = chain(&[1, 1, 1]);
        assert!(matches!(
            Schedule::new(vec![1, 0, 1], 2).check_feasible(&g),
            Err(ScheduleError::FeasibilityError { parent: 0, child: 1, .. })
        ));
        assert_eq!(
            Schedule::new(vec![0, 0, 0], 2).check_feasible(&g),
            Err(ScheduleError::EmptyStage(1))
        );
        assert!(matches!(
            Schedule::new(vec![0, 0], 2).check_feasible(&g),
            Err(ScheduleError::ShapeError { .. })
        ));
    }

    #[test]
    fn label_sequence_orders_by_stage_then_level() {
        let g = chain(&[4, 2, 2, 4]);
        let s = Schedule::new(vec![0, 0, 1, 1], 2);
        assert_eq!(label_sequence(&s, &g).unwrap(), vec![0, 1, 2, 3]);

        // fan-out: 0 -> {1, 2}, 2 -> 3
        let nodes = (0..4).map(|i| OpNode::new(format!("n{i}"), 1)).collect();
        let g = ComputeDag::new("f", nodes, vec![(0, 1), (0, 2), (2, 3)]).unwrap();
        assert_eq!(
            label_sequence(&Schedule::single_stage(4), &g).unwrap(),
            vec![0, 1, 2, 3]
        );
        let s = Schedule::new(vec![0, 2, 1, 2], 3);
        assert_eq!(label_sequence(&s, &g).unwrap(), vec![0, 2, 1, 3]);
        assert!(label_sequence(&Schedule::new(vec![1, 0, 1, 1], 2), &g).is_err());
    }

    #[test]
    fn target_fill_chain_example() {
        let mem = [4u64, 2, 2, 4];
        assert_eq!(target_fill(&[0, 1, 2, 3], |v| mem[v], 2, FillTarget::EvenShare), vec![0, 0, 1, 1]);
        assert_eq!(target_fill(&[0, 1, 2, 3], |v| mem[v], 2, FillTarget::Smallest), vec![0, 0, 1, 1]);
    }

    #[test]
    fn target_fill_gives_every_stage_a_node() {
        let mem = [5u64, 1, 1, 5];
        assert_eq!(target_fill(&[0, 1, 2, 3], |v| mem[v], 4, FillTarget::EvenShare), vec![0, 1, 2, 3]);
        let mem = [1u64, 1, 1, 100];
        assert_eq!(target_fill(&[0, 1, 2, 3], |v| mem[v], 2, FillTarget::EvenShare), vec![0, 0, 0, 1]);
        assert_eq!(target_fill(&[3, 2, 1, 0], |v| mem[v], 2, FillTarget::EvenShare), vec![1, 1, 1, 0]);
    }

    #[test]
    fn target_fill_raises_an_unreachable_even_share() {
        // ceil(10 / 2) = 5 would need three stages; 6 is the smallest that fits
        let mem = [3u64, 3, 3, 1];
        assert_eq!(fill_target(&mem, 2), 6);
        assert_eq!(target_fill(&[0, 1, 2, 3], |v| mem[v], 2, FillTarget::Smallest), vec![0, 0, 1, 1]);
        assert_eq!(target_fill(&[0, 1, 2, 3], |v| mem[v], 2, FillTarget::EvenShare), vec![0, 1, 1, 1]);
    }
}
