//! Post-inference repair and the pipeline cost model.

use alloc::vec;
use alloc::vec::Vec;

use crate::graph::ComputeDag;
use crate::schedule::{Schedule, ScheduleObjective};

/// How sibling nodes are constrained during repair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoStageRule {
    /// All children of a node with two or more children share one stage.
    AllChildren,
    /// Children placed on a later stage than their parent share one stage;
    /// children kept on the parent's own stage are free.
    CrossingFanOut,
    /// Only the dependency rule is enforced.
    Off,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairReport {
    /// Repaired schedule. Stage indices are kept as repaired, so some of
    /// `0..num_stages` may be empty.
    pub schedule: Schedule,
    /// Stages left without nodes after repair.
    pub empty_stages: Vec<usize>,
}

impl RepairReport {
    pub fn shortfall(&self) -> usize {
        self.empty_stages.len()
    }

    /// Drops empty stages and renumbers the rest in order.
    pub fn compacted(&self) -> Schedule {
        let mut remap = vec![usize::MAX; self.schedule.num_stages];
        let mut next = 0;
        for (s, &size) in self.schedule.stage_sizes().iter().enumerate() {
            if size > 0 {
                remap[s] = next;
                next += 1;
            }
        }
        Schedule::new(
            self.schedule.stage_of.iter().map(|&s| remap[s]).collect(),
            next,
        )
    }
}

/// Makes an arbitrary stage assignment deployable.
///
/// With [`CoStageRule::AllChildren`] nodes are grouped by "is a sibling of"
/// (transitively), and every group first moves to the earliest stage any
/// member was predicted on. After that only upward moves happen, repeated
/// until stable: a child below its parent is pushed up to the parent's stage,
/// and a group whose members disagree is raised to its latest member.
///
/// With [`CoStageRule::CrossingFanOut`] a node whose later-stage children
/// span several stages first pulls them down to the earliest of those, in
/// ASAP order; the loop then raises any such children that drifted apart
/// to the latest one.
///
/// With [`CoStageRule::Off`] only the dependency push runs.
///
/// Every move in the loop only increases stage indices, so it stops after at
/// most `|V| * n` rounds. Stages at or beyond `num_stages` are clamped to the
/// last stage first.
pub fn repair_schedule(schedule: &Schedule, dag: &ComputeDag, rule: CoStageRule) -> RepairReport {
    let n = schedule.num_stages.max(1);
    let mut stage: Vec<usize> = schedule.stage_of.iter().map(|&s| s.min(n - 1)).collect();

    let groups = match rule {
        CoStageRule::AllChildren => sibling_groups(dag),
        CoStageRule::CrossingFanOut | CoStageRule::Off => Vec::new(),
    };
    for g in &groups {
        let earliest = g.iter().map(|&v| stage[v]).min().unwrap_or(0);
        for &v in g {
            stage[v] = earliest;
        }
    }

    let order = dag.asap_order();
    if rule == CoStageRule::CrossingFanOut {
        for &u in &order {
            if let Some(lo) = crossing_range(dag, &stage, u).map(|(lo, _)| lo) {
                for &c in dag.children(u) {
                    if stage[c] > stage[u] {
                        stage[c] = lo;
                    }
                }
            }
        }
    }
    loop {
        let mut changed = false;
        for &v in &order {
            let need = dag.parents(v).iter().map(|&p| stage[p]).max().unwrap_or(0);
            if stage[v] < need {
                stage[v] = need;
                changed = true;
            }
        }
        for g in &groups {
            let latest = g.iter().map(|&v| stage[v]).max().unwrap_or(0);
            for &v in g {
                if stage[v] != latest {
                    stage[v] = latest;
                    changed = true;
                }
            }
        }
        if rule == CoStageRule::CrossingFanOut {
            for &u in &order {
                if let Some((_, hi)) = crossing_range(dag, &stage, u) {
                    for &c in dag.children(u) {
                        if stage[c] > stage[u] && stage[c] != hi {
                            stage[c] = hi;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    let schedule = Schedule::new(stage, n);
    let empty_stages = schedule
        .stage_sizes()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(s, _)| s)
        .collect();
    RepairReport {
        schedule,
        empty_stages,
    }
}

/// Stage range of `u`'s children placed after `u`, if it spans two or more
/// stages.
fn crossing_range(dag: &ComputeDag, stage: &[usize], u: usize) -> Option<(usize, usize)> {
    let mut it = dag.children(u).iter().map(|&c| stage[c]).filter(|&s| s > stage[u]);
    let first = it.next()?;
    let (lo, hi) = it.fold((first, first), |(lo, hi), s| (lo.min(s), hi.max(s)));
    (lo < hi).then_some((lo, hi))
}

/// Connected components of the sibling relation, keeping only groups of two
/// or more nodes. Members are ascending; groups are ordered by first member.
pub fn sibling_groups(dag: &ComputeDag) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..dag.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for u in 0..dag.len() {
        let kids = dag.children(u);
        if kids.len() < 2 {
            continue;
        }
        for w in kids.windows(2) {
            let a = find(&mut parent, w[0]);
            let b = find(&mut parent, w[1]);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); dag.len()];
    for v in 0..dag.len() {
        let r = find(&mut parent, v);
        by_root[r].push(v);
    }
    by_root.into_iter().filter(|g| g.len() >= 2).collect()
}

/// Constants of the latency proxy. Units are bytes of parameter traffic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    /// On-chip parameter cache per stage.
    pub cache_bytes: u64,
    /// Cost per byte resident on a stage.
    pub alpha: f64,
    /// Extra cost per byte that does not fit in the cache.
    pub beta: f64,
    /// Fixed cost per hop between consecutive stages.
    pub kappa: f64,
}

pub const DEFAULT_CACHE_BYTES: u64 = 8 << 20;

impl Default for CostModel {
    fn default() -> Self {
        Self {
            cache_bytes: DEFAULT_CACHE_BYTES,
            alpha: 1.0,
            beta: 64.0,
            kappa: (1 << 20) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub memory_bytes: u64,
    pub on_cache_bytes: u64,
    pub off_cache_bytes: u64,
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub stages: Vec<StageCost>,
    /// Slowest stage.
    pub bottleneck: f64,
    pub hops: usize,
    /// Edges whose endpoints sit on different stages.
    pub cross_stage_edges: usize,
    /// `bottleneck + kappa * hops`.
    pub pipeline_latency: f64,
}

impl CostModel {
    pub fn evaluate(&self, schedule: &Schedule, dag: &ComputeDag) -> CostReport {
        let obj = schedule.objective(dag);
        debug_assert!(
            obj.per_stage_memory.iter().zip(schedule.stage_sizes()).all(|(_, c)| c > 0),
            "cost model expects non-empty stages"
        );
        let stages: Vec<StageCost> = obj
            .per_stage_memory
            .iter()
            .map(|&mem| {
                let on = mem.min(self.cache_bytes);
                let off = mem.saturating_sub(self.cache_bytes);
                StageCost {
                    memory_bytes: mem,
                    on_cache_bytes: on,
                    off_cache_bytes: off,
                    latency: self.alpha * mem as f64 + self.beta * off as f64,
                }
            })
            .collect();
        let bottleneck = stages.iter().map(|s| s.latency).fold(0.0, f64::max);
        let hops = schedule.num_stages.saturating_sub(1);
        let cross_stage_edges = dag
            .edges()
            .iter()
            .filter(|&&(p, c)| schedule.stage_of[p] != schedule.stage_of[c])
            .count();
        CostReport {
            stages,
            bottleneck,
            hops,
            cross_stage_edges,
            pipeline_latency: bottleneck + self.kappa * hops as f64,
        }
    }
}

/// Proxy latency under [`CostModel::default`].
pub fn cost_model(schedule: &Schedule, dag: &ComputeDag) -> CostReport {
    CostModel::default().evaluate(schedule, dag)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gap {
    /// `|peak_candidate - peak_exact| / peak_exact`.
    pub relative: f64,
    /// Absolute differences of the stage-memory vectors, each sorted descending.
    pub per_stage_abs_diff: Vec<u64>,
}

impl Gap {
    pub fn percent(&self) -> f64 {
        self.relative * 100.0
    }
}

pub fn gap_to_optimal(candidate: &ScheduleObjective, exact: &ScheduleObjective) -> Gap {
    let relative = if exact.peak_stage_memory == 0 {
        if candidate.peak_stage_memory == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        candidate.peak_stage_memory.abs_diff(exact.peak_stage_memory) as f64
            / exact.peak_stage_memory as f64
    };
    let mut a = candidate.per_stage_memory.clone();
    let mut b = exact.per_stage_memory.clone();
    a.sort_unstable_by(|x, y| y.cmp(x));
    b.sort_unstable_by(|x, y| y.cmp(x));
    let len = a.len().max(b.len());
    a.resize(len, 0);
    b.resize(len, 0);
    Gap {
        relative,
        per_stage_abs_diff: a.iter().zip(&b).map(|(x, y)| x.abs_diff(*y)).collect(),
    }
}
