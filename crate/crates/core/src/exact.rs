//! Exact minimum-peak-memory pipeline partitioning.
//!
//! A schedule assigns each node a stage in `0..n` with
//! `stage_of[parent] <= stage_of[child]` and no empty stage. The objective is
//! the largest per-stage memory sum. Among optimal schedules the
//! lexicographically smallest `stage_of` vector is returned.
//!
//! The search is a depth-first branch-and-bound that builds stages one at a
//! time. Stage `k` is chosen by walking the unplaced nodes in index order and
//! branching include-before-exclude, where including a node pulls in its
//! unplaced ancestors and excluding it pushes out its descendants. A stage is
//! pruned once its sum reaches the incumbent or when what it leaves behind
//! cannot fit into the later stages, and remainders already shown not to beat
//! a given peak are cached.
//!
//! [`exact_schedule`] runs in two phases:
//!
//! 1. Find the optimal peak. The first attempt asks for a schedule at the
//!    lower bound `max(ceil(total / n), max node)`, which succeeds quickly on
//!    most large graphs; otherwise the list-scheduling result is improved
//!    until the search space is exhausted.
//! 2. Recover the tie-break winner. Nodes are fixed in index order to the
//!    smallest stage that still admits a completion at the optimal peak, each
//!    check being the same search with some nodes pinned.
//!
//! [`brute_force_schedule`] enumerates every assignment and exists to
//! cross-check the search.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::ScheduleError;
use crate::graph::ComputeDag;
use crate::heuristic::list_schedule;
use crate::schedule::{check_stage_count, Schedule, ScheduleObjective};

/// Largest graph [`brute_force_schedule`] accepts.
pub const BRUTE_FORCE_LIMIT: usize = 12;

/// Entries kept in each cache of exhausted remainders.
const MEMO_CAPACITY: usize = 1 << 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExactConfig {
    /// Abort with [`ScheduleError::SearchLimit`] after this many search nodes.
    pub max_expansions: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Search nodes over both phases.
    pub expansions: u64,
    /// Search nodes spent finding and proving the optimal peak.
    pub optimum_expansions: u64,
    /// The optimum equals the root lower bound.
    pub hit_root_bound: bool,
    pub root_bound: u64,
}

/// Lower bound every schedule satisfies: `max(ceil(total / n), max node)`.
pub fn peak_lower_bound(dag: &ComputeDag, n: usize) -> u64 {
    let max_node = (0..dag.len()).map(|v| dag.memory(v)).max().unwrap_or(0);
    dag.total_memory().div_ceil(n.max(1) as u64).max(max_node)
}

/// Optimal schedule under the default (unbounded) search budget.
pub fn exact_schedule(
    dag: &ComputeDag,
    n: usize,
) -> Result<(Schedule, ScheduleObjective), ScheduleError> {
    exact_schedule_with(dag, n, &ExactConfig::default()).map(|(s, o, _)| (s, o))
}

pub fn exact_schedule_with(
    dag: &ComputeDag,
    n: usize,
    cfg: &ExactConfig,
) -> Result<(Schedule, ScheduleObjective, SearchStats), ScheduleError> {
    check_stage_count(dag.len(), n)?;
    let root_bound = peak_lower_bound(dag, n);
    if n == 1 {
        let s = Schedule::single_stage(dag.len());
        let o = s.objective(dag);
        let stats = SearchStats {
            hit_root_bound: true,
            root_bound,
            ..SearchStats::default()
        };
        return Ok((s, o, stats));
    }

    let (seed, seed_obj) = list_schedule(dag, n)?;
    let mut search = Search::new(dag, n, cfg.max_expansions);
    search.stats.root_bound = root_bound;

    // phase 1: optimal peak
    let mut witness = None;
    if search.run(root_bound, root_bound)? {
        search.stats.hit_root_bound = true;
        witness = search.best.take();
    } else if seed_obj.peak_stage_memory > root_bound {
        search.run(seed_obj.peak_stage_memory, root_bound + 1)?;
        witness = search.best.take();
    }
    let mut witness = witness.unwrap_or(seed.stage_of);
    let optimum = Schedule::new(witness.clone(), n).objective(dag).peak_stage_memory;
    search.stats.optimum_expansions = search.stats.expansions;

    // phase 2: pin nodes to their smallest admissible stage
    search.memo_frozen = true;
    for v in 0..dag.len() {
        let lo = dag
            .parents(v)
            .iter()
            .filter(|&&p| p < v)
            .map(|&p| search.fixed[p])
            .max()
            .unwrap_or(0);
        let hi = dag
            .children(v)
            .iter()
            .filter(|&&c| c < v)
            .map(|&c| search.fixed[c])
            .min()
            .unwrap_or(n - 1);
        for s in lo..witness[v].min(hi + 1) {
            search.fixed[v] = s;
            search.query_memo.clear();
            if search.run(optimum, optimum)? {
                witness = search.best.take().expect("a successful run records its schedule");
                break;
            }
        }
        search.fixed[v] = witness[v];
    }

    let schedule = Schedule::new(witness, n);
    let objective = schedule.objective(dag);
    debug_assert!(schedule.is_feasible(dag));
    debug_assert_eq!(objective.peak_stage_memory, optimum);
    Ok((schedule, objective, search.stats))
}

const UNPLACED: usize = usize::MAX;

fn bit(set: &[u64], v: usize) -> bool {
    set[v / 64] >> (v % 64) & 1 == 1
}

fn set_bit(set: &mut [u64], v: usize) {
    set[v / 64] |= 1 << (v % 64);
}

fn clear_bit(set: &mut [u64], v: usize) {
    set[v / 64] &= !(1 << (v % 64));
}

/// Strict ancestors (`up`) or descendants of every node, as bitsets.
fn closures(dag: &ComputeDag, words: usize, up: bool) -> Vec<Vec<u64>> {
    let mut order = dag.asap_order();
    if !up {
        order.reverse();
    }
    let mut out = vec![vec![0u64; words]; dag.len()];
    for &v in &order {
        let next = if up { dag.parents(v) } else { dag.children(v) };
        let mut acc = vec![0u64; words];
        for &p in next {
            set_bit(&mut acc, p);
            for (a, b) in acc.iter_mut().zip(&out[p]) {
                *a |= b;
            }
        }
        out[v] = acc;
    }
    out
}

/// Outcome of adding a closure to the stage under construction.
enum Grow {
    Applied { mark: usize, mem: u64, cnt: usize },
    Rejected,
}

struct Search {
    n: usize,
    memory: Vec<u64>,
    ancestors: Vec<Vec<u64>>,
    descendants: Vec<Vec<u64>>,
    /// Pinned stage per node, `UNPLACED` when free.
    fixed: Vec<usize>,
    stage_of: Vec<usize>,
    /// Nodes in closed stages.
    placed: Vec<u64>,
    rest_mem: u64,
    rest_cnt: usize,
    closed_peak: u64,
    // stage under construction
    inside: Vec<u64>,
    outside: Vec<u64>,
    in_mem: u64,
    in_cnt: usize,
    out_mem: u64,
    out_cnt: usize,
    trail: Vec<usize>,
    best: Option<Vec<usize>>,
    best_peak: u64,
    /// Stop once a schedule this good is found.
    target: u64,
    done: bool,
    limit: Option<u64>,
    stats: SearchStats,
    /// Remainder `(next stage, placed set)` -> a peak no completion beats.
    /// Only valid without pinned nodes.
    memo: BTreeMap<(usize, Vec<u64>), u64>,
    memo_frozen: bool,
    /// Same, for the current pinned query.
    query_memo: BTreeMap<(usize, Vec<u64>), u64>,
}

impl Search {
    fn new(dag: &ComputeDag, n: usize, limit: Option<u64>) -> Self {
        let v = dag.len();
        let words = v.div_ceil(64);
        Self {
            n,
            memory: (0..v).map(|i| dag.memory(i)).collect(),
            ancestors: closures(dag, words, true),
            descendants: closures(dag, words, false),
            fixed: vec![UNPLACED; v],
            stage_of: vec![UNPLACED; v],
            placed: vec![0; words],
            rest_mem: dag.total_memory(),
            rest_cnt: v,
            closed_peak: 0,
            inside: vec![0; words],
            outside: vec![0; words],
            in_mem: 0,
            in_cnt: 0,
            out_mem: 0,
            out_cnt: 0,
            trail: Vec::with_capacity(v),
            best: None,
            best_peak: u64::MAX,
            target: 0,
            done: false,
            limit,
            stats: SearchStats::default(),
            memo: BTreeMap::new(),
            memo_frozen: false,
            query_memo: BTreeMap::new(),
        }
    }

    /// Looks for schedules with peak at most `cap`, improving until one at
    /// or below `target` turns up or the space is exhausted. Returns whether
    /// any schedule was found; the last one is in `best`.
    fn run(&mut self, cap: u64, target: u64) -> Result<bool, ScheduleError> {
        self.best = None;
        self.best_peak = cap + 1;
        self.target = target;
        self.done = false;
        self.inside.iter_mut().for_each(|w| *w = 0);
        self.outside.iter_mut().for_each(|w| *w = 0);
        (self.in_mem, self.in_cnt, self.out_mem, self.out_cnt) = (0, 0, 0, 0);
        self.open_stage(0)?;
        Ok(self.best.is_some())
    }

    fn tick(&mut self) -> Result<(), ScheduleError> {
        self.stats.expansions += 1;
        match self.limit {
            Some(limit) if self.stats.expansions > limit => Err(ScheduleError::SearchLimit(limit)),
            _ => Ok(()),
        }
    }

    /// Every stage must stay strictly below `best_peak`.
    fn cap(&self) -> u64 {
        self.best_peak - 1
    }

    /// Adds `v` and its unplaced ancestors (`include`) or descendants to the
    /// inside or outside set, unless that breaks a capacity or count limit.
    fn extend(&mut self, k: usize, v: usize, include: bool) -> Grow {
        let mark = self.trail.len();
        let (mut mem, mut cnt) = (0, 0);
        let closure = if include { &self.ancestors[v] } else { &self.descendants[v] };
        let (own, other) = if include {
            (&self.inside, &self.outside)
        } else {
            (&self.outside, &self.inside)
        };
        for w in 0..own.len() {
            let mut fresh = closure[w] & !own[w] & !self.placed[w];
            if w == v / 64 {
                fresh |= (1 << (v % 64)) & !own[w];
            }
            if fresh & other[w] != 0 {
                self.trail.truncate(mark);
                return Grow::Rejected;
            }
            while fresh != 0 {
                let u = w * 64 + fresh.trailing_zeros() as usize;
                fresh &= fresh - 1;
                mem += self.memory[u];
                cnt += 1;
                self.trail.push(u);
            }
        }
        let later = self.n - 1 - k;
        let ok = if include {
            self.in_mem + mem <= self.cap() && self.in_cnt + cnt + later <= self.rest_cnt
        } else {
            self.out_mem + mem <= (later as u64).saturating_mul(self.cap()) && self.out_cnt + cnt < self.rest_cnt
        };
        if !ok {
            self.trail.truncate(mark);
            return Grow::Rejected;
        }
        let set = if include { &mut self.inside } else { &mut self.outside };
        for &u in &self.trail[mark..] {
            set_bit(set, u);
        }
        if include {
            self.in_mem += mem;
            self.in_cnt += cnt;
        } else {
            self.out_mem += mem;
            self.out_cnt += cnt;
        }
        Grow::Applied { mark, mem, cnt }
    }

    fn retract(&mut self, include: bool, applied: Grow) {
        let Grow::Applied { mark, mem, cnt } = applied else {
            return;
        };
        let set = if include { &mut self.inside } else { &mut self.outside };
        for &u in &self.trail[mark..] {
            clear_bit(set, u);
        }
        self.trail.truncate(mark);
        if include {
            self.in_mem -= mem;
            self.in_cnt -= cnt;
        } else {
            self.out_mem -= mem;
            self.out_cnt -= cnt;
        }
    }

    fn open_stage(&mut self, k: usize) -> Result<(), ScheduleError> {
        self.tick()?;
        let stages_left = (self.n - k) as u64;
        if self.closed_peak > self.cap() || self.rest_mem > stages_left.saturating_mul(self.cap()) {
            return Ok(());
        }
        if k + 1 == self.n {
            // the last stage takes everything left
            if self.rest_cnt > 0 && self.rest_mem <= self.cap() {
                let peak = self.closed_peak.max(self.rest_mem);
                let mut stage_of = self.stage_of.clone();
                for s in stage_of.iter_mut().filter(|s| **s == UNPLACED) {
                    *s = k;
                }
                self.best = Some(stage_of);
                self.best_peak = peak;
                self.done = peak <= self.target;
            }
            return Ok(());
        }

        // pinned nodes: this stage's go in, later ones stay out
        let mut applied = Vec::new();
        let mut feasible = true;
        for v in 0..self.memory.len() {
            let f = self.fixed[v];
            if f == UNPLACED || f < k || bit(&self.placed, v) {
                continue;
            }
            let include = f == k;
            match self.extend(k, v, include) {
                Grow::Rejected => {
                    feasible = false;
                    break;
                }
                g => applied.push((include, g)),
            }
        }
        let result = if feasible { self.grow(k, 0) } else { Ok(()) };
        for (include, g) in applied.into_iter().rev() {
            self.retract(include, g);
        }
        result
    }

    /// Decides membership of stage `k` for free nodes from `pos` on.
    fn grow(&mut self, k: usize, mut pos: usize) -> Result<(), ScheduleError> {
        let len = self.memory.len();
        while pos < len && (bit(&self.placed, pos) || bit(&self.inside, pos) || bit(&self.outside, pos)) {
            pos += 1;
        }
        if pos == len {
            return self.close_stage(k);
        }
        self.tick()?;
        for include in [true, false] {
            let g = self.extend(k, pos, include);
            if matches!(g, Grow::Applied { .. }) {
                let r = self.grow(k, pos + 1);
                self.retract(include, g);
                r?;
            }
            if self.done {
                break;
            }
        }
        Ok(())
    }

    fn close_stage(&mut self, k: usize) -> Result<(), ScheduleError> {
        // the incumbent may have improved since these stages were chosen
        if self.in_cnt == 0
            || self.closed_peak.max(self.in_mem) > self.cap()
            || self.rest_cnt - self.in_cnt < self.n - 1 - k
        {
            return Ok(());
        }
        let members: Vec<usize> = (0..self.memory.len()).filter(|&v| bit(&self.inside, v)).collect();
        let words = self.placed.len();
        let saved = (
            core::mem::replace(&mut self.inside, vec![0; words]),
            core::mem::replace(&mut self.outside, vec![0; words]),
            (self.in_mem, self.in_cnt, self.out_mem, self.out_cnt, self.closed_peak),
        );
        for &v in &members {
            self.stage_of[v] = k;
            set_bit(&mut self.placed, v);
        }
        let (in_mem, in_cnt, ..) = saved.2;
        self.rest_mem -= in_mem;
        self.rest_cnt -= in_cnt;
        self.closed_peak = self.closed_peak.max(in_mem);
        (self.in_mem, self.in_cnt, self.out_mem, self.out_cnt) = (0, 0, 0, 0);

        let key = (k + 1, self.placed.clone());
        let pinned = self.memo_frozen;
        let known = self
            .memo
            .get(&key)
            .copied()
            .unwrap_or(0)
            .max(if pinned { self.query_memo.get(&key).copied().unwrap_or(0) } else { 0 });
        let result = if known >= self.best_peak {
            Ok(())
        } else {
            let before = self.best_peak;
            let r = self.open_stage(k + 1);
            if r.is_ok() && !self.done && self.best_peak == before {
                let memo = if pinned { &mut self.query_memo } else { &mut self.memo };
                if memo.len() < MEMO_CAPACITY {
                    memo.insert(key, before.max(known));
                }
            }
            r
        };

        for &v in &members {
            self.stage_of[v] = UNPLACED;
            clear_bit(&mut self.placed, v);
        }
        self.rest_mem += in_mem;
        self.rest_cnt += in_cnt;
        (self.inside, self.outside) = (saved.0, saved.1);
        (self.in_mem, self.in_cnt, self.out_mem, self.out_cnt, self.closed_peak) = saved.2;
        result
    }
}

/// Exhaustive search over every assignment, for graphs of at most
/// [`BRUTE_FORCE_LIMIT`] nodes. Returns the lexicographically smallest optimal
/// schedule.
pub fn brute_force_schedule(
    dag: &ComputeDag,
    n: usize,
) -> Result<(Schedule, ScheduleObjective), ScheduleError> {
    if dag.len() > BRUTE_FORCE_LIMIT {
        return Err(ScheduleError::TooLarge {
            nodes: dag.len(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    check_stage_count(dag.len(), n)?;
    let mut stage_of = vec![0usize; dag.len()];
    let mut best: Option<(u64, Vec<usize>)> = None;
    enumerate(dag, n, 0, &mut stage_of, &mut best);
    let (_, stage_of) = best.ok_or(ScheduleError::Infeasible {
        nodes: dag.len(),
        stages: n,
    })?;
    let schedule = Schedule::new(stage_of, n);
    let objective = schedule.objective(dag);
    Ok((schedule, objective))
}

fn enumerate(
    dag: &ComputeDag,
    n: usize,
    v: usize,
    stage_of: &mut Vec<usize>,
    best: &mut Option<(u64, Vec<usize>)>,
) {
    if v == dag.len() {
        let candidate = Schedule::new(stage_of.clone(), n);
        if !candidate.is_feasible(dag) {
            return;
        }
        let peak = candidate.objective(dag).peak_stage_memory;
        if best.as_ref().is_none_or(|(b, _)| peak < *b) {
            *best = Some((peak, stage_of.clone()));
        }
        return;
    }
    for s in 0..n {
        stage_of[v] = s;
        // only edges between already-assigned nodes can be checked early
        let ok = dag.parents(v).iter().all(|&p| p > v || stage_of[p] <= s)
            && dag.children(v).iter().all(|&c| c > v || stage_of[c] >= s);
        if ok {
            enumerate(dag, n, v + 1, stage_of, best);
        }
    }
}
