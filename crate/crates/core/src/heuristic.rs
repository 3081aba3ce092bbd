//! Greedy list-scheduling baseline.

use crate::error::ScheduleError;
use crate::graph::ComputeDag;
use crate::schedule::{check_stage_count, target_fill, FillTarget, Schedule, ScheduleObjective};

/// Walks nodes in ASAP order and cuts a new stage whenever the running sum
/// would pass an even share of total memory.
///
/// Stage indices never decrease along a topological walk, so the result is
/// always dependency-feasible, and the fill rule forces a cut early enough to
/// leave one node for every later stage.
pub fn list_schedule(
    dag: &ComputeDag,
    n: usize,
) -> Result<(Schedule, ScheduleObjective), ScheduleError> {
    check_stage_count(dag.len(), n)?;
    let order = dag.asap_order();
    let stage_of = target_fill(&order, |v| dag.memory(v), n, FillTarget::EvenShare);
    let schedule = Schedule::new(stage_of, n);
    let objective = schedule.objective(dag);
    Ok((schedule, objective))
}
