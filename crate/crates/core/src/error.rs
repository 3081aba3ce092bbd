use alloc::string::String;

/// Errors raised while building or analysing a [`ComputeDag`](crate::graph::ComputeDag).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("graph contains a cycle through edge {parent} -> {child}")]
    CyclicGraph { parent: usize, child: usize },
    #[error("edge {parent} -> {child} references a node outside 0..{num_nodes}")]
    NodeOutOfRange { parent: usize, child: usize, num_nodes: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge {parent} -> {child}")]
    DuplicateEdge { parent: usize, child: usize },
    #[error("node {node} (`{op_name}`) has in-degree {in_degree}, above the maximum {max_degree}")]
    DegreeOverflow {
        node: usize,
        op_name: String,
        in_degree: usize,
        max_degree: usize,
    },
    #[error("graph has no nodes")]
    Empty,
    #[error("invalid sampler configuration: {0}")]
    ConfigError(&'static str),
}

/// Errors raised by the schedulers and schedule utilities.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("cannot fill {stages} non-empty stages with {nodes} nodes")]
    Infeasible { nodes: usize, stages: usize },
    #[error("stage count must be at least 1")]
    ZeroStages,
    #[error("brute force is limited to {limit} nodes, graph has {nodes}")]
    TooLarge { nodes: usize, limit: usize },
    #[error("schedule violates dependency {parent} -> {child} (stage {parent_stage} > {child_stage})")]
    FeasibilityError {
        parent: usize,
        child: usize,
        parent_stage: usize,
        child_stage: usize,
    },
    #[error("stage {0} is empty")]
    EmptyStage(usize),
    #[error("schedule covers {got} nodes, graph has {expected}")]
    ShapeError { expected: usize, got: usize },
    #[error("stage index {stage} out of range for {num_stages} stages")]
    StageOutOfRange { stage: usize, num_stages: usize },
    #[error("exact search exceeded its budget of {0} expansions")]
    SearchLimit(u64),
}

/// Errors raised by the pointer network.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("non-finite value in {0}")]
    NumericalError(&'static str),
    #[error("every node is masked; nothing left to decode")]
    DecodeExhausted,
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sequence is not a permutation of the graph's nodes")]
    NotAPermutation,
}

/// Errors raised by reward computation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewardError {
    #[error("length mismatch: {0} vs {1}")]
    ShapeError(usize, usize),
}

/// Any failure while running one training or evaluation episode.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}
