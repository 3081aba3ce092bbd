//! Computational DAG representation and ASAP leveling.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::GraphError;

/// Stable identifier of an operator, derived from its name.
pub type NodeId = u32;

/// FNV-1a over the bytes of `op_name`, folded to 32 bits by taking the low word.
pub fn hash_node_id(op_name: &str) -> NodeId {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in op_name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h as u32
}

/// One operator of the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpNode {
    pub op_name: String,
    /// Hash of `op_name`, made unique within the owning graph.
    pub node_id: NodeId,
    /// Parameter footprint of the operator.
    pub memory_bytes: u64,
}

impl OpNode {
    pub fn new(op_name: impl Into<String>, memory_bytes: u64) -> Self {
        let op_name = op_name.into();
        let node_id = hash_node_id(&op_name);
        Self {
            op_name,
            node_id,
            memory_bytes,
        }
    }
}

/// A validated directed acyclic graph of operators.
///
/// Node indices are dense (`0..len`). Parent lists are kept sorted by index,
/// and ASAP levels are computed once at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComputeDag {
    name: String,
    nodes: Vec<OpNode>,
    edges: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    levels: Vec<u32>,
}

impl ComputeDag {
    /// Validates the edge list and resolves node-id collisions.
    ///
    /// Colliding ids are re-derived from `"{op_name}#{k}"` for increasing `k`
    /// until unique, so ids stay a pure function of the node names in order.
    pub fn new(
        name: impl Into<String>,
        mut nodes: Vec<OpNode>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self, GraphError> {
        let n = nodes.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut seen = BTreeSet::new();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(p, c) in &edges {
            if p >= n || c >= n {
                return Err(GraphError::NodeOutOfRange {
                    parent: p,
                    child: c,
                    num_nodes: n,
                });
            }
            if p == c {
                return Err(GraphError::SelfLoop(p));
            }
            if !seen.insert((p, c)) {
                return Err(GraphError::DuplicateEdge {
                    parent: p,
                    child: c,
                });
            }
            parents[c].push(p);
            children[p].push(c);
        }
        for list in parents.iter_mut().chain(children.iter_mut()) {
            list.sort_unstable();
        }
        let levels = asap_levels(n, &edges)?;

        let mut used = BTreeSet::new();
        let mut occurrences: BTreeMap<String, u32> = BTreeMap::new();
        for node in &mut nodes {
            let mut id = hash_node_id(&node.op_name);
            let k = occurrences.entry(node.op_name.clone()).or_insert(0);
            while used.contains(&id) {
                *k += 1;
                id = hash_node_id(&format!("{}#{}", node.op_name, k));
            }
            used.insert(id);
            node.node_id = id;
        }

        Ok(Self {
            name: name.into(),
            nodes,
            edges,
            parents,
            children,
            levels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    /// Edges in the order they were supplied.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Parents of `v`, ascending.
    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    /// Children of `v`, ascending.
    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.parents[v].len()
    }

    pub fn max_in_degree(&self) -> usize {
        self.parents.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn memory(&self, v: usize) -> u64 {
        self.nodes[v].memory_bytes
    }

    pub fn total_memory(&self) -> u64 {
        self.nodes.iter().map(|n| n.memory_bytes).sum()
    }

    /// ASAP level per node; sources are at level 1.
    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    /// Length of the longest path counted in nodes.
    pub fn depth(&self) -> u32 {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    /// Nodes sorted by `(asap_level, index)`; a topological order.
    pub fn asap_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&v| (self.levels[v], v));
        order
    }

    /// True when every edge points from a lower to a higher index.
    pub fn is_index_topological(&self) -> bool {
        self.edges.iter().all(|&(p, c)| p < c)
    }
}

/// Computes ASAP levels for an edge list over `num_nodes` nodes.
///
/// Sources get level 1, every other node `1 + max(level(parent))`. Fails with
/// [`GraphError::CyclicGraph`] naming one edge on a cycle.
pub fn asap_levels(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Vec<u32>, GraphError> {
    let mut indeg = vec![0usize; num_nodes];
    let mut children = vec![Vec::new(); num_nodes];
    let mut parents = vec![Vec::new(); num_nodes];
    for &(p, c) in edges {
        if p >= num_nodes || c >= num_nodes {
            return Err(GraphError::NodeOutOfRange {
                parent: p,
                child: c,
                num_nodes,
            });
        }
        indeg[c] += 1;
        children[p].push(c);
        parents[c].push(p);
    }
    let mut level = vec![1u32; num_nodes];
    let mut queue: VecDeque<usize> = (0..num_nodes).filter(|&v| indeg[v] == 0).collect();
    let mut done = vec![false; num_nodes];
    let mut processed = 0;
    while let Some(v) = queue.pop_front() {
        done[v] = true;
        processed += 1;
        for &c in &children[v] {
            level[c] = level[c].max(level[v] + 1);
            indeg[c] -= 1;
            if indeg[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if processed == num_nodes {
        return Ok(level);
    }

    // Every unprocessed node keeps at least one unprocessed parent, so walking
    // parents from any of them must revisit a node.
    let mut cur = (0..num_nodes).find(|&v| !done[v]).expect("unprocessed node");
    let mut visited = vec![false; num_nodes];
    visited[cur] = true;
    loop {
        let next = *parents[cur]
            .iter()
            .find(|&&p| !done[p])
            .expect("unprocessed parent");
        if visited[next] {
            // `cur` is an ancestor of `next` along the walk, so this edge closes the cycle.
            return Err(GraphError::CyclicGraph {
                parent: next,
                child: cur,
            });
        }
        visited[next] = true;
        cur = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dag(n: usize, edges: &[(usize, usize)]) -> ComputeDag {
        let nodes = (0..n).map(|i| OpNode::new(format!("n{i}"), 1)).collect();
        ComputeDag::new("t", nodes, edges.to_vec()).unwrap()
    }

    #[test]
    fn chain_levels() {
        assert_eq!(dag(3, &[(0, 1), (1, 2)]).levels(), &[1, 2, 3]);
    }

    #[test]
    fn diamond_levels() {
        let d = dag(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(d.levels(), &[1, 2, 2, 3]);
    }

    #[test]
    fn parent_at_level_one_puts_child_at_two() {
        let d = dag(2, &[(0, 1)]);
        assert_eq!(d.levels()[0], 1);
        assert_eq!(d.levels()[1], 2);
    }

    #[test]
    fn levels_follow_longest_path_not_index() {
        // 3 -> 0 -> 2 and 3 -> 1 -> 0
        let d = dag(4, &[(3, 0), (0, 2), (3, 1), (1, 0)]);
        assert_eq!(d.levels(), &[3, 2, 4, 1]);
        assert_eq!(d.asap_order(), vec![3, 1, 0, 2]);
    }

    #[test]
    fn cycle_names_a_back_edge() {
        let err = asap_levels(3, &[(0, 1), (1, 2), (2, 1)]).unwrap_err();
        match err {
            GraphError::CyclicGraph { parent, child } => {
                assert!([(1, 2), (2, 1)].contains(&(parent, child)), "{parent}->{child}");
            }
            e => panic!("unexpected {e:?}"),
        }
        let nodes = (0..2).map(|i| OpNode::new(format!("n{i}"), 1)).collect();
        assert!(matches!(
            ComputeDag::new("c", nodes, vec![(0, 1), (1, 0)]),
            Err(GraphError::CyclicGraph { .. })
        ));
    }

    #[test]
    fn rejects_malformed_edges() {
        let mk = |edges: Vec<(usize, usize)>| {
            let nodes = (0..3).map(|i| OpNode::new(format!("n{i}"), 1)).collect();
            ComputeDag::new("x", nodes, edges)
        };
        assert_eq!(mk(vec![(1, 1)]), Err(GraphError::SelfLoop(1)));
        assert!(matches!(
            mk(vec![(0, 1), (0, 1)]),
            Err(GraphError::DuplicateEdge { .. })
        ));
        assert!(matches!(
            mk(vec![(0, 3)]),
            Err(GraphError::NodeOutOfRange { .. })
        ));
        assert_eq!(ComputeDag::new("e", Vec::new(), Vec::new()), Err(GraphError::Empty));
    }

    #[test]
    fn hash_is_deterministic() {
        assert_eq!(hash_node_id("conv2d_1"), hash_node_id("conv2d_1"));
        assert_ne!(hash_node_id("conv2d_1"), hash_node_id("conv2d_2"));
    }

    #[test]
    fn colliding_names_get_distinct_ids() {
        let nodes = vec![
            OpNode::new("add", 1),
            OpNode::new("add", 1),
            OpNode::new("add", 1),
        ];
        let d = ComputeDag::new("dup", nodes, vec![(0, 1), (1, 2)]).unwrap();
        let ids: BTreeSet<_> = d.nodes().iter().map(|n| n.node_id).collect();
        assert_eq!(ids.len(), 3);
        assert_eq!(d.nodes()[0].node_id, hash_node_id("add"));
        assert_eq!(d.nodes()[1].node_id, hash_node_id("add#1"));
    }

    /// Brute force: the ASAP leveling is the pointwise-minimal valid leveling,
    /// so lowering any single node breaks some edge constraint.
    #[test]
    fn asap_is_minimal_leveling() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.random_range(1..=8usize);
            let mut edges = Vec::new();
            for c in 1..n {
                for p in 0..c {
                    if rng.random_bool(0.3) {
                        edges.push((p, c));
                    }
                }
            }
            let levels = asap_levels(n, &edges).unwrap();
            for &(p, c) in &edges {
                assert!(levels[c] > levels[p]);
            }
            for v in 0..n {
                if levels[v] == 1 {
                    continue;
                }
                let mut lowered = levels.clone();
                lowered[v] -= 1;
                let violated = edges.iter().any(|&(p, c)| lowered[c] <= lowered[p]);
                assert!(violated, "node {v} could be lowered in {edges:?}");
            }
        }
    }
}
