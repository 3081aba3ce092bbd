//! Integer node embedding fed to the policy encoder.
//!
//! Row layout for a graph embedded with maximum degree `D`:
//!
//! ```text
//! [asap_level, parent_level_1..D, parent_id_1..D, node_id, memory_bytes]
//! ```
//!
//! Parent slots are filled in ascending parent-index order. Empty slots, and
//! all slots of source nodes, hold level `0` and id `-1`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::GraphError;
use crate::graph::ComputeDag;

/// Slot value used for the level of a missing parent.
pub const NO_PARENT_LEVEL: i64 = 0;
/// Slot value used for the id of a missing parent.
pub const NO_PARENT_ID: i64 = -1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphEmbedding {
    max_degree: usize,
    num_rows: usize,
    data: Vec<i64>,
}

impl GraphEmbedding {
    /// Number of integers per row for degree `max_degree`.
    pub const fn row_width(max_degree: usize) -> usize {
        2 * max_degree + 3
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn width(&self) -> usize {
        Self::row_width(self.max_degree)
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn row(&self, v: usize) -> &[i64] {
        let w = self.width();
        &self.data[v * w..(v + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i64]> {
        self.data.chunks_exact(self.width())
    }

    pub fn level(&self, v: usize) -> i64 {
        self.row(v)[0]
    }

    pub fn parent_levels(&self, v: usize) -> &[i64] {
        &self.row(v)[1..1 + self.max_degree]
    }

    pub fn parent_ids(&self, v: usize) -> &[i64] {
        &self.row(v)[1 + self.max_degree..1 + 2 * self.max_degree]
    }

    pub fn node_id(&self, v: usize) -> i64 {
        self.row(v)[1 + 2 * self.max_degree]
    }

    pub fn memory(&self, v: usize) -> i64 {
        self.row(v)[2 + 2 * self.max_degree]
    }
}

/// Builds the embedding of `dag` with `max_degree` parent slots per row.
pub fn embed_graph(dag: &ComputeDag, max_degree: usize) -> Result<GraphEmbedding, GraphError> {
    let width = GraphEmbedding::row_width(max_degree);
    let levels = dag.levels();
    let mut data = vec![0i64; dag.len() * width];
    for (v, row) in data.chunks_exact_mut(width).enumerate() {
        let parents = dag.parents(v);
        if parents.len() > max_degree {
            return Err(GraphError::DegreeOverflow {
                node: v,
                op_name: dag.nodes()[v].op_name.clone(),
                in_degree: parents.len(),
                max_degree,
            });
        }
        row[0] = i64::from(levels[v]);
        for slot in 0..max_degree {
            let (lvl, id) = match parents.get(slot) {
                Some(&p) => (i64::from(levels[p]), i64::from(dag.nodes()[p].node_id)),
                None => (NO_PARENT_LEVEL, NO_PARENT_ID),
            };
            row[1 + slot] = lvl;
            row[1 + max_degree + slot] = id;
        }
        row[1 + 2 * max_degree] = i64::from(dag.nodes()[v].node_id);
        row[2 + 2 * max_degree] = i64::try_from(dag.memory(v)).unwrap_or(i64::MAX);
    }
    Ok(GraphEmbedding {
        max_degree,
        num_rows: dag.len(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::OpNode;
    use alloc::format;
    use alloc::vec;

    fn diamond() -> ComputeDag {
        let nodes = ["a", "b", "c", "d"]
            .iter()
            .enumerate()
            .map(|(i, n)| OpNode::new(*n, 10 * (i as u64 + 1)))
            .collect();
        ComputeDag::new("diamond", nodes, vec![(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap()
    }

    #[test]
    fn source_row_uses_sentinels() {
        let d = diamond();
        let e = embed_graph(&d, 3).unwrap();
        assert_eq!(e.width(), 9);
        assert_eq!(e.parent_levels(0), &[0, 0, 0]);
        assert_eq!(e.parent_ids(0), &[-1, -1, -1]);
        assert_eq!(e.level(0), 1);
    }

    #[test]
    fn single_node_row() {
        let d = ComputeDag::new("one", vec![OpNode::new("x", 42)], vec![]).unwrap();
        let e = embed_graph(&d, 2).unwrap();
        let id = i64::from(d.nodes()[0].node_id);
        assert_eq!(e.row(0), &[1, 0, 0, -1, -1, id, 42]);
    }

    #[test]
    fn diamond_sink_carries_both_parents() {
        let d = diamond();
        let e = embed_graph(&d, 2).unwrap();
        let lv = d.levels();
        let ids: Vec<i64> = d.nodes().iter().map(|n| i64::from(n.node_id)).collect();
        assert_eq!(e.parent_levels(3), &[i64::from(lv[1]), i64::from(lv[2])]);
        assert_eq!(e.parent_levels(3), &[2, 2]);
        assert_eq!(e.parent_ids(3), &[ids[1], ids[2]]);
        assert_eq!(e.node_id(3), ids[3]);
        assert_eq!(e.memory(3), 40);
        // partial fill: node b has one parent, one padded slot
        assert_eq!(e.parent_levels(1), &[1, 0]);
        assert_eq!(e.parent_ids(1), &[ids[0], -1]);
    }

    #[test]
    fn degree_overflow_names_node() {
        let d = diamond();
        match embed_graph(&d, 1) {
            Err(GraphError::DegreeOverflow { node, in_degree, .. }) => {
                assert_eq!((node, in_degree), (3, 2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn child_level_exceeds_parent_levels() {
        let nodes = (0..6).map(|i| OpNode::new(format!("op{i}"), 1)).collect();
        let d = ComputeDag::new("g", nodes, vec![(0, 2), (1, 2), (2, 4), (3, 4), (4, 5)]).unwrap();
        let e = embed_graph(&d, 2).unwrap();
        for v in 0..d.len() {
            for &pl in e.parent_levels(v) {
                assert!(e.level(v) > pl);
            }
        }
    }
}
