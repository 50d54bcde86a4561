use crate::error::{Error, Result};

/// Directed graph where edge `(src, dst)` makes `src` an in-neighbour of
/// `dst`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DiGraph {
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
}

impl DiGraph {
    pub fn new(node_count: usize) -> Self {
        Self {
            node_count,
            edges: Vec::new(),
        }
    }

    pub fn add_edge(&mut self, src: usize, dst: usize) {
        debug_assert!(src < self.node_count && dst < self.node_count);
        self.edges.push((src, dst));
    }

    pub fn add_self_loops(&mut self) {
        for i in 0..self.node_count {
            self.edges.push((i, i));
        }
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(_, d) in &self.edges {
            deg[d] += 1;
        }
        deg
    }

    /// Every edge in range and every node with at least one in-neighbour.
    pub fn check(&self) -> Result<()> {
        if let Some(&(s, d)) = self
            .edges
            .iter()
            .find(|&&(s, d)| s >= self.node_count || d >= self.node_count)
        {
            return Err(Error::Graph(format!(
                "edge {s}->{d} outside {} nodes",
                self.node_count
            )));
        }
        if let Some(i) = self.in_degrees().iter().position(|&d| d == 0) {
            return Err(Error::Graph(format!("node {i} has no in-neighbours")));
        }
        Ok(())
    }
}

/// Disjoint union of several graphs with node ids shifted per segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchedGraph {
    pub total_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub segment_offsets: Vec<usize>,
    pub segment_sizes: Vec<usize>,
}

impl BatchedGraph {
    /// Splits back into the original graphs.
    pub fn split(&self) -> Vec<DiGraph> {
        let mut out: Vec<DiGraph> = self
            .segment_sizes
            .iter()
            .map(|&n| DiGraph::new(n))
            .collect();
        for &(s, d) in &self.edges {
            let seg = self.segment_offsets.partition_point(|&off| off <= s) - 1;
            let off = self.segment_offsets[seg];
            out[seg].edges.push((s - off, d - off));
        }
        out
    }

    pub fn as_graph(&self) -> DiGraph {
        DiGraph {
            node_count: self.total_nodes,
            edges: self.edges.clone(),
        }
    }
}

/// Relabels graph `k`'s nodes by the total size of graphs `0..k` and
/// concatenates the edge lists.
pub fn merge_graphs(graphs: &[DiGraph]) -> Result<BatchedGraph> {
    if graphs.is_empty() {
        return Err(Error::Graph("cannot merge an empty list of graphs".into()));
    }
    let mut offsets = Vec::with_capacity(graphs.len());
    let mut edges = Vec::with_capacity(graphs.iter().map(|g| g.edges.len()).sum());
    let mut total = 0;
    for g in graphs {
        offsets.push(total);
        edges.extend(g.edges.iter().map(|&(s, d)| (s + total, d + total)));
        total += g.node_count;
    }
    Ok(BatchedGraph {
        total_nodes: total,
        edges,
        segment_offsets: offsets,
        segment_sizes: graphs.iter().map(|g| g.node_count).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn second_graph_is_shifted() {
        let a = DiGraph {
            node_count: 3,
            edges: vec![(0, 1)],
        };
        let b = DiGraph {
            node_count: 2,
            edges: vec![(0, 1)],
        };
        let m = merge_graphs(&[a, b]).unwrap();
        assert_eq!(m.total_nodes, 5);
        assert_eq!(m.edges, vec![(0, 1), (3, 4)]);
    }

    #[test]
    fn single_graph_is_identity() {
        let a = DiGraph {
            node_count: 3,
            edges: vec![(0, 1), (2, 2)],
        };
        let m = merge_graphs(std::slice::from_ref(&a)).unwrap();
        assert_eq!(m.edges, a.edges);
        assert_eq!(m.total_nodes, 3);
    }

    #[test]
    fn empty_list_is_an_error() {
        assert!(merge_graphs(&[]).is_err());
    }

    fn graph() -> impl Strategy<Value = DiGraph> {
        (1usize..6).prop_flat_map(|n| {
            prop::collection::vec((0..n, 0..n), 0..10).prop_map(move |edges| DiGraph {
                node_count: n,
                edges,
            })
        })
    }

    proptest! {
        #[test]
        fn merge_then_split_is_identity(graphs in prop::collection::vec(graph(), 1..5)) {
            let merged = merge_graphs(&graphs).unwrap();
            prop_assert_eq!(merged.total_nodes, graphs.iter().map(|g| g.node_count).sum::<usize>());
            prop_assert_eq!(merged.split(), graphs);
        }
    }
}
