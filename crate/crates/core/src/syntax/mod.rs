//! Token-level dependency graphs, constituency trees and graph batching.

pub mod constituency;
pub mod dependency;
mod graph;

pub use constituency::{
    build_constituency_tree, parse_bracketed, select_subsentence_nodes, ConstituencyTree,
};
pub use dependency::{build_dependency_graph, DepRow};
pub use graph::{merge_graphs, BatchedGraph, DiGraph};

/// Token-level dependency graph of one sentence.
pub type DependencyGraph = DiGraph;
