//! Mesh states, their conversion into heterogeneous mesh/element graphs, and
//! the on-disk trajectory format.

mod graph;
mod mesh;
mod trajectory;

pub use graph::{build_hetero_graph, EdgeSet, HeteroGraph};
pub use mesh::{MeshState, Topology};
pub use trajectory::Trajectory;

#[cfg(test)]
pub(crate) use mesh::fixtures;
