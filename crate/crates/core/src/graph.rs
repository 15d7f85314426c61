//! Skeleton graph, its binary adjacency and the symmetric normalization
//! `D^{-1/2} (A + I) D^{-1/2}` used by spatial graph convolution.

use std::collections::BTreeSet;

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::skeleton::{check_edges, JointLayout};

/// Joints plus, for every joint, its neighbour set (itself and its direct
/// neighbours).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkeletonGraph {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
    neighbor_sets: Vec<BTreeSet<usize>>,
}

impl SkeletonGraph {
    /// Graph over an arbitrary edge list; unlike [`JointLayout`] it need not
    /// be connected.
    pub fn from_edges(joint_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        check_edges(joint_count, edges)?;
        let mut neighbor_sets: Vec<BTreeSet<usize>> = (0..joint_count).map(|v| BTreeSet::from([v])).collect();
        for &(a, b) in edges {
            neighbor_sets[a].insert(b);
            neighbor_sets[b].insert(a);
        }
        Ok(SkeletonGraph {
            joint_count,
            edges: edges.to_vec(),
            neighbor_sets,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, joint: usize) -> &BTreeSet<usize> {
        &self.neighbor_sets[joint]
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` in one call.
    pub fn normalized_adjacency(&self) -> Tensor {
        normalize_adjacency(adjacency(self))
            .normalized
            .expect("just normalized")
    }
}

pub fn build_graph(layout: &JointLayout) -> SkeletonGraph {
    SkeletonGraph::from_edges(layout.joint_count, &layout.edges).expect("layout invariants hold")
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    /// `V × V`, 1 where two joints share an edge.
    pub raw: Tensor,
    /// Filled by [`normalize_adjacency`].
    pub normalized: Option<Tensor>,
}

pub fn adjacency(graph: &SkeletonGraph) -> AdjacencyMatrix {
    let n = graph.joint_count;
    let mut raw = Tensor::zeros(&[n, n]);
    for &(a, b) in &graph.edges {
        raw.set(&[a, b], 1.0);
        raw.set(&[b, a], 1.0);
    }
    AdjacencyMatrix { raw, normalized: None }
}

pub fn normalize_adjacency(mut adj: AdjacencyMatrix) -> AdjacencyMatrix {
    let n = adj.raw.shape()[0];
    let mut with_loops = adj.raw.clone();
    for i in 0..n {
        with_loops.set(&[i, i], 1.0);
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = (0..n).map(|j| with_loops.at(&[i, j])).sum();
            1.0 / deg.sqrt()
        })
        .collect();
    let mut normalized = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            normalized.set(&[i, j], inv_sqrt_deg[i] * with_loops.at(&[i, j]) * inv_sqrt_deg[j]);
        }
    }
    adj.normalized = Some(normalized);
    adj
}
