//! Sampling and neighborhood search in Euclidean and feature space.

mod feature;
mod fps;
mod kdtree;

pub use feature::{knn_feature_graph, knn_feature_rows};
pub use fps::{coverage_radius, farthest_point_sampling};
pub use kdtree::SpatialIndex;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Euclidean,
    Feature,
}

/// Euclidean grouping rule used to gather a reference point's neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Search {
    Knn,
    Ball { radius: f64 },
}

/// Fixed-width neighbor lists, one per reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    reference_indices: Vec<usize>,
    neighbors: Vec<usize>,
    k: usize,
    space: Space,
}

impl NeighborGraph {
    pub fn new(reference_indices: Vec<usize>, neighbors: Vec<usize>, k: usize, space: Space) -> Self {
        debug_assert_eq!(reference_indices.len() * k, neighbors.len());
        Self {
            reference_indices,
            neighbors,
            k,
            space,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn len(&self) -> usize {
        self.reference_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference_indices.is_empty()
    }

    pub fn reference_indices(&self) -> &[usize] {
        &self.reference_indices
    }

    /// Neighbor list of the `i`-th reference (not of source row `i`).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    /// All neighbor lists concatenated in reference order.
    pub fn flat_neighbors(&self) -> &[usize] {
        &self.neighbors
    }
}

pub fn build_index(points: &[Point3]) -> Result<SpatialIndex> {
    SpatialIndex::build(points)
}

pub fn knn(index: &SpatialIndex, query: Point3, k: usize) -> Vec<usize> {
    index.knn(query, k)
}

pub fn ball_query(index: &SpatialIndex, query: Point3, radius: f64, max_k: usize) -> Vec<usize> {
    index.ball_query(query, radius, max_k)
}

/// Groups neighbors of `points[r]` for each `r` in `references`.
pub fn euclidean_graph(index: &SpatialIndex, references: &[usize], search: Search, k: usize) -> NeighborGraph {
    let points = index.points();
    let mut flat = Vec::with_capacity(references.len() * k);
    for &r in references {
        let q = points[r];
        match search {
            Search::Knn => flat.extend(index.knn(q, k)),
            Search::Ball { radius } => flat.extend(index.ball_query(q, radius, k)),
        }
    }
    NeighborGraph::new(references.to_vec(), flat, k, Space::Euclidean)
}
