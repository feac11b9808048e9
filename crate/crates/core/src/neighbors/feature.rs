use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::kdtree::{pad_with_first, Candidate};
use super::{NeighborGraph, Space};

/// Exhaustive kNN between rows of `features` for the given query rows.
///
/// Each query's own row is at distance zero and therefore comes first
/// (unless it has exact duplicates with a smaller index).
pub fn knn_feature_rows(features: &Tensor, queries: &[usize], k: usize) -> Result<NeighborGraph> {
    if features.rank() != 2 || features.rows() == 0 {
        return Err(Error::shape(
            "knn_feature_graph",
            format!("expected non-empty n×F features, got {:?}", features.shape()),
        ));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("features"));
    }
    let n = features.rows();
    if let Some(&bad) = queries.iter().find(|&&q| q >= n) {
        return Err(Error::invalid(format!("query row {bad} out of range for {n} rows")));
    }
    let take = k.min(n);
    let mut neighbors = Vec::with_capacity(queries.len() * k);
    let mut cand = Vec::with_capacity(n);
    for &q in queries {
        let qrow = features.row(q);
        cand.clear();
        cand.extend((0..n).map(|idx| Candidate {
            d2: squared_distance(qrow, features.row(idx)),
            idx,
        }));
        if take < n {
            cand.select_nth_unstable(take - 1);
        }
        let head = &mut cand[..take];
        head.sort_unstable();
        let mut list: Vec<usize> = head.iter().map(|c| c.idx).collect();
        pad_with_first(&mut list, k);
        neighbors.extend(list);
    }
    Ok(NeighborGraph::new(queries.to_vec(), neighbors, k, Space::Feature))
}

/// kNN graph over every row of an `n×F` feature matrix, self included.
pub fn knn_feature_graph(features: &Tensor, k: usize) -> Result<NeighborGraph> {
    let all: Vec<usize> = (0..features.rows()).collect();
    knn_feature_rows(features, &all, k)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
