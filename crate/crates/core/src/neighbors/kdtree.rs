//! Exact kd-tree over a fixed 3D point snapshot.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geometry::Point3;

const LEAF_SIZE: usize = 8;

/// `(squared distance, index)` ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub d2: f64,
    pub idx: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Balanced kd-tree answering exact kNN and radius queries.
///
/// Results are ordered by `(distance, index)`, identical to an exhaustive scan.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

fn coord(p: &Point3, dim: usize) -> f64 {
    match dim {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

impl SpatialIndex {
    pub fn build(points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("index points"));
        }
        let mut index = SpatialIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        index.build_node(0, points.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let pts = &self.points;
        let slice = &mut self.order[start..end];
        let dim = (0..3)
            .map(|d| {
                let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, &i| {
                    let c = coord(&pts[i], d);
                    (acc.0.min(c), acc.1.max(c))
                });
                (d, hi - lo)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(d, _)| d)
            .unwrap_or(0);
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| coord(&pts[a], dim).total_cmp(&coord(&pts[b], dim)));
        let value = coord(&pts[slice[mid]], dim);
        // placeholder, patched after children are built
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, start + mid);
        let right = self.build_node(start + mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// `k` nearest indices by ascending distance, ties broken by smaller index.
    /// When the index holds fewer than `k` points the nearest one is repeated.
    pub fn knn(&self, query: Point3, k: usize) -> Vec<usize> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, query, k, &mut heap);
        let mut found: Vec<Candidate> = heap.into_vec();
        found.sort();
        let mut out: Vec<usize> = found.iter().map(|c| c.idx).collect();
        pad_with_first(&mut out, k);
        out
    }

    fn knn_node(&self, node: usize, q: Point3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start..end] {
                    let c = Candidate {
                        d2: q.distance_squared(self.points[idx]),
                        idx,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("non-empty heap") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = coord(&q, dim) - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, q, k, heap);
                let bound = diff * diff;
                if heap.len() < k || bound <= heap.peek().expect("non-empty heap").d2 {
                    self.knn_node(far, q, k, heap);
                }
            }
        }
    }

    /// Up to `max_k` indices with distance ≤ `radius`, nearest first.
    ///
    /// An empty ball yields the single nearest point. Short results are
    /// padded to `max_k` by repeating the first entry.
    pub fn ball_query(&self, query: Point3, radius: f64, max_k: usize) -> Vec<usize> {
        if max_k == 0 {
            return Vec::new();
        }
        let r2 = radius * radius;
        let mut found = Vec::new();
        self.ball_node(0, query, r2, &mut found);
        if found.is_empty() {
            return self.knn(query, 1).into_iter().cycle().take(max_k).collect();
        }
        found.sort();
        found.truncate(max_k);
        let mut out: Vec<usize> = found.iter().map(|c| c.idx).collect();
        pad_with_first(&mut out, max_k);
        out
    }

    fn ball_node(&self, node: usize, q: Point3, r2: f64, found: &mut Vec<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start..end] {
                    let d2 = q.distance_squared(self.points[idx]);
                    if d2 <= r2 {
                        found.push(Candidate { d2, idx });
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = coord(&q, dim) - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.ball_node(near, q, r2, found);
                if diff * diff <= r2 {
                    self.ball_node(far, q, r2, found);
                }
            }
        }
    }
}

pub(crate) fn pad_with_first(v: &mut Vec<usize>, k: usize) {
    if let Some(&first) = v.first() {
        while v.len() < k {
            v.push(first);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(points: &[Point3], q: Point3, k: usize) -> Vec<usize> {
        let mut all: Vec<Candidate> = points
            .iter()
            .enumerate()
            .map(|(idx, p)| Candidate {
                d2: q.distance_squared(*p),
                idx,
            })
            .collect();
        all.sort();
        let mut out: Vec<usize> = all.iter().take(k).map(|c| c.idx).collect();
        pad_with_first(&mut out, k);
        out
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn single_point_index() {
        let idx = SpatialIndex::build(&[Point3::new(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(idx.knn(Point3::ORIGIN, 3), vec![0, 0, 0]);
        assert_eq!(idx.ball_query(Point3::ORIGIN, 0.1, 2), vec![0, 0]);
        assert!(SpatialIndex::build(&[]).is_err());
    }

    #[test]
    fn knn_small_example() {
        let pts = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(5.0, 0.0, 0.0),
        ];
        let idx = SpatialIndex::build(&pts).unwrap();
        assert_eq!(idx.knn(Point3::ORIGIN, 3), vec![0, 1, 2]);
        assert_eq!(idx.knn(pts[3], 1), vec![3]);
    }

    #[test]
    fn duplicates_are_all_retrievable() {
        let p = Point3::new(0.5, 0.5, 0.5);
        let mut pts = vec![p; 20];
        pts.push(Point3::ORIGIN);
        let idx = SpatialIndex::build(&pts).unwrap();
        assert_eq!(idx.knn(p, 20), (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = random_points(&mut rng, 256);
        let idx = SpatialIndex::build(&pts).unwrap();
        for k in 1..=48 {
            let q = random_points(&mut rng, 1)[0];
            assert_eq!(idx.knn(q, k), brute_knn(&pts, q, k));
            assert_eq!(idx.knn(pts[k], k), brute_knn(&pts, pts[k], k));
        }
    }

    #[test]
    fn ball_matches_radius_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts = random_points(&mut rng, 300);
        let idx = SpatialIndex::build(&pts).unwrap();
        for _ in 0..50 {
            let q = random_points(&mut rng, 1)[0];
            let r: f64 = rng.random_range(0.05..0.6);
            let mut expect: Vec<Candidate> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| Candidate {
                    d2: q.distance_squared(*p),
                    idx: i,
                })
                .filter(|c| c.d2 <= r * r)
                .collect();
            expect.sort();
            let got = idx.ball_query(q, r, 10_000);
            if expect.is_empty() {
                assert_eq!(got[0], brute_knn(&pts, q, 1)[0]);
            } else {
                let e: Vec<usize> = expect.iter().map(|c| c.idx).collect();
                assert_eq!(&got[..e.len()], &e[..]);
                assert!(got[e.len()..].iter().all(|&i| i == e[0]));
            }
        }
    }

    #[test]
    fn huge_radius_equals_knn() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pts = random_points(&mut rng, 30);
        let idx = SpatialIndex::build(&pts).unwrap();
        for k in [1, 5, 30, 48] {
            assert_eq!(idx.ball_query(pts[0], 100.0, k), idx.knn(pts[0], k));
        }
    }
}
