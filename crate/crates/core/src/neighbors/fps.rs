use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{mean_order_independent, Point3};

/// `true` when candidate `a` beats the incumbent `b` at equal or larger score.
///
/// Larger score wins; equal scores go to the lexicographically smaller
/// coordinate, then to the smaller index (callers scan in index order).
fn beats(score_a: f64, a: &Point3, score_b: f64, b: &Point3) -> bool {
    match score_a.total_cmp(&score_b) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.lex_cmp(b) == Ordering::Less,
    }
}

/// Greedy max-min subsampling.
///
/// The first pick is the point farthest from the centroid; each later pick
/// maximizes the distance to the already selected set. The selection does
/// not depend on the storage order of `points`, except among exact
/// duplicates where the smaller index wins.
pub fn farthest_point_sampling(points: &[Point3], n_samples: usize) -> Result<Vec<usize>> {
    if n_samples == 0 || n_samples > points.len() {
        return Err(Error::invalid(format!(
            "cannot sample {n_samples} of {} points",
            points.len()
        )));
    }
    let center = mean_order_independent(points)?;
    let mut best = 0;
    let mut best_d2 = center.distance_squared(points[0]);
    for (i, p) in points.iter().enumerate().skip(1) {
        let d2 = center.distance_squared(*p);
        if beats(d2, p, best_d2, &points[best]) {
            best = i;
            best_d2 = d2;
        }
    }

    let mut selected = vec![false; points.len()];
    let mut min_d2 = vec![f64::INFINITY; points.len()];
    let mut out = Vec::with_capacity(n_samples);
    let mut last = best;
    loop {
        selected[last] = true;
        out.push(last);
        if out.len() == n_samples {
            return Ok(out);
        }
        let anchor = points[last];
        let mut pick: Option<usize> = None;
        for (i, p) in points.iter().enumerate() {
            if selected[i] {
                continue;
            }
            let d2 = p.distance_squared(anchor);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            match pick {
                None => pick = Some(i),
                Some(j) if beats(min_d2[i], p, min_d2[j], &points[j]) => pick = Some(i),
                _ => {}
            }
        }
        last = pick.expect("unselected point remains");
    }
}

/// Largest distance from any point to its nearest selected point.
pub fn coverage_radius(points: &[Point3], selected: &[usize]) -> f64 {
    points
        .iter()
        .map(|p| {
            selected
                .iter()
                .map(|&s| p.distance_squared(points[s]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cube_corners_pick_opposite_pair() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(Point3::new(x, y, z));
                }
            }
        }
        let sel = farthest_point_sampling(&pts, 2).unwrap();
        let d = pts[sel[0]].distance(pts[sel[1]]);
        let max_pair = pts
            .iter()
            .flat_map(|a| pts.iter().map(move |b| a.distance(*b)))
            .fold(0.0, f64::max);
        assert_eq!(d, max_pair);
        assert!((d - 3f64.sqrt()).abs() < 1e-15);
        // all corners tie; lexicographic order picks the origin corner first
        assert_eq!(sel, vec![0, 7]);
    }

    #[test]
    fn full_sample_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts: Vec<Point3> = (0..50)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        pts.push(pts[3]);
        pts.push(pts[3]);
        let mut sel = farthest_point_sampling(&pts, pts.len()).unwrap();
        sel.sort();
        assert_eq!(sel, (0..pts.len()).collect::<Vec<_>>());
    }

    #[test]
    fn out_of_range_requests_fail() {
        let pts = [Point3::ORIGIN, Point3::new(1.0, 0.0, 0.0)];
        assert!(farthest_point_sampling(&pts, 0).is_err());
        assert!(farthest_point_sampling(&pts, 3).is_err());
        assert!(farthest_point_sampling(&[], 1).is_err());
    }

    #[test]
    fn selection_ignores_storage_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Point3> = (0..128)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let sel = farthest_point_sampling(&pts, 32).unwrap();
        let rev: Vec<Point3> = pts.iter().rev().copied().collect();
        let sel_rev = farthest_point_sampling(&rev, 32).unwrap();
        let mapped: Vec<usize> = sel_rev.iter().map(|&i| pts.len() - 1 - i).collect();
        assert_eq!(sel, mapped);
    }

    #[test]
    fn coverage_radius_is_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..100)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let all = farthest_point_sampling(&pts, 100).unwrap();
        let mut prev = f64::INFINITY;
        for n in 1..=100 {
            // FPS is a greedy prefix process
            assert_eq!(farthest_point_sampling(&pts, n).unwrap(), all[..n]);
            let r = coverage_radius(&pts, &all[..n]);
            assert!(r <= prev);
            prev = r;
        }
        assert_eq!(prev, 0.0);
    }
}
