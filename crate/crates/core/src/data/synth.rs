//! Procedural shapes with exact labels.
//!
//! Every surface is sampled uniformly by area, jittered with isotropic
//! Gaussian noise and normalized into the unit ball. Shape proportions vary
//! per sample so that classes differ by local geometry rather than size.

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{normalize, Point3, PointCloud};

pub const CLASSIFICATION_CLASSES: [&str; 4] = ["sphere", "cube", "cylinder", "torus"];
pub const SEGMENTATION_CLASSES: [&str; 2] = ["barbell", "mushroom"];
/// Part 0 is the sphere ends of a barbell or the cap of a mushroom.
pub const SEGMENTATION_PARTS: [&str; 2] = ["head", "shaft"];
pub const JITTER_SIGMA: f64 = 0.01;
/// Allowed share of points on part 0.
pub const PART_FRACTION_BOUNDS: (f64, f64) = (0.2, 0.8);

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Point3 {
    loop {
        let v = Point3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v * (1.0 / n);
        }
    }
}

/// Uniform point on the disk of radius `r` in the plane `y = y`.
fn disk<R: Rng + ?Sized>(rng: &mut R, r_min: f64, r: f64, y: f64) -> Point3 {
    let rho = (rng.random_range(r_min * r_min..=r * r)).sqrt();
    let a = rng.random_range(0.0..TAU);
    Point3::new(rho * a.cos(), y, rho * a.sin())
}

/// Uniform point on the lateral surface of a vertical cylinder.
fn tube<R: Rng + ?Sized>(rng: &mut R, r: f64, y0: f64, y1: f64) -> Point3 {
    let a = rng.random_range(0.0..TAU);
    Point3::new(r * a.cos(), rng.random_range(y0..=y1), r * a.sin())
}

/// Picks index `i` with probability proportional to `areas[i]`.
fn pick<R: Rng + ?Sized>(rng: &mut R, areas: &[f64]) -> usize {
    let total: f64 = areas.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, a) in areas.iter().enumerate() {
        if u < *a {
            return i;
        }
        u -= a;
    }
    areas.len() - 1
}

fn sphere<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Point3> {
    (0..n).map(|_| unit_vector(rng)).collect()
}

fn cube<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            let face = rng.random_range(0..6);
            let (u, v) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
            let s = if face % 2 == 0 { 1.0 } else { -1.0 };
            match face / 2 {
                0 => Point3::new(s, u, v),
                1 => Point3::new(u, s, v),
                _ => Point3::new(u, v, s),
            }
        })
        .collect()
}

fn cylinder<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Point3> {
    let r = rng.random_range(0.5..=1.0);
    let h = rng.random_range(1.0..=2.0) / 2.0;
    let areas = [TAU * r * 2.0 * h, PI * r * r, PI * r * r];
    (0..n)
        .map(|_| match pick(rng, &areas) {
            0 => tube(rng, r, -h, h),
            1 => disk(rng, 0.0, r, h),
            _ => disk(rng, 0.0, r, -h),
        })
        .collect()
}

fn torus<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Point3> {
    let big = rng.random_range(0.65..=0.9);
    let small = rng.random_range(0.2..=0.35);
    (0..n)
        .map(|_| {
            // Area element ∝ (R + r cos θ): accept θ proportionally.
            let theta = loop {
                let t = rng.random_range(0.0..TAU);
                if rng.random_range(0.0..=1.0) * (big + small) <= big + small * t.cos() {
                    break t;
                }
            };
            let phi = rng.random_range(0.0..TAU);
            let ring = big + small * theta.cos();
            Point3::new(ring * phi.cos(), small * theta.sin(), ring * phi.sin())
        })
        .collect()
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, points: Vec<Point3>) -> Vec<Point3> {
    points
        .into_iter()
        .map(|p| {
            p + Point3::new(
                rng.sample::<f64, _>(StandardNormal) * JITTER_SIGMA,
                rng.sample::<f64, _>(StandardNormal) * JITTER_SIGMA,
                rng.sample::<f64, _>(StandardNormal) * JITTER_SIGMA,
            )
        })
        .collect()
}

fn finish<R: Rng + ?Sized>(rng: &mut R, points: Vec<Point3>) -> Result<PointCloud> {
    normalize(&PointCloud::new(jitter(rng, points))?)
}

/// `n_per_class` samples of each of sphere, cube, cylinder and torus,
/// interleaved by class.
pub fn synth_classification<R: Rng + ?Sized>(n_per_class: usize, n_points: usize, rng: &mut R) -> Result<Dataset> {
    if n_points == 0 {
        return Err(Error::invalid("n_points must be positive"));
    }
    let mut samples = Vec::with_capacity(4 * n_per_class);
    for _ in 0..n_per_class {
        for (class, _) in CLASSIFICATION_CLASSES.iter().enumerate() {
            let pts = match class {
                0 => sphere(rng, n_points),
                1 => cube(rng, n_points),
                2 => cylinder(rng, n_points),
                _ => torus(rng, n_points),
            };
            samples.push(finish(rng, pts)?.with_class_label(class));
        }
    }
    Dataset::new(
        samples,
        CLASSIFICATION_CLASSES.iter().map(|s| s.to_string()).collect(),
        Vec::new(),
        "synthetic",
    )
}

fn part_counts(n: usize, head_area: f64, shaft_area: f64) -> (usize, usize) {
    let f = (head_area / (head_area + shaft_area)).clamp(PART_FRACTION_BOUNDS.0, PART_FRACTION_BOUNDS.1);
    let n0 = ((f * n as f64).round() as usize).min(n);
    (n0, n - n0)
}

/// Two spheres joined by a bar along `y`.
fn barbell<R: Rng + ?Sized>(rng: &mut R, n: usize) -> (Vec<Point3>, Vec<usize>) {
    let a = rng.random_range(0.35..=0.5);
    let b = rng.random_range(0.08..=0.14);
    let half = rng.random_range(0.8..=1.2);
    let head_area = 2.0 * 4.0 * PI * a * a;
    let shaft_area = TAU * b * 2.0 * (half - a);
    let (n0, n1) = part_counts(n, head_area, shaft_area);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n0 {
        let c = if rng.random_bool(0.5) { half } else { -half };
        let p = unit_vector(rng) * a + Point3::new(0.0, c, 0.0);
        let inside_bar = p.x.hypot(p.z) < b && p.y.abs() < half;
        if !inside_bar {
            pts.push(p);
        }
    }
    while pts.len() < n0 + n1 {
        pts.push(tube(rng, b, -(half - a), half - a));
    }
    (pts, [vec![0; n0], vec![1; n1]].concat())
}

/// A spherical cap on a cylindrical stem along `y`.
fn mushroom<R: Rng + ?Sized>(rng: &mut R, n: usize) -> (Vec<Point3>, Vec<usize>) {
    let rho: f64 = rng.random_range(0.8..=1.0);
    let h0 = rho * rng.random_range(0.2..=0.5);
    let b = rng.random_range(0.15..=0.25);
    let stem = rng.random_range(0.8..=1.2);
    let rim = (rho * rho - h0 * h0).sqrt();
    let cap_areas = [TAU * rho * (rho - h0), PI * (rim * rim - b * b)];
    let stem_areas = [TAU * b * stem, PI * b * b];
    let (n0, n1) = part_counts(n, cap_areas.iter().sum(), stem_areas.iter().sum());
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n0 {
        pts.push(match pick(rng, &cap_areas) {
            0 => {
                // Height is uniform on a spherical zone.
                let y = rng.random_range(h0..=rho);
                let r = (rho * rho - y * y).max(0.0).sqrt();
                let a = rng.random_range(0.0..TAU);
                Point3::new(r * a.cos(), y, r * a.sin())
            }
            _ => disk(rng, b, rim, h0),
        });
    }
    for _ in 0..n1 {
        pts.push(match pick(rng, &stem_areas) {
            0 => tube(rng, b, h0 - stem, h0),
            _ => disk(rng, 0.0, b, h0 - stem),
        });
    }
    (pts, [vec![0; n0], vec![1; n1]].concat())
}

/// `n_per_class` barbells and mushrooms with per-point head/shaft labels.
pub fn synth_segmentation<R: Rng + ?Sized>(n_per_class: usize, n_points: usize, rng: &mut R) -> Result<Dataset> {
    if n_points < 2 {
        return Err(Error::invalid("segmentation samples need at least 2 points"));
    }
    let mut samples = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        for class in 0..SEGMENTATION_CLASSES.len() {
            let (pts, labels) = if class == 0 {
                barbell(rng, n_points)
            } else {
                mushroom(rng, n_points)
            };
            let mut order: Vec<usize> = (0..n_points).collect();
            order.shuffle(rng);
            let cloud = finish(rng, pts)?.with_class_label(class).with_part_labels(labels)?;
            samples.push(cloud.permuted(&order)?);
        }
    }
    Dataset::new(
        samples,
        SEGMENTATION_CLASSES.iter().map(|s| s.to_string()).collect(),
        SEGMENTATION_PARTS.iter().map(|s| s.to_string()).collect(),
        "synthetic",
    )
}
