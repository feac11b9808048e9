//! Point-cloud primitives, rotations and train-time augmentation.
//!
//! Rotations act on column vectors (`p' = R·p`) in a right-handed frame.
//! The vertical axis is `+y`.

use std::f64::consts::TAU;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance on `|axis| = 1` accepted by [`rodrigues`].
pub const AXIS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Squared Euclidean distance, accumulated as `dx² + dy² + dz²`.
    ///
    /// Every neighbor search in the crate uses this exact expression so that
    /// index-based and exhaustive searches see bit-identical distances.
    pub fn distance_squared(self, other: Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn distance(self, other: Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Lexicographic order on `(x, y, z)` using IEEE total ordering.
    pub fn lex_cmp(&self, other: &Point3) -> std::cmp::Ordering {
        self.x
            .total_cmp(&other.x)
            .then(self.y.total_cmp(&other.y))
            .then(self.z.total_cmp(&other.z))
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point3 {
    fn add_assign(&mut self, o: Point3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// An ordered point set with optional class and per-point part labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    class_label: Option<usize>,
    part_labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        Ok(Self {
            points,
            class_label: None,
            part_labels: None,
        })
    }

    pub fn with_class_label(mut self, label: usize) -> Self {
        self.class_label = Some(label);
        self
    }

    pub fn with_part_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "{} part labels for {} points",
                labels.len(),
                self.points.len()
            )));
        }
        self.part_labels = Some(labels);
        Ok(self)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn class_label(&self) -> Option<usize> {
        self.class_label
    }

    pub fn part_labels(&self) -> Option<&[usize]> {
        self.part_labels.as_deref()
    }

    /// Applies `f` to every point, keeping labels.
    pub fn map_points(&self, f: impl Fn(Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| f(p)).collect(),
            class_label: self.class_label,
            part_labels: self.part_labels.clone(),
        }
    }

    /// Reorders points (and part labels) so that output `i` is input `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<PointCloud> {
        if order.len() != self.points.len() {
            return Err(Error::invalid("permutation length differs from cloud size"));
        }
        Ok(PointCloud {
            points: order.iter().map(|&i| self.points[i]).collect(),
            class_label: self.class_label,
            part_labels: self.part_labels.as_ref().map(|l| order.iter().map(|&i| l[i]).collect()),
        })
    }
}

/// Arithmetic mean of the points: the global origin `o` of a cloud.
///
/// Points are summed in lexicographic order, so the result does not depend
/// on the storage order of the cloud.
pub fn centroid(cloud: &PointCloud) -> Result<Point3> {
    mean_order_independent(cloud.points())
}

pub(crate) fn mean_order_independent(points: &[Point3]) -> Result<Point3> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(Point3::lex_cmp);
    let mut sum = Point3::ORIGIN;
    for p in &sorted {
        sum += *p;
    }
    Ok(sum * (1.0 / points.len() as f64))
}

/// Centers the cloud on its centroid and scales it into the unit ball,
/// so that the farthest point lies at distance exactly 1.
pub fn normalize(cloud: &PointCloud) -> Result<PointCloud> {
    let center = centroid(cloud)?;
    let radius = cloud
        .points()
        .iter()
        .map(|&p| (p - center).norm())
        .fold(0.0_f64, f64::max);
    if radius <= 0.0 {
        return Err(Error::DegenerateCloud);
    }
    let inv = 1.0 / radius;
    Ok(cloud.map_points(|p| (p - center) * inv))
}

/// Translates the cloud so its centroid is the origin, without rescaling.
pub fn recenter(cloud: &PointCloud) -> Result<PointCloud> {
    let center = centroid(cloud)?;
    Ok(cloud.map_points(|p| p - center))
}

/// A proper rotation of 3-space stored row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub [[f64; 3]; 3]);

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix = RotationMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Builds a matrix from its three rows.
    pub fn from_rows(r0: Point3, r1: Point3, r2: Point3) -> Self {
        RotationMatrix([r0.to_array(), r1.to_array(), r2.to_array()])
    }

    pub fn row(&self, i: usize) -> Point3 {
        Point3::from_array(self.0[i])
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        Point3::new(self.row(0).dot(p), self.row(1).dot(p), self.row(2).dot(p))
    }

    pub fn transpose(&self) -> RotationMatrix {
        let m = &self.0;
        RotationMatrix([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn matmul(&self, other: &RotationMatrix) -> RotationMatrix {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        RotationMatrix(out)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest deviation of `R·Rᵀ` from the identity together with `|det R − 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.matmul(&self.transpose());
        let mut err = (self.determinant() - 1.0).abs();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((p.0[i][j] - target).abs());
            }
        }
        err
    }

    /// Row-major flattening.
    pub fn to_flat(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn max_abs_diff(&self, other: &RotationMatrix) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `R = I + sin θ·K + (1 − cos θ)·K²` with `K` the cross-product matrix of `axis`.
pub fn rodrigues(axis: Point3, angle: f64) -> Result<RotationMatrix> {
    let n = axis.norm();
    if !n.is_finite() || (n - 1.0).abs() > AXIS_TOLERANCE {
        return Err(Error::NonUnitAxis(n));
    }
    let (x, y, z) = (axis.x, axis.y, axis.z);
    let k = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
    let mut k2 = [[0.0; 3]; 3];
    for (i, row) in k2.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|m| k[i][m] * k[m][j]).sum();
        }
    }
    let (s, c) = angle.sin_cos();
    let mut r = RotationMatrix::IDENTITY.0;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += s * k[i][j] + (1.0 - c) * k2[i][j];
        }
    }
    Ok(RotationMatrix(r))
}

/// Axis drawn from a 3D standard normal and normalized; angle uniform in `[0, 2π)`.
///
/// This is the axis-angle scheme, not the Haar measure on SO(3).
pub fn sample_arbitrary_rotation<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    let axis = loop {
        let v = Point3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            break v * (1.0 / n);
        }
    };
    let angle = rng.random_range(0.0..TAU);
    rodrigues(axis, angle).expect("normalized axis")
}

/// Rotation about the vertical `+y` axis by a uniform angle in `[0, 2π)`.
pub fn sample_y_rotation<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    let angle = rng.random_range(0.0..TAU);
    y_rotation(angle)
}

pub fn y_rotation(angle: f64) -> RotationMatrix {
    rodrigues(Point3::new(0.0, 1.0, 0.0), angle).expect("unit axis")
}

pub fn apply_rotation(cloud: &PointCloud, r: &RotationMatrix) -> PointCloud {
    cloud.map_points(|p| r.apply(p))
}

pub const SCALE_RANGE: (f64, f64) = (2.0 / 3.0, 1.5);
pub const TRANSLATION_RANGE: f64 = 0.2;

/// A uniform scale followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleTranslate {
    pub scale: f64,
    pub translation: Point3,
}

impl ScaleTranslate {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let scale = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        let t = TRANSLATION_RANGE;
        let translation = Point3::new(
            rng.random_range(-t..=t),
            rng.random_range(-t..=t),
            rng.random_range(-t..=t),
        );
        Self { scale, translation }
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_points(|p| p * self.scale + self.translation)
    }
}

/// Random per-cloud scaling in `[2/3, 1.5]` and translation in `[−0.2, 0.2]³`.
pub fn augment_scale_translate<R: Rng + ?Sized>(cloud: &PointCloud, rng: &mut R) -> PointCloud {
    ScaleTranslate::sample(rng).apply(cloud)
}
