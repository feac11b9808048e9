//! Local reference frames and the rotation-invariant representation.
//!
//! A frame at reference point `p` has its `z` axis along `o→p` (with `o` the
//! cloud center), its `x` axis along the projection of an anchor point onto
//! the plane through `p` orthogonal to `z`, and `y = z × x`. Coordinates of
//! neighbors in that frame do not change when the whole scene is rotated
//! about `o`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RotationMatrix};

/// Degeneracy threshold in model units.
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorStrategy {
    /// Barycenter of the neighborhood.
    #[default]
    Mean,
    /// Neighbor farthest from the reference within the tangent plane.
    MaxProjection,
}

/// Origin plus an orthonormal basis whose rows are the `x`, `y`, `z` axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lrf {
    pub origin: Point3,
    pub basis: RotationMatrix,
}

impl Lrf {
    pub fn x(&self) -> Point3 {
        self.basis.row(0)
    }

    pub fn y(&self) -> Point3 {
        self.basis.row(1)
    }

    pub fn z(&self) -> Point3 {
        self.basis.row(2)
    }
}

/// Coordinates of a point expressed in a local frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RirPoint {
    pub t: Point3,
}

impl RirPoint {
    pub fn to_array(self) -> [f64; 3] {
        self.t.to_array()
    }
}

/// Which fallbacks fired while building a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Fallback {
    pub reference: bool,
    pub anchor: bool,
}

impl Fallback {
    pub fn any(&self) -> bool {
        self.reference || self.anchor
    }
}

pub fn anchor_mean(neighbors: &[Point3]) -> Result<Point3> {
    if neighbors.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut sum = Point3::ORIGIN;
    for p in neighbors {
        sum += *p;
    }
    Ok(sum * (1.0 / neighbors.len() as f64))
}

fn unit_axis(p_i: Point3, o: Point3) -> Option<Point3> {
    let v = p_i - o;
    let n = v.norm();
    (n > EPS).then(|| v * (1.0 / n))
}

/// Component of `v` orthogonal to the unit vector `z`.
fn reject(v: Point3, z: Point3) -> Point3 {
    v - z * v.dot(z)
}

fn max_projection_along(neighbors: &[Point3], z: Point3, o: Point3) -> Result<Point3> {
    let mut best: Option<(f64, Point3)> = None;
    for &p in neighbors {
        let d = reject(p - o, z).norm();
        if best.is_none_or(|(bd, _)| d > bd) {
            best = Some((d, p));
        }
    }
    match best {
        None => Err(Error::EmptyCloud),
        Some((d, _)) if d <= EPS => Err(Error::DegenerateAnchor),
        Some((_, p)) => Ok(p),
    }
}

/// The neighbor whose projection onto the tangent plane at `p_i` lies
/// farthest from `p_i` (first one on ties).
pub fn anchor_max_projection(neighbors: &[Point3], p_i: Point3, o: Point3) -> Result<Point3> {
    if neighbors.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let z = unit_axis(p_i, o).ok_or(Error::DegenerateReference)?;
    max_projection_along(neighbors, z, o)
}

fn anchor_for(strategy: AnchorStrategy, neighbors: &[Point3], z: Point3, o: Point3) -> Result<Point3> {
    match strategy {
        AnchorStrategy::Mean => anchor_mean(neighbors),
        AnchorStrategy::MaxProjection => max_projection_along(neighbors, z, o),
    }
}

fn frame(origin: Point3, x: Point3, z: Point3) -> Lrf {
    let y = z.cross(x);
    Lrf {
        origin,
        basis: RotationMatrix::from_rows(x, y, z),
    }
}

/// Builds the frame at `p_i`, failing on degenerate configurations.
pub fn compute_lrf(p_i: Point3, neighbors: &[Point3], o: Point3, strategy: AnchorStrategy) -> Result<Lrf> {
    if neighbors.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let z = unit_axis(p_i, o).ok_or(Error::DegenerateReference)?;
    let m = anchor_for(strategy, neighbors, z, o)?;
    let x = reject(m - o, z);
    let n = x.norm();
    if n <= EPS {
        return Err(Error::DegenerateAnchor);
    }
    Ok(frame(p_i, x * (1.0 / n), z))
}

/// Builds the frame at `p_i`, substituting deterministic axes when the
/// reference sits on the center or the anchor projection vanishes.
///
/// A reference at the center uses `z = +z`. A vanishing anchor uses the
/// projection of global `+x` onto the tangent plane, or `+y` if that also
/// vanishes. Either substitution gives up rotation invariance for that frame.
pub fn compute_lrf_with_fallback(
    p_i: Point3,
    neighbors: &[Point3],
    o: Point3,
    strategy: AnchorStrategy,
) -> Result<(Lrf, Fallback)> {
    if neighbors.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut fallback = Fallback::default();
    let z = unit_axis(p_i, o).unwrap_or_else(|| {
        fallback.reference = true;
        Point3::new(0.0, 0.0, 1.0)
    });
    let x = anchor_for(strategy, neighbors, z, o)
        .ok()
        .map(|m| reject(m - o, z))
        .filter(|x| x.norm() > EPS);
    let x = match x {
        Some(x) => x,
        None => {
            fallback.anchor = true;
            [Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)]
                .into_iter()
                .map(|e| reject(e, z))
                .find(|v| v.norm() > EPS)
                .expect("+x and +y cannot both be parallel to z")
        }
    };
    Ok((frame(p_i, x * (1.0 / x.norm()), z), fallback))
}

/// `t = (⟨p_j − p_i, x⟩, ⟨p_j − p_i, y⟩, ⟨p_j − p_i, z⟩)`.
pub fn rir(p_j: Point3, frame: &Lrf) -> RirPoint {
    RirPoint {
        t: frame.basis.apply(p_j - frame.origin),
    }
}

/// `R = e_i · e_jᵀ` for basis matrices whose rows are the frame axes.
pub fn relative_rotation(frame_i: &Lrf, frame_j: &Lrf) -> RotationMatrix {
    frame_i.basis.matmul(&frame_j.basis.transpose())
}

/// Translation between frames: the position of `p_j` in `frame_i`.
pub fn relative_translation(frame_i: &Lrf, p_j: Point3) -> RirPoint {
    rir(p_j, frame_i)
}
