//! Building blocks of the hierarchical network.

use rand::Rng;

use super::config::{AlignVariant, Coords, SaFirstConfig};
use crate::autodiff::{Graph, Mlp, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{centroid, Point3, PointCloud, RotationMatrix};
use crate::lrf::{compute_lrf_with_fallback, relative_rotation, rir, Lrf};
use crate::neighbors::{euclidean_graph, farthest_point_sampling, knn_feature_rows, NeighborGraph, SpatialIndex};

/// Width of the per-edge relation descriptor `R ⊕ T`.
pub const RELATION_DIM: usize = 12;

/// Output of one set-abstraction level.
#[derive(Debug, Clone)]
pub struct SaOutput {
    /// Reference points of this level.
    pub points: Vec<Point3>,
    /// Frame of every reference point.
    pub frames: Vec<Lrf>,
    /// Indices of the references into the previous level (or the input cloud).
    pub source: Vec<usize>,
    /// `points.len() × F` features.
    pub features: Var,
    /// Orthogonality penalty of predicted alignment matrices, if any.
    pub penalty: Option<Var>,
    /// Number of frames that needed a fallback axis.
    pub fallbacks: usize,
}

impl SaOutput {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Shared point MLP followed by a max over each group of `k` rows.
///
/// `rirs` holds `groups·k` rows of 3 coordinates; the result has one row
/// per group.
pub fn pointnet_kernel(g: &mut Graph<'_>, rirs: Var, k: usize, h: &Mlp) -> Result<Var> {
    let y = h.forward(g, rirs)?;
    g.max_pool_groups(y, k)
}

/// First level: sample references, group neighbors, encode them in local frames.
pub fn sa_first(g: &mut Graph<'_>, cloud: &PointCloud, cfg: &SaFirstConfig, h: &Mlp) -> Result<SaOutput> {
    let pts = cloud.points();
    if cfg.n_ref == 0 || cfg.n_ref > pts.len() {
        return Err(Error::invalid(format!(
            "cannot sample {} references from {} points",
            cfg.n_ref,
            pts.len()
        )));
    }
    let o = centroid(cloud)?;
    let refs = farthest_point_sampling(pts, cfg.n_ref)?;
    let index = SpatialIndex::build(pts)?;
    let graph = euclidean_graph(&index, &refs, cfg.search(), cfg.k);

    let mut frames = Vec::with_capacity(refs.len());
    let mut rows = Vec::with_capacity(refs.len() * cfg.k * 3);
    let mut fallbacks = 0;
    let mut nbhd = Vec::with_capacity(cfg.k);
    for (r, &i) in refs.iter().enumerate() {
        nbhd.clear();
        nbhd.extend(graph.neighbors(r).iter().map(|&j| pts[j]));
        let frame = match cfg.coords {
            Coords::Lrf => {
                let (frame, fb) = compute_lrf_with_fallback(pts[i], &nbhd, o, cfg.anchor)?;
                fallbacks += usize::from(fb.any());
                frame
            }
            Coords::Absolute => Lrf {
                origin: pts[i],
                basis: RotationMatrix::IDENTITY,
            },
        };
        for &p in &nbhd {
            let t = match cfg.coords {
                Coords::Lrf => rir(p, &frame).t,
                Coords::Absolute => p,
            };
            rows.extend(t.to_array());
        }
        frames.push(frame);
    }
    if fallbacks > 0 {
        log::warn!("{fallbacks} of {} frames used a fallback axis", refs.len());
    }
    let input = g.constant(Tensor::matrix(refs.len() * cfg.k, 3, rows)?);
    let features = pointnet_kernel(g, input, cfg.k, h)?;
    Ok(SaOutput {
        points: refs.iter().map(|&i| pts[i]).collect(),
        frames,
        source: refs,
        features,
        penalty: None,
        fallbacks,
    })
}

/// Per-edge constants: `R ⊕ T`, `T` alone and the two raw bases.
#[derive(Debug, Clone)]
pub struct EdgeGeometry {
    pub relation: Tensor,
    pub translation: Tensor,
    pub bases: Tensor,
}

impl EdgeGeometry {
    /// Edge `e` sends `points_j[src[e]]` (frame `frames_j[src[e]]`) into
    /// `frames_i[dst[e]]`.
    pub fn new(frames_i: &[Lrf], dst: &[usize], points_j: &[Point3], frames_j: &[Lrf], src: &[usize]) -> Result<Self> {
        let n = dst.len();
        let mut relation = Vec::with_capacity(n * RELATION_DIM);
        let mut translation = Vec::with_capacity(n * 3);
        let mut bases = Vec::with_capacity(n * 18);
        for (&a, &b) in dst.iter().zip(src) {
            let (fi, fj) = (&frames_i[a], &frames_j[b]);
            let r = relative_rotation(fi, fj).to_flat();
            let t = rir(points_j[b], fi).to_array();
            relation.extend(r);
            relation.extend(t);
            translation.extend(t);
            bases.extend(fi.basis.to_flat());
            bases.extend(fj.basis.to_flat());
        }
        Ok(Self {
            relation: Tensor::matrix(n, RELATION_DIM, relation)?,
            translation: Tensor::matrix(n, 3, translation)?,
            bases: Tensor::matrix(n, 18, bases)?,
        })
    }
}

/// The learned map `φ` that expresses a neighbor feature in the reference frame.
#[derive(Debug, Clone)]
pub struct Aligner {
    variant: AlignVariant,
    dim: usize,
    phi: Option<Mlp>,
}

impl Aligner {
    /// `dim` is the feature width; `hidden` the width of `φ`'s hidden layer.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        variant: AlignVariant,
        dim: usize,
        hidden: usize,
        norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let widths = match variant {
            AlignVariant::PlainEdgeConv => None,
            AlignVariant::Aeconv1 => Some(vec![RELATION_DIM, hidden, dim * dim]),
            AlignVariant::Aeconv2 => Some(vec![18 + 3 + dim, hidden, dim]),
            AlignVariant::Aeconv3 => Some(vec![RELATION_DIM + dim, hidden, dim]),
        };
        let phi = widths.map(|w| Mlp::new(store, name, &w, norm, rng)).transpose()?;
        Ok(Self { variant, dim, phi })
    }

    pub fn variant(&self) -> AlignVariant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phi(&self) -> Option<&Mlp> {
        self.phi.as_ref()
    }
}

/// Aligns `x_j` (`E × F`) into the frames described by `geo`.
///
/// Returns the aligned features and, for the matrix-predicting variant,
/// the orthogonality penalty of the predicted matrices.
pub fn align_feature(g: &mut Graph<'_>, x_j: Var, geo: &EdgeGeometry, aligner: &Aligner) -> Result<(Var, Option<Var>)> {
    let phi = match (&aligner.phi, aligner.variant) {
        (None, _) | (_, AlignVariant::PlainEdgeConv) => return Ok((x_j, None)),
        (Some(phi), _) => phi,
    };
    match aligner.variant {
        AlignVariant::Aeconv1 => {
            let rel = g.constant(geo.relation.clone());
            let m = phi.forward(g, rel)?;
            let x = g.batched_matvec(m, x_j)?;
            let pen = g.orth_penalty(m, aligner.dim)?;
            Ok((x, Some(pen)))
        }
        AlignVariant::Aeconv2 => {
            let bases = g.constant(geo.bases.clone());
            let t = g.constant(geo.translation.clone());
            let input = g.concat_cols(&[bases, t, x_j])?;
            Ok((phi.forward(g, input)?, None))
        }
        AlignVariant::Aeconv3 => {
            let rel = g.constant(geo.relation.clone());
            let input = g.concat_cols(&[rel, x_j])?;
            Ok((phi.forward(g, input)?, None))
        }
        AlignVariant::PlainEdgeConv => unreachable!("handled above"),
    }
}

/// Edge convolution over `graph`, whose indices refer to rows of `prev`.
///
/// For every edge the neighbor feature is aligned into the reference frame,
/// then `q(x_i, x̂_j − x_i, T)` is max-pooled over the neighbors.
pub fn aligned_edge_conv(
    g: &mut Graph<'_>,
    prev: &SaOutput,
    graph: &NeighborGraph,
    q: &Mlp,
    aligner: &Aligner,
) -> Result<(Var, Option<Var>)> {
    let k = graph.k();
    let dst: Vec<usize> = graph
        .reference_indices()
        .iter()
        .flat_map(|&r| std::iter::repeat_n(r, k))
        .collect();
    let src = graph.flat_neighbors().to_vec();
    let geo = EdgeGeometry::new(&prev.frames, &dst, &prev.points, &prev.frames, &src)?;
    let x_i = g.gather_rows(prev.features, dst)?;
    let x_j = g.gather_rows(prev.features, src)?;
    let (x_hat, penalty) = align_feature(g, x_j, &geo, aligner)?;
    let diff = g.sub(x_hat, x_i)?;
    let input = if aligner.variant == AlignVariant::PlainEdgeConv {
        g.concat_cols(&[x_i, diff])?
    } else {
        let t = g.constant(geo.translation);
        g.concat_cols(&[x_i, diff, t])?
    };
    let y = q.forward(g, input)?;
    Ok((g.max_pool_groups(y, k)?, penalty))
}

/// Later level: keep a quarter of the references and fuse features over a
/// feature-space neighbor graph.
pub fn sa_next(g: &mut Graph<'_>, prev: &SaOutput, k: usize, q: &Mlp, aligner: &Aligner) -> Result<SaOutput> {
    let n = prev.len();
    if n < 4 {
        return Err(Error::invalid(format!("sa_next needs at least 4 points, got {n}")));
    }
    let keep = farthest_point_sampling(&prev.points, n / 4)?;
    let graph = knn_feature_rows(g.value(prev.features), &keep, k)?;
    let (features, penalty) = aligned_edge_conv(g, prev, &graph, q, aligner)?;
    Ok(SaOutput {
        points: keep.iter().map(|&i| prev.points[i]).collect(),
        frames: keep.iter().map(|&i| prev.frames[i]).collect(),
        source: keep,
        features,
        penalty,
        fallbacks: 0,
    })
}

/// Number of coarse neighbors each fine point interpolates from.
pub const FP_NEIGHBORS: usize = 3;

/// Inverse-distance interpolation of aligned coarse features onto the
/// fine level, concatenated with the fine level's own features and mixed by
/// `mlp`.
pub fn feature_propagation(
    g: &mut Graph<'_>,
    coarse: &SaOutput,
    coarse_features: Var,
    fine: &SaOutput,
    fine_features: Var,
    aligner: &Aligner,
    mlp: &Mlp,
) -> Result<(Var, Option<Var>)> {
    let index = SpatialIndex::build(&coarse.points)?;
    let mut dst = Vec::with_capacity(fine.len() * FP_NEIGHBORS);
    let mut src = Vec::with_capacity(fine.len() * FP_NEIGHBORS);
    let mut weights = Vec::with_capacity(fine.len() * FP_NEIGHBORS);
    for (f, &p) in fine.points.iter().enumerate() {
        let mut nbs = index.knn(p, FP_NEIGHBORS);
        let first = nbs[0];
        nbs.resize(FP_NEIGHBORS, first);
        let w: Vec<f64> = nbs
            .iter()
            .map(|&c| 1.0 / p.distance(coarse.points[c]).max(1e-10))
            .collect();
        let total: f64 = w.iter().sum();
        weights.extend(w.iter().map(|v| v / total));
        dst.extend(std::iter::repeat_n(f, FP_NEIGHBORS));
        src.extend(nbs);
    }
    let geo = EdgeGeometry::new(&fine.frames, &dst, &coarse.points, &coarse.frames, &src)?;
    let x = g.gather_rows(coarse_features, src)?;
    let (x_hat, penalty) = align_feature(g, x, &geo, aligner)?;
    let interp = g.weighted_group_sum(x_hat, weights, FP_NEIGHBORS)?;
    let input = g.concat_cols(&[interp, fine_features])?;
    Ok((mlp.forward(g, input)?, penalty))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aecnn::config::SearchKind;
    use crate::autodiff::ParamStore;
    use crate::geometry::{apply_rotation, normalize, sample_arbitrary_rotation};
    use crate::lrf::AnchorStrategy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.3..0.8),
                )
            })
            .collect();
        normalize(&PointCloud::new(pts).unwrap()).unwrap()
    }

    fn first_cfg(n_ref: usize, k: usize) -> SaFirstConfig {
        SaFirstConfig {
            n_ref,
            k,
            anchor: AnchorStrategy::Mean,
            search: SearchKind::Knn,
            radius: 0.2,
            coords: Coords::Lrf,
            widths: vec![8, 16],
        }
    }

    #[test]
    fn single_neighbor_gives_identical_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let h = Mlp::new(&mut store, "h", &[3, 8, 16], false, &mut rng).unwrap();
        let c = cloud(20, 2);
        let mut g = Graph::new(&store);
        let out = sa_first(&mut g, &c, &first_cfg(20, 1), &h).unwrap();
        let f = g.value(out.features);
        for r in 1..f.rows() {
            assert_eq!(f.row(r), f.row(0));
        }
    }

    #[test]
    fn first_level_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let h = Mlp::new(&mut store, "h", &[3, 8, 16], false, &mut rng).unwrap();
        let c = cloud(64, 4);
        let cfg = first_cfg(16, 8);
        let mut g = Graph::new(&store);
        let base = sa_first(&mut g, &c, &cfg, &h).unwrap();
        let base = g.value(base.features).clone();
        for _ in 0..5 {
            let r = sample_arbitrary_rotation(&mut rng);
            let mut g = Graph::new(&store);
            let out = sa_first(&mut g, &apply_rotation(&c, &r), &cfg, &h).unwrap();
            assert!(g.value(out.features).max_abs_diff(&base) < 1e-9);
        }
    }

    #[test]
    fn edge_geometry_of_a_self_loop() {
        let c = cloud(32, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let h = Mlp::new(&mut store, "h", &[3, 8], false, &mut rng).unwrap();
        let mut g = Graph::new(&store);
        let out = sa_first(&mut g, &c, &first_cfg(8, 4), &h).unwrap();
        let geo = EdgeGeometry::new(&out.frames, &[2], &out.points, &out.frames, &[2]).unwrap();
        let row = geo.relation.row(0);
        let eye = RotationMatrix::IDENTITY.to_flat();
        for i in 0..9 {
            assert!((row[i] - eye[i]).abs() < 1e-12);
        }
        assert!(row[9..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn plain_alignment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let a = Aligner::new(&mut store, "a", AlignVariant::PlainEdgeConv, 4, 4, false, &mut rng).unwrap();
        assert!(a.phi().is_none() && store.is_empty());
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::matrix(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let geo = EdgeGeometry {
            relation: Tensor::zeros(vec![1, 12]),
            translation: Tensor::zeros(vec![1, 3]),
            bases: Tensor::zeros(vec![1, 18]),
        };
        let (y, pen) = align_feature(&mut g, x, &geo, &a).unwrap();
        assert_eq!(y, x);
        assert!(pen.is_none());
    }

    #[test]
    fn sa_next_rejects_tiny_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let h = Mlp::new(&mut store, "h", &[3, 4], false, &mut rng).unwrap();
        let q = Mlp::new(&mut store, "q", &[11, 4], false, &mut rng).unwrap();
        let a = Aligner::new(&mut store, "a", AlignVariant::Aeconv3, 4, 4, false, &mut rng).unwrap();
        let c = cloud(16, 9);
        let mut g = Graph::new(&store);
        let l0 = sa_first(&mut g, &c, &first_cfg(3, 2), &h).unwrap();
        assert!(sa_next(&mut g, &l0, 2, &q, &a).is_err());
    }
}
