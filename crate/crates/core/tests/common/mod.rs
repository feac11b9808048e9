//! Oracles and checks shared by the integration and acceptance targets.
#![allow(dead_code)]

use aecnn::aecnn::{invariance_audit, AlignVariant, AuditReport, Coords, Network, NetworkConfig, Task};
use aecnn::autodiff::gradcheck::{check_inputs, check_params};
use aecnn::autodiff::{Graph, ParamStore, Tensor, Var};
use aecnn::data::{synth_classification, synth_segmentation};
use aecnn::geometry::{apply_rotation, centroid, sample_arbitrary_rotation, Point3, PointCloud};
use aecnn::lrf::{compute_lrf, relative_rotation, rir, AnchorStrategy, Lrf};
use aecnn::neighbors::{farthest_point_sampling, knn_feature_rows, SpatialIndex};
use aecnn::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const OP_REL: f64 = 1e-4;
pub const OP_ABS: f64 = 1e-6;
pub const PROBE_REL: f64 = 1e-3;
/// The whole network is piecewise smooth (ReLU, max pooling, feature-space
/// neighbor graphs), so the probe uses a smaller step than the op checks.
pub const PROBE_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_cloud<R: Rng>(n: usize, rng: &mut R) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

fn uniform<R: Rng>(shape: Vec<usize>, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Entries at least 0.05 away from zero, for ops with a kink at zero.
fn off_zero<R: Rng>(shape: Vec<usize>, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Columns are shuffled evenly spaced values, so maxima are separated by far
/// more than the finite-difference step.
fn distinct<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let mut data = vec![0.0; rows * cols];
    for c in 0..cols {
        let mut vals: Vec<f64> = (0..rows).map(|r| 0.1 * r as f64 - 0.3).collect();
        vals.shuffle(rng);
        for r in 0..rows {
            data[r * cols + c] = vals[r];
        }
    }
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Reduces `out` to a scalar with fixed random weights so every entry matters.
fn contract(g: &mut Graph<'_>, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w)?;
    g.sum(p)
}

type OpCase = (Vec<Tensor>, Box<dyn Fn(&mut Graph<'_>, &[Var]) -> Result<Var>>);

fn op_case(op: &str, rng: &mut ChaCha8Rng) -> OpCase {
    let mut dim = |lo: usize, hi: usize| rng.random_range(lo..=hi);
    let (n, a, b) = (dim(1, 6), dim(1, 6), dim(1, 6));
    match op {
        "linear" => {
            let c = uniform(vec![n, b], rng);
            let inputs = vec![
                uniform(vec![n, a], rng),
                uniform(vec![a, b], rng),
                uniform(vec![b], rng),
            ];
            (
                inputs,
                Box::new(move |g, v| {
                    let y = g.linear(v[0], v[1], Some(v[2]))?;
                    contract(g, y, &c)
                }),
            )
        }
        "linear_chain" => {
            let d = rng.random_range(1..=6);
            let c = uniform(vec![n, d], rng);
            let inputs = vec![
                uniform(vec![n, a], rng),
                uniform(vec![a, b], rng),
                uniform(vec![b, d], rng),
            ];
            (
                inputs,
                Box::new(move |g, v| {
                    let h = g.linear(v[0], v[1], None)?;
                    let y = g.linear(h, v[2], None)?;
                    contract(g, y, &c)
                }),
            )
        }
        "relu" => {
            let c = uniform(vec![n, a], rng);
            (
                vec![off_zero(vec![n, a], rng)],
                Box::new(move |g, v| {
                    let y = g.relu(v[0])?;
                    contract(g, y, &c)
                }),
            )
        }
        "add" | "sub" | "mul" => {
            let c = uniform(vec![n, a], rng);
            let name = op.to_string();
            (
                vec![uniform(vec![n, a], rng), uniform(vec![n, a], rng)],
                Box::new(move |g, v| {
                    let y = match name.as_str() {
                        "add" => g.add(v[0], v[1])?,
                        "sub" => g.sub(v[0], v[1])?,
                        _ => g.mul(v[0], v[1])?,
                    };
                    contract(g, y, &c)
                }),
            )
        }
        "scale" => {
            let c = uniform(vec![n, a], rng);
            let s = rng.random_range(-2.0..2.0);
            (
                vec![uniform(vec![n, a], rng)],
                Box::new(move |g, v| {
                    let y = g.scale(v[0], s)?;
                    contract(g, y, &c)
                }),
            )
        }
        "sum" => (
            vec![uniform(vec![n, a], rng)],
            Box::new(|g, v| {
                let sq = g.mul(v[0], v[0])?;
                g.sum(sq)
            }),
        ),
        "gather_rows" => {
            let m = rng.random_range(1..=8);
            let index: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
            let c = uniform(vec![m, a], rng);
            (
                vec![uniform(vec![n, a], rng)],
                Box::new(move |g, v| {
                    let y = g.gather_rows(v[0], index.clone())?;
                    contract(g, y, &c)
                }),
            )
        }
        "concat_cols" => {
            let c = uniform(vec![n, a + b + 1], rng);
            let inputs = vec![
                uniform(vec![n, a], rng),
                uniform(vec![n, b], rng),
                uniform(vec![n, 1], rng),
            ];
            (
                inputs,
                Box::new(move |g, v| {
                    let y = g.concat_cols(v)?;
                    contract(g, y, &c)
                }),
            )
        }
        "max_pool_groups" => {
            let group = rng.random_range(1..=5);
            let c = uniform(vec![n, a], rng);
            (
                vec![distinct(n * group, a, rng)],
                Box::new(move |g, v| {
                    let y = g.max_pool_groups(v[0], group)?;
                    contract(g, y, &c)
                }),
            )
        }
        "max_pool_set" => {
            let c = uniform(vec![1, a], rng);
            (
                vec![distinct(n, a, rng)],
                Box::new(move |g, v| {
                    let y = g.max_pool_set(v[0])?;
                    contract(g, y, &c)
                }),
            )
        }
        "weighted_group_sum" => {
            let group = rng.random_range(1..=4);
            let weights: Vec<f64> = (0..n * group).map(|_| rng.random_range(0.0..1.0)).collect();
            let c = uniform(vec![n, a], rng);
            (
                vec![uniform(vec![n * group, a], rng)],
                Box::new(move |g, v| {
                    let y = g.weighted_group_sum(v[0], weights.clone(), group)?;
                    contract(g, y, &c)
                }),
            )
        }
        "batched_matvec" => {
            let f = rng.random_range(1..=4);
            let c = uniform(vec![n, f], rng);
            (
                vec![uniform(vec![n, f * f], rng), uniform(vec![n, f], rng)],
                Box::new(move |g, v| {
                    let y = g.batched_matvec(v[0], v[1])?;
                    contract(g, y, &c)
                }),
            )
        }
        "set_norm" => {
            let rows = rng.random_range(2..=7);
            let c = uniform(vec![rows, a], rng);
            let inputs = vec![
                uniform(vec![rows, a], rng),
                uniform(vec![a], rng),
                uniform(vec![a], rng),
            ];
            (
                inputs,
                Box::new(move |g, v| {
                    let y = g.set_norm(v[0], v[1], v[2])?;
                    contract(g, y, &c)
                }),
            )
        }
        "cross_entropy" => {
            let classes = rng.random_range(2..=6);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            (
                vec![uniform(vec![n, classes], rng)],
                Box::new(move |g, v| g.cross_entropy(v[0], &labels)),
            )
        }
        "orth_penalty" => {
            let d = rng.random_range(1..=4);
            (
                vec![uniform(vec![n, d * d], rng)],
                Box::new(move |g, v| g.orth_penalty(v[0], d)),
            )
        }
        other => panic!("unknown op {other}"),
    }
}

pub const OPS: &[&str] = &[
    "linear",
    "linear_chain",
    "relu",
    "add",
    "sub",
    "mul",
    "scale",
    "sum",
    "gather_rows",
    "concat_cols",
    "max_pool_groups",
    "max_pool_set",
    "weighted_group_sum",
    "batched_matvec",
    "set_norm",
    "cross_entropy",
    "orth_penalty",
];

/// Worst normalized finite-difference error of `op` over `shapes` random
/// shapes; at most 1 is a pass.
pub fn op_worst_ratio(op: &str, shapes: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let store = ParamStore::new();
    let mut worst: f64 = 0.0;
    for _ in 0..shapes {
        let (inputs, f) = op_case(op, &mut r);
        let report = check_inputs(&store, &inputs, FD_STEP, |g, v| f(g, v)).unwrap();
        worst = worst.max(report.worst_ratio(OP_REL, OP_ABS));
    }
    worst
}

pub fn small_config(variant: AlignVariant, norm: bool) -> NetworkConfig {
    let mut c = NetworkConfig::compact();
    c.n_points = 64;
    c.sa_first.n_ref = 32;
    c.sa_first.k = 12;
    c.sa_first.widths = vec![8, 12];
    c.sa_next[0].k = 4;
    c.sa_next[0].widths = vec![12];
    c.sa_next[1].k = 4;
    c.sa_next[1].widths = vec![16];
    c.head = vec![8];
    c.align.variant = variant;
    c.norm = norm;
    c
}

/// Full classification loss gradient at ten parameter entries spread over
/// the network, compared with central differences.
pub fn network_probe_ratio(variant: AlignVariant, norm: bool, seed: u64) -> f64 {
    let cfg = small_config(variant, norm);
    let mut net = Network::new(&cfg, Task::Classification, seed).unwrap();
    let mut r = rng(seed + 1);
    // Zero biases put the self-neighbor row exactly on a ReLU kink, where
    // central differences average the two one-sided slopes.
    let biases: Vec<_> = net
        .params()
        .ids()
        .filter(|&id| net.params().name(id).ends_with(".b"))
        .collect();
    for id in biases {
        net.params_mut()
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += r.random_range(-0.1..0.1));
    }
    let cloud = synth_classification(1, cfg.n_points, &mut r).unwrap().samples()[2].clone();
    let label = cloud.class_label().unwrap();
    let ids: Vec<_> = net.params().ids().collect();
    let probes: Vec<_> = (0..10)
        .map(|i| {
            let id = ids[(i * ids.len()) / 10];
            (id, r.random_range(0..net.params().get(id).len()))
        })
        .collect();
    let report = check_params(net.params(), &probes, PROBE_STEP, |g| {
        let out = net.classify_graph(g, &cloud)?;
        let ce = g.cross_entropy(out.logits, &[label])?;
        match out.penalty {
            Some(p) => {
                let p = g.scale(p, 1e-3)?;
                g.add(ce, p)
            }
            None => Ok(ce),
        }
    })
    .unwrap();
    report.worst_ratio(PROBE_REL, OP_ABS)
}

pub struct Equivariance {
    pub rir: f64,
    pub relative_rotation: f64,
    pub basis: f64,
}

fn frame_at(points: &[Point3], index: &SpatialIndex, i: usize, k: usize, o: Point3) -> Option<Lrf> {
    let nb: Vec<Point3> = index.knn(points[i], k).into_iter().map(|j| points[j]).collect();
    compute_lrf(points[i], &nb, o, AnchorStrategy::Mean).ok()
}

/// Recomputes frame coordinates and relative rotations after a random
/// rotation of the whole scene, for `pairs` random clouds.
pub fn lrf_equivariance(pairs: usize, seed: u64) -> Equivariance {
    let mut r = rng(seed);
    let mut dev = Equivariance {
        rir: 0.0,
        relative_rotation: 0.0,
        basis: 0.0,
    };
    let k = 8;
    for _ in 0..pairs {
        let n = r.random_range(16..=48);
        let cloud = random_cloud(n, &mut r);
        let rot = sample_arbitrary_rotation(&mut r);
        let rotated = apply_rotation(&cloud, &rot);
        let (p, q) = (cloud.points(), rotated.points());
        let (op, oq) = (centroid(&cloud).unwrap(), centroid(&rotated).unwrap());
        let (ip, iq) = (SpatialIndex::build(p).unwrap(), SpatialIndex::build(q).unwrap());
        let i = r.random_range(0..n);
        let (Some(fp), Some(fq)) = (frame_at(p, &ip, i, k, op), frame_at(q, &iq, i, k, oq)) else {
            continue;
        };
        dev.basis = dev.basis.max(fq.basis.max_abs_diff(&fp.basis.matmul(&rot.transpose())));
        for j in ip.knn(p[i], k) {
            let (a, b) = (rir(p[j], &fp).to_array(), rir(q[j], &fq).to_array());
            for c in 0..3 {
                dev.rir = dev.rir.max((a[c] - b[c]).abs());
            }
            if let (Some(gp), Some(gq)) = (frame_at(p, &ip, j, k, op), frame_at(q, &iq, j, k, oq)) {
                let d = relative_rotation(&fp, &gp).max_abs_diff(&relative_rotation(&fq, &gq));
                dev.relative_rotation = dev.relative_rotation.max(d);
            }
        }
    }
    dev
}

fn sorted_candidates(points: &[Point3], q: Point3) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (q.distance_squared(*p), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all
}

fn pad(mut v: Vec<usize>, k: usize) -> Vec<usize> {
    let first = v[0];
    v.resize(k, first);
    v
}

pub fn brute_knn(points: &[Point3], q: Point3, k: usize) -> Vec<usize> {
    pad(
        sorted_candidates(points, q).into_iter().take(k).map(|c| c.1).collect(),
        k,
    )
}

pub fn brute_ball(points: &[Point3], q: Point3, radius: f64, k: usize) -> Vec<usize> {
    let all = sorted_candidates(points, q);
    let inside: Vec<usize> = all
        .iter()
        .filter(|c| c.0 <= radius * radius)
        .take(k)
        .map(|c| c.1)
        .collect();
    if inside.is_empty() {
        return vec![all[0].1; k];
    }
    pad(inside, k)
}

/// Quadratic-time farthest point sampling straight from the definition.
pub fn brute_fps(points: &[Point3], m: usize) -> Vec<usize> {
    let n = points.len() as f64;
    let sum = points.iter().fold(Point3::new(0.0, 0.0, 0.0), |a, &p| a + p);
    let c = sum * (1.0 / n);
    let better = |d: f64, i: usize, bd: f64, b: usize| d > bd || (d == bd && points[i].lex_cmp(&points[b]).is_lt());
    let mut best = 0;
    for i in 1..points.len() {
        if better(c.distance_squared(points[i]), i, c.distance_squared(points[best]), best) {
            best = i;
        }
    }
    let mut out = vec![best];
    while out.len() < m {
        let mut pick: Option<(f64, usize)> = None;
        for i in 0..points.len() {
            if out.contains(&i) {
                continue;
            }
            let d = out
                .iter()
                .map(|&s| points[s].distance_squared(points[i]))
                .fold(f64::INFINITY, f64::min);
            if pick.is_none_or(|(bd, b)| better(d, i, bd, b)) {
                pick = Some((d, i));
            }
        }
        out.push(pick.unwrap().1);
    }
    out
}

pub fn brute_feature_knn(features: &Tensor, q: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..features.rows())
        .map(|i| {
            let d: f64 = features
                .row(q)
                .iter()
                .zip(features.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d, i)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    pad(all.into_iter().take(k).map(|c| c.1).collect(), k)
}

/// Mismatching instances per search routine over `instances` random clouds.
pub fn oracle_mismatches(instances: usize, seed: u64) -> [(&'static str, usize); 4] {
    let mut r = rng(seed);
    let mut bad = [("fps", 0), ("knn", 0), ("ball_query", 0), ("feature_knn", 0)];
    for _ in 0..instances {
        let n = r.random_range(2..=512);
        let cloud = random_cloud(n, &mut r);
        let pts = cloud.points();
        let m = r.random_range(1..=n.min(64));
        if farthest_point_sampling(pts, m).unwrap() != brute_fps(pts, m) {
            bad[0].1 += 1;
        }
        let index = SpatialIndex::build(pts).unwrap();
        let k = r.random_range(1..=48);
        let radius = r.random_range(0.05..0.6);
        let queries: Vec<Point3> = (0..8)
            .map(|_| {
                if r.random_bool(0.5) {
                    pts[r.random_range(0..n)]
                } else {
                    random_cloud(1, &mut r).points()[0]
                }
            })
            .collect();
        if queries.iter().any(|&q| index.knn(q, k) != brute_knn(pts, q, k)) {
            bad[1].1 += 1;
        }
        if queries
            .iter()
            .any(|&q| index.ball_query(q, radius, k) != brute_ball(pts, q, radius, k))
        {
            bad[2].1 += 1;
        }
        let rows = n.min(128);
        let f = r.random_range(1..=16);
        let feats = uniform(vec![rows, f], &mut r);
        let qs: Vec<usize> = (0..rows.min(16)).map(|_| r.random_range(0..rows)).collect();
        let graph = knn_feature_rows(&feats, &qs, k).unwrap();
        if qs
            .iter()
            .enumerate()
            .any(|(t, &q)| graph.neighbors(t) != brute_feature_knn(&feats, q, k).as_slice())
        {
            bad[3].1 += 1;
        }
    }
    bad
}

pub fn classification_clouds(count: usize, n_points: usize, seed: u64) -> Vec<PointCloud> {
    let ds = synth_classification(count.div_ceil(4), n_points, &mut rng(seed)).unwrap();
    ds.samples().iter().take(count).cloned().collect()
}

pub fn segmentation_clouds(count: usize, n_points: usize, seed: u64) -> Vec<PointCloud> {
    let ds = synth_segmentation(count.div_ceil(2), n_points, &mut rng(seed)).unwrap();
    ds.samples().iter().take(count).cloned().collect()
}

pub fn audit(cfg: &NetworkConfig, task: Task, clouds: &[PointCloud], rotations: usize, seed: u64) -> AuditReport {
    let net = Network::new(cfg, task, seed).unwrap();
    invariance_audit(&net, clouds, rotations, &mut rng(seed + 7)).unwrap()
}

/// Plain edge convolution over raw coordinates.
pub fn absolute_baseline(mut cfg: NetworkConfig) -> NetworkConfig {
    cfg.sa_first.coords = Coords::Absolute;
    cfg.align.variant = AlignVariant::PlainEdgeConv;
    cfg
}
