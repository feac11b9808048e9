//! The hierarchical rotation-invariant network.
//!
//! A first set-abstraction level turns local neighborhoods into features
//! through their frame coordinates. Each later level keeps a quarter of the
//! references and fuses features with aligned edge convolution over a
//! feature-space graph. Classification max-pools the last level; part
//! segmentation propagates features back to every input point.

mod ablation;
mod audit;
mod blocks;
mod config;
mod train;

pub use ablation::{format_table, run_cell, AblationCell, AblationGrid, CellResult};
pub use audit::{invariance_audit, AuditReport};
pub use blocks::{
    align_feature, aligned_edge_conv, feature_propagation, pointnet_kernel, sa_first, sa_next, Aligner, EdgeGeometry,
    SaOutput, FP_NEIGHBORS, RELATION_DIM,
};
pub use config::{
    AlignConfig, AlignVariant, Coords, NetworkConfig, RunConfig, SaFirstConfig, SaNextConfig, SearchKind,
    SegmentationConfig, Setting, Task, TrainConfig,
};
pub use train::{prepare_sample, train_epoch, EpochStats, Trainer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{read_checkpoint, write_checkpoint, Graph, Mlp, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

#[derive(Debug, Clone)]
struct Block {
    k: usize,
    q: Mlp,
    align: Aligner,
}

#[derive(Debug, Clone)]
struct Propagation {
    align: Aligner,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
enum Head {
    Classify(Mlp),
    Segment { stages: Vec<Propagation>, head: Mlp },
}

/// Result of building one forward pass on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `1 × n_classes` for classification, `n × n_parts` for segmentation
    /// (rows in input point order).
    pub logits: Var,
    /// Sum of alignment orthogonality penalties, if the variant has them.
    pub penalty: Option<Var>,
    /// Frames that needed a fallback axis.
    pub fallbacks: usize,
}

/// Network weights together with the architecture that uses them.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    task: Task,
    params: ParamStore,
    first: Mlp,
    blocks: Vec<Block>,
    head: Head,
}

impl Network {
    /// Validates `config` and initializes weights from `seed`.
    pub fn new(config: &NetworkConfig, task: Task, seed: u64) -> Result<Self> {
        match task {
            Task::Classification => config.validate()?,
            Task::Segmentation => config.validate_segmentation()?,
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let norm = config.norm;
        let hidden = |f: usize| {
            if config.align.hidden == 0 {
                f
            } else {
                config.align.hidden
            }
        };

        let mut widths = vec![3];
        widths.extend(&config.sa_first.widths);
        let first = Mlp::new(&mut params, "sa_first.h", &widths, norm, &mut rng)?;

        let mut blocks = Vec::with_capacity(config.sa_next.len());
        let mut f = first.out_dim();
        for (i, b) in config.sa_next.iter().enumerate() {
            let variant = config.align.variant;
            let align = Aligner::new(
                &mut params,
                &format!("sa_next.{i}.phi"),
                variant,
                f,
                hidden(f),
                norm,
                &mut rng,
            )?;
            let extra = if variant == AlignVariant::PlainEdgeConv { 0 } else { 3 };
            let mut w = vec![2 * f + extra];
            w.extend(&b.widths);
            let q = Mlp::new(&mut params, &format!("sa_next.{i}.q"), &w, norm, &mut rng)?;
            f = q.out_dim();
            blocks.push(Block { k: b.k, q, align });
        }

        let head = match task {
            Task::Classification => {
                let mut w = vec![f];
                w.extend(&config.head);
                w.push(config.n_classes);
                Head::Classify(Mlp::new(&mut params, "head", &w, false, &mut rng)?)
            }
            Task::Segmentation => {
                let level_widths = config.level_widths();
                let mut coarse = f;
                let mut stages = Vec::new();
                for (s, widths) in config.segmentation.fp.iter().enumerate() {
                    let fine = level_widths[level_widths.len() - 2 - s];
                    let align = Aligner::new(
                        &mut params,
                        &format!("fp.{s}.phi"),
                        config.align.variant,
                        coarse,
                        hidden(coarse),
                        norm,
                        &mut rng,
                    )?;
                    let mut w = vec![coarse + fine];
                    w.extend(widths);
                    let mlp = Mlp::new(&mut params, &format!("fp.{s}.mlp"), &w, norm, &mut rng)?;
                    coarse = mlp.out_dim();
                    stages.push(Propagation { align, mlp });
                }
                let mut w = vec![coarse + config.n_classes];
                w.extend(&config.segmentation.head);
                w.push(config.n_parts);
                let head = Mlp::new(&mut params, "seg_head", &w, false, &mut rng)?;
                Head::Segment { stages, head }
            }
        };
        Ok(Self {
            config: config.clone(),
            task,
            params,
            first,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Total number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Runs every set-abstraction level on the tape.
    pub fn levels(&self, g: &mut Graph<'_>, cloud: &PointCloud) -> Result<Vec<SaOutput>> {
        let mut levels = vec![sa_first(g, cloud, &self.config.sa_first, &self.first)?];
        for b in &self.blocks {
            let next = sa_next(g, levels.last().expect("non-empty"), b.k, &b.q, &b.align)?;
            levels.push(next);
        }
        Ok(levels)
    }

    /// Max-pooled feature of the last level (`1 × F`).
    pub fn embedding(&self, g: &mut Graph<'_>, cloud: &PointCloud) -> Result<(Var, Vec<SaOutput>)> {
        let levels = self.levels(g, cloud)?;
        let pooled = g.max_pool_set(levels.last().expect("non-empty").features)?;
        Ok((pooled, levels))
    }

    /// Builds the classification pass for one cloud.
    pub fn classify_graph(&self, g: &mut Graph<'_>, cloud: &PointCloud) -> Result<Forward> {
        let Head::Classify(head) = &self.head else {
            return Err(Error::invalid("network was built for segmentation"));
        };
        let (pooled, levels) = self.embedding(g, cloud)?;
        let logits = head.forward(g, pooled)?;
        Ok(Forward {
            logits,
            penalty: sum_penalties(g, levels.iter().map(|l| l.penalty))?,
            fallbacks: levels.iter().map(|l| l.fallbacks).sum(),
        })
    }

    /// Builds the per-point pass for one cloud of object class `object_class`.
    pub fn segment_graph(&self, g: &mut Graph<'_>, cloud: &PointCloud, object_class: usize) -> Result<Forward> {
        let Head::Segment { stages, head } = &self.head else {
            return Err(Error::invalid("network was built for classification"));
        };
        let n = cloud.len();
        if n != self.config.sa_first.n_ref {
            return Err(Error::shape(
                "segment",
                format!("expected {} points, got {n}", self.config.sa_first.n_ref),
            ));
        }
        if object_class >= self.config.n_classes {
            return Err(Error::invalid(format!(
                "object class {object_class} out of range for {} classes",
                self.config.n_classes
            )));
        }
        let levels = self.levels(g, cloud)?;
        let mut penalties: Vec<Option<Var>> = levels.iter().map(|l| l.penalty).collect();
        let top = levels.len() - 1;
        let mut feat = levels[top].features;
        for (s, stage) in stages.iter().enumerate() {
            let (coarse, fine) = (&levels[top - s], &levels[top - s - 1]);
            let (out, pen) = feature_propagation(g, coarse, feat, fine, fine.features, &stage.align, &stage.mlp)?;
            penalties.push(pen);
            feat = out;
        }
        let mut onehot = vec![0.0; n * self.config.n_classes];
        for r in 0..n {
            onehot[r * self.config.n_classes + object_class] = 1.0;
        }
        let onehot = g.constant(Tensor::matrix(n, self.config.n_classes, onehot)?);
        let input = g.concat_cols(&[feat, onehot])?;
        let sampled = head.forward(g, input)?;
        // Level 0 holds every input point in sampling order; undo that order.
        let mut inverse = vec![0; n];
        for (row, &i) in levels[0].source.iter().enumerate() {
            inverse[i] = row;
        }
        let logits = g.gather_rows(sampled, inverse)?;
        Ok(Forward {
            logits,
            penalty: sum_penalties(g, penalties.into_iter())?,
            fallbacks: levels[0].fallbacks,
        })
    }

    /// Class logits for one cloud.
    pub fn classify(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let out = self.classify_graph(&mut g, cloud)?;
        Ok(g.value(out.logits).data().to_vec())
    }

    /// `n × n_parts` part logits in input point order.
    pub fn segment(&self, cloud: &PointCloud, object_class: usize) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let out = self.segment_graph(&mut g, cloud, object_class)?;
        Ok(g.value(out.logits).clone())
    }

    /// Last-level pooled feature vector.
    pub fn embed(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let (pooled, _) = self.embedding(&mut g, cloud)?;
        Ok(g.value(pooled).data().to_vec())
    }

    /// Floating-point operations of one classification or segmentation pass.
    pub fn flops(&self, cloud: &PointCloud) -> Result<u64> {
        let mut g = Graph::new(&self.params);
        match self.task {
            Task::Classification => self.classify_graph(&mut g, cloud)?,
            Task::Segmentation => self.segment_graph(&mut g, cloud, 0)?,
        };
        Ok(g.flops())
    }

    /// Weights in checkpoint form.
    pub fn save<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_checkpoint(w, self.params.iter())
    }

    /// Replaces the weights with those of a checkpoint written by [`Network::save`].
    pub fn load<R: std::io::Read>(&mut self, r: R) -> Result<()> {
        self.params.load_from(&read_checkpoint(r)?)
    }
}

fn sum_penalties(g: &mut Graph<'_>, penalties: impl Iterator<Item = Option<Var>>) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for p in penalties.flatten() {
        acc = Some(match acc {
            None => p,
            Some(a) => g.add(a, p)?,
        });
    }
    Ok(acc)
}
