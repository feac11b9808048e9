//! Mini-batch training with Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Task, TrainConfig};
use super::Network;
use crate::autodiff::{adam_step, read_checkpoint, write_checkpoint, AdamState, Graph, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{
    apply_rotation, augment_scale_translate, recenter, sample_arbitrary_rotation, sample_y_rotation, PointCloud,
};

/// Augments one training cloud: optional scale and translation, a rotation
/// (arbitrary or about the vertical axis), then re-centering without rescaling.
pub fn prepare_sample<R: Rng + ?Sized>(
    cloud: &PointCloud,
    arbitrary: bool,
    augment: bool,
    rng: &mut R,
) -> Result<PointCloud> {
    let c = if augment {
        augment_scale_translate(cloud, rng)
    } else {
        cloud.clone()
    };
    let r = if arbitrary {
        sample_arbitrary_rotation(rng)
    } else {
        sample_y_rotation(rng)
    };
    recenter(&apply_rotation(&c, &r))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over samples (penalty included).
    pub loss: f64,
    /// Fraction of correct training predictions (points, for segmentation).
    pub accuracy: f64,
    pub fallbacks: usize,
}

/// One pass over `samples` in shuffled mini-batches.
pub fn train_epoch(
    net: &mut Network,
    adam: &mut AdamState,
    samples: &[PointCloud],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let lr = cfg.schedule().rate(epoch);
    let arbitrary = cfg.setting.train_arbitrary();
    let (mut loss_sum, mut correct, mut total, mut fallbacks) = (0.0, 0usize, 0usize, 0usize);

    for batch in order.chunks(cfg.batch_size.max(1)) {
        let mut grads = net.params().zero_grads();
        for &i in batch {
            let cloud = prepare_sample(&samples[i], arbitrary, cfg.augment, &mut rng)?;
            let mut g = Graph::new(net.params());
            let (out, labels) = match net.task() {
                Task::Classification => {
                    let label = cloud
                        .class_label()
                        .ok_or_else(|| Error::invalid(format!("training sample {i} has no class label")))?;
                    (net.classify_graph(&mut g, &cloud)?, vec![label])
                }
                Task::Segmentation => {
                    let class = cloud.class_label().unwrap_or(0);
                    let labels = cloud
                        .part_labels()
                        .ok_or_else(|| Error::invalid(format!("training sample {i} has no part labels")))?
                        .to_vec();
                    (net.segment_graph(&mut g, &cloud, class)?, labels)
                }
            };
            let pred = g.value(out.logits).argmax_rows();
            correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
            total += labels.len();
            fallbacks += out.fallbacks;
            let mut loss = g.cross_entropy(out.logits, &labels)?;
            if let Some(p) = out.penalty {
                let p = g.scale(p, cfg.reg_weight)?;
                loss = g.add(loss, p)?;
            }
            loss_sum += g.value(loss).item();
            g.backward(loss)?.accumulate_into(&mut grads);
        }
        let inv = 1.0 / batch.len() as f64;
        grads.iter_mut().flatten().for_each(|v| *v *= inv);
        adam_step(net.params_mut(), &grads, adam, lr)?;
    }
    Ok(EpochStats {
        epoch,
        lr,
        loss: loss_sum / samples.len() as f64,
        accuracy: correct as f64 / total.max(1) as f64,
        fallbacks,
    })
}

/// Network, optimizer state and progress of a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: Network,
    pub adam: AdamState,
    pub config: TrainConfig,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(net: Network, config: TrainConfig) -> Self {
        let adam = AdamState::new(net.params());
        Self {
            net,
            adam,
            config,
            epoch: 0,
        }
    }

    /// Trains until `config.epochs` epochs are complete.
    pub fn run(&mut self, samples: &[PointCloud], mut on_epoch: impl FnMut(&EpochStats)) -> Result<()> {
        while self.epoch < self.config.epochs {
            let stats = self.step(samples)?;
            on_epoch(&stats);
        }
        Ok(())
    }

    /// Runs a single epoch.
    pub fn step(&mut self, samples: &[PointCloud]) -> Result<EpochStats> {
        let stats = train_epoch(&mut self.net, &mut self.adam, samples, &self.config, self.epoch)?;
        self.epoch += 1;
        Ok(stats)
    }

    /// Weights, Adam moments and the epoch counter in checkpoint form.
    pub fn save<W: std::io::Write>(&self, w: W) -> Result<()> {
        let params = self.net.params();
        let mut extra: Vec<(String, Tensor)> = Vec::new();
        for (i, (name, _)) in params.iter().enumerate() {
            extra.push((format!("adam.m.{name}"), Tensor::vector(self.adam.m[i].clone())));
            extra.push((format!("adam.v.{name}"), Tensor::vector(self.adam.v[i].clone())));
        }
        extra.push(("adam.step".into(), Tensor::scalar(self.adam.step as f64)));
        extra.push(("train.epoch".into(), Tensor::scalar(self.epoch as f64)));
        write_checkpoint(w, params.iter().chain(extra.iter().map(|(n, t)| (n.as_str(), t))))
    }

    /// Restores weights and, when present, optimizer state and epoch.
    pub fn load<R: std::io::Read>(&mut self, r: R) -> Result<()> {
        let entries = read_checkpoint(r)?;
        self.net.params_mut().load_from(&entries)?;
        let find = |name: &str| entries.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let names: Vec<String> = self.net.params().iter().map(|(n, _)| n.to_string()).collect();
        let mut adam = AdamState::new(self.net.params());
        let mut complete = true;
        for (i, name) in names.iter().enumerate() {
            match (find(&format!("adam.m.{name}")), find(&format!("adam.v.{name}"))) {
                (Some(m), Some(v)) if m.len() == adam.m[i].len() && v.len() == adam.v[i].len() => {
                    adam.m[i] = m.data().to_vec();
                    adam.v[i] = v.data().to_vec();
                }
                _ => complete = false,
            }
        }
        if complete {
            if let (Some(step), Some(epoch)) = (find("adam.step"), find("train.epoch")) {
                adam.step = step.item() as u64;
                self.adam = adam;
                self.epoch = epoch.item() as usize;
            }
        }
        Ok(())
    }
}
