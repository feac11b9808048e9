//! Empirical check that predictions ignore global rotations.

use rand::Rng;
use serde::Serialize;

use super::{Network, Task};
use crate::autodiff::Tensor;
use crate::error::Result;
use crate::geometry::{apply_rotation, sample_arbitrary_rotation, PointCloud};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub clouds: usize,
    pub rotations: usize,
    /// Largest max-abs logit difference over all clouds and rotations.
    pub max_deviation: f64,
    /// Largest deviation seen for each cloud.
    pub per_cloud: Vec<f64>,
    /// Fraction of rotated predictions whose argmax matches the unrotated one.
    pub agreement: f64,
}

impl AuditReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_deviation <= tolerance && self.agreement == 1.0
    }

    /// Fraction of clouds whose deviation exceeds `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        if self.per_cloud.is_empty() {
            return 0.0;
        }
        self.per_cloud.iter().filter(|&&d| d > threshold).count() as f64 / self.per_cloud.len() as f64
    }
}

fn logits(net: &Network, cloud: &PointCloud) -> Result<Tensor> {
    match net.task() {
        Task::Classification => Ok(Tensor::vector(net.classify(cloud)?)),
        Task::Segmentation => net.segment(cloud, cloud.class_label().unwrap_or(0)),
    }
}

fn argmax_rows(t: &Tensor) -> Vec<usize> {
    if t.rank() == 1 {
        Tensor::matrix(1, t.len(), t.data().to_vec())
            .expect("row")
            .argmax_rows()
    } else {
        t.argmax_rows()
    }
}

/// Compares predictions for each cloud with those for `rotations` random
/// arbitrary rotations of it.
pub fn invariance_audit<R: Rng + ?Sized>(
    net: &Network,
    clouds: &[PointCloud],
    rotations: usize,
    rng: &mut R,
) -> Result<AuditReport> {
    if rotations == 0 || clouds.is_empty() {
        log::warn!("invariance audit with no rotations or clouds passes vacuously");
    }
    let mut per_cloud = Vec::with_capacity(clouds.len());
    let (mut agree, mut total) = (0usize, 0usize);
    for cloud in clouds {
        let base = logits(net, cloud)?;
        let base_arg = argmax_rows(&base);
        let mut worst: f64 = 0.0;
        for _ in 0..rotations {
            let r = sample_arbitrary_rotation(rng);
            let out = logits(net, &apply_rotation(cloud, &r))?;
            worst = worst.max(out.max_abs_diff(&base));
            let arg = argmax_rows(&out);
            agree += arg.iter().zip(&base_arg).filter(|(a, b)| a == b).count();
            total += arg.len();
        }
        per_cloud.push(worst);
    }
    Ok(AuditReport {
        clouds: clouds.len(),
        rotations,
        max_deviation: per_cloud.iter().copied().fold(0.0, f64::max),
        per_cloud,
        agreement: if total == 0 { 1.0 } else { agree as f64 / total as f64 },
    })
}
