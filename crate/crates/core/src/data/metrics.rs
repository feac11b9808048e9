//! Accuracy and part IoU under the train/test rotation protocols.

use rand::Rng;
use serde::Serialize;

use super::Dataset;
use crate::aecnn::{Network, Setting};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{apply_rotation, sample_arbitrary_rotation, sample_y_rotation, PointCloud, RotationMatrix};

/// Anything that scores a cloud against every class.
pub trait Classifier {
    fn logits(&self, cloud: &PointCloud) -> Result<Vec<f64>>;
}

impl<F: Fn(&PointCloud) -> Result<Vec<f64>>> Classifier for F {
    fn logits(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        self(cloud)
    }
}

impl Classifier for Network {
    fn logits(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        self.classify(cloud)
    }
}

/// Anything that scores every point of a cloud against every part.
pub trait Segmenter {
    /// `n × n_parts` scores in input point order.
    fn part_logits(&self, cloud: &PointCloud, object_class: usize) -> Result<Tensor>;
}

impl Segmenter for Network {
    fn part_logits(&self, cloud: &PointCloud, object_class: usize) -> Result<Tensor> {
        self.segment(cloud, object_class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub setting: Option<Setting>,
    pub n_samples: usize,
    /// Fraction of correct samples (classification) or points (segmentation).
    pub accuracy: f64,
    /// `None` for classes without samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Mean over object classes of the mean shape IoU.
    pub miou: Option<f64>,
    pub per_class_iou: Vec<Option<f64>>,
}

/// Rotation applied to a test cloud under `setting`.
pub fn test_rotation<R: Rng + ?Sized>(setting: Setting, rng: &mut R) -> RotationMatrix {
    if setting.test_arbitrary() {
        sample_arbitrary_rotation(rng)
    } else {
        sample_y_rotation(rng)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn evaluate_classification<M: Classifier + ?Sized, R: Rng + ?Sized>(
    model: &M,
    dataset: &Dataset,
    setting: Setting,
    rng: &mut R,
) -> Result<Metrics> {
    evaluate_classification_votes(model, dataset, setting, 1, rng)
}

/// Sums logits over `votes` independent test rotations per sample.
pub fn evaluate_classification_votes<M: Classifier + ?Sized, R: Rng + ?Sized>(
    model: &M,
    dataset: &Dataset,
    setting: Setting,
    votes: usize,
    rng: &mut R,
) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    let n_classes = dataset.n_classes();
    let (mut hit, mut seen) = (vec![0usize; n_classes], vec![0usize; n_classes]);
    for (i, s) in dataset.samples().iter().enumerate() {
        let label = s
            .class_label()
            .ok_or_else(|| Error::invalid(format!("sample {i} has no class label")))?;
        let mut total: Vec<f64> = Vec::new();
        for _ in 0..votes.max(1) {
            let r = test_rotation(setting, rng);
            let logits = model.logits(&apply_rotation(s, &r))?;
            if total.is_empty() {
                total = logits;
            } else {
                total.iter_mut().zip(&logits).for_each(|(t, l)| *t += l);
            }
        }
        seen[label] += 1;
        hit[label] += usize::from(argmax(&total) == label);
    }
    Ok(Metrics {
        setting: Some(setting),
        n_samples: dataset.len(),
        accuracy: hit.iter().sum::<usize>() as f64 / dataset.len() as f64,
        per_class_accuracy: hit.iter().zip(&seen).map(|(&h, &n)| ratio(h, n)).collect(),
        miou: None,
        per_class_iou: Vec::new(),
    })
}

/// Part IoU of per-point predictions against the dataset's part labels.
///
/// A part absent from both prediction and truth has IoU 1.
pub fn evaluate_miou(predictions: &[Vec<usize>], dataset: &Dataset) -> Result<Metrics> {
    if predictions.len() != dataset.len() || dataset.is_empty() {
        return Err(Error::invalid(format!(
            "{} predictions for {} samples",
            predictions.len(),
            dataset.len()
        )));
    }
    let n_classes = dataset.n_classes().max(1);
    let max_label = dataset
        .samples()
        .iter()
        .filter_map(PointCloud::part_labels)
        .chain(predictions.iter().map(Vec::as_slice))
        .flat_map(|l| l.iter().copied())
        .max()
        .unwrap_or(0);
    let n_parts = dataset.n_parts().max(max_label + 1);
    let mut iou_sum = vec![0.0; n_classes];
    let mut shapes = vec![0usize; n_classes];
    let (mut hit, mut seen) = (vec![0usize; n_classes], vec![0usize; n_classes]);
    for (i, (s, pred)) in dataset.samples().iter().zip(predictions).enumerate() {
        let truth = s
            .part_labels()
            .ok_or_else(|| Error::invalid(format!("sample {i} has no part labels")))?;
        if pred.len() != truth.len() {
            return Err(Error::invalid(format!(
                "sample {i}: {} predictions for {} points",
                pred.len(),
                truth.len()
            )));
        }
        let class = s.class_label().unwrap_or(0).min(n_classes - 1);
        let mut inter = vec![0usize; n_parts];
        let mut union = vec![0usize; n_parts];
        for (&p, &t) in pred.iter().zip(truth) {
            if p == t {
                inter[p] += 1;
                union[p] += 1;
            } else {
                union[p] += 1;
                union[t] += 1;
            }
        }
        let shape_iou: f64 = inter
            .iter()
            .zip(&union)
            .map(|(&i, &u)| if u == 0 { 1.0 } else { i as f64 / u as f64 })
            .sum::<f64>()
            / n_parts as f64;
        iou_sum[class] += shape_iou;
        shapes[class] += 1;
        hit[class] += inter.iter().sum::<usize>();
        seen[class] += truth.len();
    }
    let per_class_iou: Vec<Option<f64>> = iou_sum
        .iter()
        .zip(&shapes)
        .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    Ok(Metrics {
        setting: None,
        n_samples: dataset.len(),
        accuracy: hit.iter().sum::<usize>() as f64 / seen.iter().sum::<usize>().max(1) as f64,
        per_class_accuracy: hit.iter().zip(&seen).map(|(&h, &n)| ratio(h, n)).collect(),
        miou: Some(present.iter().sum::<f64>() / present.len() as f64),
        per_class_iou,
    })
}

/// Predicts parts for rotated test clouds and scores them with [`evaluate_miou`].
pub fn evaluate_segmentation<M: Segmenter + ?Sized, R: Rng + ?Sized>(
    model: &M,
    dataset: &Dataset,
    setting: Setting,
    rng: &mut R,
) -> Result<Metrics> {
    let mut preds = Vec::with_capacity(dataset.len());
    for s in dataset.samples() {
        let r = test_rotation(setting, rng);
        let logits = model.part_logits(&apply_rotation(s, &r), s.class_label().unwrap_or(0))?;
        preds.push(logits.argmax_rows());
    }
    let mut m = evaluate_miou(&preds, dataset)?;
    m.setting = Some(setting);
    Ok(m)
}
