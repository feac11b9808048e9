//! Point-cloud files, synthetic datasets and evaluation metrics.

mod binary;
mod metrics;
mod synth;
mod xyz;

pub use binary::{load_dataset_bin, read_dataset, save_dataset_bin, write_dataset, DATASET_MAGIC};
pub use metrics::{
    evaluate_classification, evaluate_classification_votes, evaluate_miou, evaluate_segmentation, test_rotation,
    Classifier, Metrics, Segmenter,
};
pub use synth::{
    synth_classification, synth_segmentation, CLASSIFICATION_CLASSES, JITTER_SIGMA, PART_FRACTION_BOUNDS,
    SEGMENTATION_CLASSES, SEGMENTATION_PARTS,
};
pub use xyz::{load_xyz, parse_xyz, save_xyz, write_xyz};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Labeled clouds with the names of their classes and parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<PointCloud>,
    class_names: Vec<String>,
    part_names: Vec<String>,
    split_tag: String,
}

impl Dataset {
    /// Checks that every label indexes a declared name.
    pub fn new(
        samples: Vec<PointCloud>,
        class_names: Vec<String>,
        part_names: Vec<String>,
        split_tag: impl Into<String>,
    ) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if let Some(c) = s.class_label() {
                if c >= class_names.len() {
                    return Err(Error::invalid(format!(
                        "sample {i}: class {c} out of range for {} classes",
                        class_names.len()
                    )));
                }
            }
            if let Some(labels) = s.part_labels() {
                if let Some(&p) = labels.iter().find(|&&p| p >= part_names.len()) {
                    return Err(Error::invalid(format!(
                        "sample {i}: part {p} out of range for {} parts",
                        part_names.len()
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            class_names,
            part_names,
            split_tag: split_tag.into(),
        })
    }

    pub fn samples(&self) -> &[PointCloud] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn part_names(&self) -> &[String] {
        &self.part_names
    }

    pub fn split_tag(&self) -> &str {
        &self.split_tag
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_parts(&self) -> usize {
        self.part_names.len()
    }

    /// Number of samples per class label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for c in self.samples.iter().filter_map(PointCloud::class_label) {
            counts[c] += 1;
        }
        counts
    }
}
