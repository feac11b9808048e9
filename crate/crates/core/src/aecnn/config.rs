//! Network and training configuration.
//!
//! Stored as TOML: top-level `key = value` pairs followed by bracketed
//! sections. See `configs/` at the repository root for complete files.

use serde::{Deserialize, Serialize};

use crate::autodiff::LrSchedule;
use crate::error::{Error, Result};
use crate::lrf::AnchorStrategy;
use crate::neighbors::Search;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKind {
    Knn,
    Ball,
}

/// Input representation of the first block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coords {
    /// Neighbor coordinates in the reference point's local frame.
    Lrf,
    /// Raw global coordinates with identity frames (not rotation invariant).
    Absolute,
}

/// How a neighbor feature is brought into the reference point's frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignVariant {
    /// No alignment: plain edge convolution without the translation term.
    PlainEdgeConv,
    /// `x̂ = φ(R, T) · x` with `φ` predicting an `F×F` matrix.
    Aeconv1,
    /// `x̂ = φ(e_i, e_j, T, x)` from the raw frame bases.
    Aeconv2,
    /// `x̂ = φ(R, T, x)`.
    Aeconv3,
}

impl AlignVariant {
    pub const ALL: [AlignVariant; 4] = [
        AlignVariant::PlainEdgeConv,
        AlignVariant::Aeconv1,
        AlignVariant::Aeconv2,
        AlignVariant::Aeconv3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlignVariant::PlainEdgeConv => "EdgeConv",
            AlignVariant::Aeconv1 => "AEConv1",
            AlignVariant::Aeconv2 => "AEConv2",
            AlignVariant::Aeconv3 => "AEConv3",
        }
    }
}

impl std::str::FromStr for AlignVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "edgeconv" | "plain" | "plainedgeconv" => Ok(AlignVariant::PlainEdgeConv),
            "aeconv1" => Ok(AlignVariant::Aeconv1),
            "aeconv2" => Ok(AlignVariant::Aeconv2),
            "aeconv3" => Ok(AlignVariant::Aeconv3),
            _ => Err(Error::invalid(format!(
                "unknown variant {s:?} (expected edgeconv, aeconv1, aeconv2 or aeconv3)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaFirstConfig {
    pub n_ref: usize,
    pub k: usize,
    pub anchor: AnchorStrategy,
    pub search: SearchKind,
    /// Ball radius, used only with `search = "ball"`.
    pub radius: f64,
    pub coords: Coords,
    /// Output widths of the shared point MLP (input width 3 is implied).
    pub widths: Vec<usize>,
}

impl SaFirstConfig {
    pub fn search(&self) -> Search {
        match self.search {
            SearchKind::Knn => Search::Knn,
            SearchKind::Ball => Search::Ball { radius: self.radius },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaNextConfig {
    pub k: usize,
    /// Output widths of the edge MLP `q`.
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub variant: AlignVariant,
    /// Hidden width of `φ`; 0 means "same as the feature width".
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    /// Output widths of each propagation MLP, coarsest stage first.
    pub fp: Vec<Vec<usize>>,
    /// Hidden widths of the per-point head.
    pub head: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_points: usize,
    pub n_classes: usize,
    pub n_parts: usize,
    /// Per-set feature standardization inside hidden MLP layers.
    pub norm: bool,
    /// Hidden widths of the classification head.
    pub head: Vec<usize>,
    pub sa_first: SaFirstConfig,
    pub sa_next: Vec<SaNextConfig>,
    pub align: AlignConfig,
    pub segmentation: SegmentationConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl NetworkConfig {
    /// 256 points, 128 → 32 → 8 references, k = 48 then 16.
    pub fn desk() -> Self {
        Self {
            n_points: 256,
            n_classes: 4,
            n_parts: 2,
            norm: false,
            head: vec![256],
            sa_first: SaFirstConfig {
                n_ref: 128,
                k: 48,
                anchor: AnchorStrategy::Mean,
                search: SearchKind::Knn,
                radius: 0.2,
                coords: Coords::Lrf,
                widths: vec![64, 128],
            },
            sa_next: vec![
                SaNextConfig {
                    k: 16,
                    widths: vec![128, 256],
                },
                SaNextConfig {
                    k: 16,
                    widths: vec![256, 512],
                },
            ],
            align: AlignConfig {
                variant: AlignVariant::Aeconv3,
                hidden: 0,
            },
            segmentation: SegmentationConfig {
                fp: vec![vec![256], vec![128]],
                head: vec![128],
            },
        }
    }

    /// 1024 points with 512 first-level references.
    pub fn full() -> Self {
        let mut c = Self::desk();
        c.n_points = 1024;
        c.sa_first.n_ref = 512;
        c.n_classes = 40;
        c
    }

    /// Narrow widths that train in minutes on one CPU core.
    pub fn compact() -> Self {
        let mut c = Self::desk();
        c.sa_first.n_ref = 64;
        c.sa_first.widths = vec![32, 64];
        c.sa_next = vec![
            SaNextConfig {
                k: 16,
                widths: vec![64, 64],
            },
            SaNextConfig {
                k: 16,
                widths: vec![128, 128],
            },
        ];
        c.head = vec![64];
        c.norm = true;
        c.segmentation = SegmentationConfig {
            fp: vec![vec![64], vec![64]],
            head: vec![64],
        };
        c
    }

    /// The compact widths on 256-point clouds with every point a first-level
    /// reference, as per-point prediction requires.
    pub fn compact_segmentation() -> Self {
        let mut c = Self::compact();
        c.sa_first.n_ref = c.n_points;
        c.sa_first.k = 32;
        c.n_classes = 2;
        c.n_parts = 2;
        c
    }

    /// Point counts entering each block: `[n_ref, n_ref/4, n_ref/16, …]`.
    pub fn level_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.sa_first.n_ref];
        for _ in &self.sa_next {
            sizes.push(sizes.last().expect("non-empty") / 4);
        }
        sizes
    }

    /// Feature width leaving each level.
    pub fn level_widths(&self) -> Vec<usize> {
        let mut w = vec![*self.sa_first.widths.last().unwrap_or(&0)];
        w.extend(self.sa_next.iter().map(|b| *b.widths.last().unwrap_or(&0)));
        w
    }

    /// Collects every structural problem instead of stopping at the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.n_points == 0 {
            p.push("n_points must be positive".into());
        }
        if self.n_classes == 0 {
            p.push("n_classes must be positive".into());
        }
        if self.n_parts == 0 {
            p.push("n_parts must be positive".into());
        }
        let s = &self.sa_first;
        if s.n_ref == 0 || s.n_ref > self.n_points {
            p.push(format!("sa_first.n_ref = {} must be in 1..={}", s.n_ref, self.n_points));
        }
        if s.k == 0 {
            p.push("sa_first.k must be positive".into());
        }
        if s.search == SearchKind::Ball && !(s.radius > 0.0 && s.radius.is_finite()) {
            p.push(format!("sa_first.radius = {} must be positive", s.radius));
        }
        check_widths(&mut p, "sa_first.widths", &s.widths);
        let mut incoming = s.n_ref;
        for (i, b) in self.sa_next.iter().enumerate() {
            if incoming < 4 {
                p.push(format!(
                    "sa_next[{i}] receives {incoming} points; at least 4 are needed"
                ));
            }
            incoming /= 4;
            if b.k == 0 {
                p.push(format!("sa_next[{i}].k must be positive"));
            }
            check_widths(&mut p, &format!("sa_next[{i}].widths"), &b.widths);
        }
        for (i, h) in self.head.iter().enumerate() {
            if *h == 0 {
                p.push(format!("head[{i}] must be positive"));
            }
        }
        p
    }

    /// Extra requirements of the per-point network.
    pub fn segmentation_problems(&self) -> Vec<String> {
        let mut p = self.problems();
        if self.sa_first.n_ref != self.n_points {
            p.push(format!(
                "segmentation needs sa_first.n_ref = n_points ({}), got {}",
                self.n_points, self.sa_first.n_ref
            ));
        }
        if self.segmentation.fp.len() != self.sa_next.len() {
            p.push(format!(
                "segmentation.fp has {} stages for {} sa_next blocks",
                self.segmentation.fp.len(),
                self.sa_next.len()
            ));
        }
        for (i, w) in self.segmentation.fp.iter().enumerate() {
            check_widths(&mut p, &format!("segmentation.fp[{i}]"), w);
        }
        if self.segmentation.head.contains(&0) {
            p.push("segmentation.head widths must be positive".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        report(self.problems())
    }

    pub fn validate_segmentation(&self) -> Result<()> {
        report(self.segmentation_problems())
    }
}

fn check_widths(p: &mut Vec<String>, name: &str, w: &[usize]) {
    if w.is_empty() {
        p.push(format!("{name} must list at least one width"));
    } else if w.contains(&0) {
        p.push(format!("{name} contains a zero width"));
    }
}

fn report(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems.join("; ")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Segmentation,
}

/// Train/test rotation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    /// Vertical-axis rotations for training and testing.
    #[serde(rename = "Y/Y", alias = "YY", alias = "yy")]
    YY,
    /// Vertical-axis rotations for training, arbitrary for testing.
    #[serde(rename = "Y/AR", alias = "YAR", alias = "yar")]
    YAR,
    /// Arbitrary rotations for training and testing.
    #[serde(rename = "AR/AR", alias = "ARAR", alias = "arar")]
    ARAR,
}

impl Setting {
    pub fn tag(self) -> &'static str {
        match self {
            Setting::YY => "Y/Y",
            Setting::YAR => "Y/AR",
            Setting::ARAR => "AR/AR",
        }
    }

    pub fn train_arbitrary(self) -> bool {
        self == Setting::ARAR
    }

    pub fn test_arbitrary(self) -> bool {
        self != Setting::YY
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('/', "").as_str() {
            "YY" => Ok(Setting::YY),
            "YAR" => Ok(Setting::YAR),
            "ARAR" => Ok(Setting::ARAR),
            _ => Err(Error::invalid(format!(
                "unknown setting {s:?} (expected YY, YAR or ARAR)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub setting: Setting,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_factor: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    /// Random scale and translation of training clouds.
    pub augment: bool,
    /// Weight of the orthogonality penalty (AEConv1 only).
    pub reg_weight: f64,
    /// Synthetic dataset sizes when no dataset file is given.
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Classification,
            setting: Setting::ARAR,
            epochs: 60,
            batch_size: 32,
            lr: 1e-3,
            lr_factor: 0.2,
            lr_step: 24,
            augment: true,
            reg_weight: 1e-3,
            train_per_class: 200,
            test_per_class: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            initial: self.lr,
            factor: self.lr_factor,
            step_epochs: self.lr_step,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.batch_size == 0 {
            p.push("train.batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            p.push("train.lr must be positive".into());
        }
        if self.lr_step == 0 {
            p.push("train.lr_step must be positive".into());
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            p.push("train.train_per_class and train.test_per_class must be positive".into());
        }
        p
    }
}

/// Everything a training run needs, as stored in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let reference = toml::Value::try_from(RunConfig::default()).expect("default config serializes");
        let mut unknown = Vec::new();
        unknown_keys(&value, &reference, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = match self.train.task {
            Task::Classification => self.network.problems(),
            Task::Segmentation => self.network.segmentation_problems(),
        };
        p.extend(self.train.problems());
        p
    }
}

fn unknown_keys(v: &toml::Value, reference: &toml::Value, path: &str, out: &mut Vec<String>) {
    match (v, reference) {
        (toml::Value::Table(t), toml::Value::Table(r)) => {
            for (k, sub) in t {
                let p = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match r.get(k) {
                    Some(rs) => unknown_keys(sub, rs, &p, out),
                    None => out.push(p),
                }
            }
        }
        (toml::Value::Array(a), toml::Value::Array(r)) => {
            if let Some(first) = r.first() {
                for item in a {
                    unknown_keys(item, first, path, out);
                }
            }
        }
        _ => {}
    }
}
