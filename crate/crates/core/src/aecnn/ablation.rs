//! Grid of alignment variants and first-level grouping choices.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{AlignVariant, Network, NetworkConfig, SearchKind, Setting, Task, TrainConfig, Trainer};
use crate::data::{evaluate_classification, Dataset};
use crate::error::{Error, Result};
use crate::lrf::AnchorStrategy;

/// One configuration of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationCell {
    pub variant: AlignVariant,
    pub search: SearchKind,
    pub anchor: AnchorStrategy,
    pub k: usize,
}

impl AblationCell {
    pub fn apply(&self, base: &NetworkConfig) -> NetworkConfig {
        let mut c = base.clone();
        c.align.variant = self.variant;
        c.sa_first.search = self.search;
        c.sa_first.anchor = self.anchor;
        c.sa_first.k = self.k;
        c
    }

    pub fn label(&self) -> String {
        let search = match self.search {
            SearchKind::Knn => "knn",
            SearchKind::Ball => "ball",
        };
        let anchor = match self.anchor {
            AnchorStrategy::Mean => "Mean",
            AnchorStrategy::MaxProjection => "MaxD",
        };
        format!("{} {search}+{anchor} k={}", self.variant.name(), self.k)
    }
}

/// Axes of the grid; cells are the Cartesian product in this order.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub variants: Vec<AlignVariant>,
    pub searches: Vec<SearchKind>,
    pub anchors: Vec<AnchorStrategy>,
    pub ks: Vec<usize>,
}

impl AblationGrid {
    /// Three variants × two searches × two anchors × four neighborhood sizes.
    pub fn full() -> Self {
        Self {
            variants: vec![
                AlignVariant::PlainEdgeConv,
                AlignVariant::Aeconv1,
                AlignVariant::Aeconv3,
            ],
            searches: vec![SearchKind::Knn, SearchKind::Ball],
            anchors: vec![AnchorStrategy::Mean, AnchorStrategy::MaxProjection],
            ks: vec![10, 16, 32, 48],
        }
    }

    pub fn cells(&self) -> Vec<AblationCell> {
        let mut out = Vec::new();
        for &variant in &self.variants {
            for &search in &self.searches {
                for &anchor in &self.anchors {
                    for &k in &self.ks {
                        out.push(AblationCell {
                            variant,
                            search,
                            anchor,
                            k,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub cell: AblationCell,
    pub parameters: usize,
    /// Floating-point operations of one forward pass.
    pub flops: u64,
    /// Test accuracy per seed.
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Trains and evaluates one cell once per seed.
pub fn run_cell(
    base: &NetworkConfig,
    train_cfg: &TrainConfig,
    cell: AblationCell,
    seeds: &[u64],
    train: &Dataset,
    test: &Dataset,
    setting: Setting,
) -> Result<CellResult> {
    if seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    let cfg = cell.apply(base);
    let probe = test.samples().first().ok_or_else(|| Error::invalid("empty test set"))?;
    let mut accuracies = Vec::with_capacity(seeds.len());
    let mut parameters = 0;
    let mut flops = 0;
    for &seed in seeds {
        let net = Network::new(&cfg, Task::Classification, seed)?;
        parameters = net.num_parameters();
        flops = net.flops(probe)?;
        let mut tc = train_cfg.clone();
        tc.seed = seed;
        tc.setting = setting;
        let mut trainer = Trainer::new(net, tc);
        trainer.run(train.samples(), |_| {})?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
        accuracies.push(evaluate_classification(&trainer.net, test, setting, &mut rng)?.accuracy);
    }
    let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    Ok(CellResult {
        cell,
        parameters,
        flops,
        accuracies,
        mean_accuracy,
    })
}

/// Markdown tables: accuracy by grouping (rows) and `k` (columns) for each
/// variant, then parameter and operation counts.
pub fn format_table(results: &[CellResult]) -> String {
    let mut out = String::new();
    let mut variants: Vec<AlignVariant> = Vec::new();
    let mut ks: Vec<usize> = Vec::new();
    for r in results {
        if !variants.contains(&r.cell.variant) {
            variants.push(r.cell.variant);
        }
        if !ks.contains(&r.cell.k) {
            ks.push(r.cell.k);
        }
    }
    ks.sort_unstable();
    for v in &variants {
        let _ = writeln!(out, "### {}\n", v.name());
        let _ = write!(out, "| grouping |");
        for k in &ks {
            let _ = write!(out, " k={k} |");
        }
        let _ = write!(out, "\n|---|");
        for _ in &ks {
            let _ = write!(out, "---|");
        }
        out.push('\n');
        let mut rows: Vec<(SearchKind, AnchorStrategy)> = Vec::new();
        for r in results.iter().filter(|r| r.cell.variant == *v) {
            if !rows.contains(&(r.cell.search, r.cell.anchor)) {
                rows.push((r.cell.search, r.cell.anchor));
            }
        }
        for (search, anchor) in rows {
            let name = AblationCell {
                variant: *v,
                search,
                anchor,
                k: 0,
            }
            .label();
            let grouping = name.split(' ').nth(1).unwrap_or("").to_string();
            let _ = write!(out, "| {grouping} |");
            for k in &ks {
                match results.iter().find(|r| {
                    r.cell.variant == *v && r.cell.search == search && r.cell.anchor == anchor && r.cell.k == *k
                }) {
                    Some(r) => {
                        let _ = write!(out, " {:.1} |", 100.0 * r.mean_accuracy);
                    }
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    let _ = writeln!(out, "| variant | parameters | FLOPs |\n|---|---|---|");
    for v in &variants {
        if let Some(r) = results.iter().filter(|r| r.cell.variant == *v).max_by_key(|r| r.cell.k) {
            let _ = writeln!(out, "| {} | {} | {} |", v.name(), r.parameters, r.flops);
        }
    }
    out
}
