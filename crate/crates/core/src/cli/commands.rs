use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::{
    AblateArgs, AnchorArg, AuditArgs, ConfigArgs, DatasetKind, EvalArgs, LrfDumpArgs, Preset, SynthArgs, TrainArgs,
};
use crate::aecnn::{
    format_table, invariance_audit, run_cell, AblationGrid, EpochStats, Network, NetworkConfig, RunConfig, Task,
    Trainer,
};
use crate::autodiff::LrSchedule;
use crate::data::{
    evaluate_classification_votes, evaluate_segmentation, load_dataset_bin, load_xyz, save_dataset_bin, save_xyz,
    synth_classification, synth_segmentation, Dataset, Metrics,
};
use crate::error::{Error, Result};
use crate::geometry::centroid;
use crate::lrf::{compute_lrf_with_fallback, rir, AnchorStrategy};
use crate::neighbors::{farthest_point_sampling, SpatialIndex};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const RECORD_FILE: &str = "record.jsonl";

/// Final line of a training record.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub schema: &'static str,
    pub config: RunConfig,
    pub seed: u64,
    pub parameters: usize,
    pub epochs: Vec<EpochStats>,
    pub metrics: Metrics,
    pub wall_clock_s: f64,
}

pub fn preset(p: Preset) -> RunConfig {
    let mut cfg = RunConfig::default();
    match p {
        Preset::Desk => {}
        Preset::Compact => cfg.network = NetworkConfig::compact(),
        Preset::Full => {
            cfg.network = NetworkConfig::full();
            cfg.train.epochs = 250;
            cfg.train.lr_step = LrSchedule::FULL.step_epochs;
        }
        Preset::Segmentation => {
            cfg.network = NetworkConfig::compact_segmentation();
            cfg.train.task = Task::Segmentation;
            cfg.train.train_per_class = 100;
            cfg.train.test_per_class = 50;
        }
    }
    cfg
}

/// Prints one JSON object per line to stdout and optionally appends it to `log`.
fn emit<T: Serialize>(value: &T, log: Option<&mut File>) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::invalid(e.to_string()))?;
    writeln!(std::io::stdout().lock(), "{line}")?;
    if let Some(f) = log {
        writeln!(f, "{line}")?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>, fallback: RunConfig) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(fallback),
    }
}

/// Prints the validation report and fails when the config has problems.
fn validate(cfg: &RunConfig) -> Result<()> {
    let problems = cfg.problems();
    if problems.is_empty() {
        return Ok(());
    }
    emit(&json!({"schema": "aecnn.validation/1", "problems": problems}), None)?;
    Err(Error::Config(problems.join("; ")))
}

/// Synthetic train and test sets drawn from independent streams of `seed`.
fn synthetic(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let n = cfg.network.n_points;
    let t = &cfg.train;
    let mut train_rng = ChaCha8Rng::seed_from_u64(t.seed);
    let mut test_rng = ChaCha8Rng::seed_from_u64(t.seed);
    test_rng.set_stream(1);
    match t.task {
        Task::Classification => Ok((
            synth_classification(t.train_per_class, n, &mut train_rng)?,
            synth_classification(t.test_per_class, n, &mut test_rng)?,
        )),
        Task::Segmentation => Ok((
            synth_segmentation(t.train_per_class, n, &mut train_rng)?,
            synth_segmentation(t.test_per_class, n, &mut test_rng)?,
        )),
    }
}

fn check_dataset(cfg: &RunConfig, ds: &Dataset, what: &str) -> Result<()> {
    let net = &cfg.network;
    let mut problems = Vec::new();
    let (classes, limit) = match cfg.train.task {
        Task::Classification => (ds.n_classes(), net.n_classes),
        Task::Segmentation => (ds.n_parts(), net.n_parts),
    };
    if classes > limit {
        problems.push(format!("{what} has {classes} labels but the network predicts {limit}"));
    }
    if cfg.train.task == Task::Segmentation && ds.n_classes() > net.n_classes {
        problems.push(format!(
            "{what} has {} object classes, config has {}",
            ds.n_classes(),
            net.n_classes
        ));
    }
    for (i, s) in ds.samples().iter().enumerate() {
        let ok = match cfg.train.task {
            Task::Classification => s.len() >= net.sa_first.n_ref,
            Task::Segmentation => s.len() == net.n_points,
        };
        if !ok {
            problems.push(format!("{what} sample {i} has {} points", s.len()));
            break;
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems.join("; ")))
    }
}

fn evaluate(net: &Network, cfg: &RunConfig, test: &Dataset, votes: usize, seed: u64) -> Result<Metrics> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match net.task() {
        Task::Classification => evaluate_classification_votes(net, test, cfg.train.setting, votes, &mut rng),
        Task::Segmentation => evaluate_segmentation(net, test, cfg.train.setting, &mut rng),
    }
}

fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunRecord> {
    let started = Instant::now();
    let ckpt_path = args.out.join(CHECKPOINT_FILE);
    let saved_config = args.out.join(CONFIG_FILE);
    let resuming = args.resume && ckpt_path.exists();
    let mut cfg = if resuming && saved_config.exists() {
        RunConfig::load(&saved_config)?
    } else {
        load_config(args.config.as_deref(), RunConfig::default())?
    };
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(s) = args.setting {
        cfg.train.setting = s;
    }
    if let Some(v) = args.variant {
        cfg.network.align.variant = v;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
        cfg.train.lr_step = LrSchedule::compressed(e).step_epochs;
    }
    validate(&cfg)?;

    let (train, test) = match (&args.dataset, &args.test_dataset) {
        (Some(tr), Some(te)) => (load_dataset_bin(tr)?, load_dataset_bin(te)?),
        (None, None) => synthetic(&cfg)?,
        _ => return Err(Error::invalid("--dataset and --test-dataset must be given together")),
    };
    check_dataset(&cfg, &train, "training set")?;
    check_dataset(&cfg, &test, "test set")?;

    fs::create_dir_all(&args.out)?;
    fs::write(&saved_config, cfg.to_toml())?;
    let net = Network::new(&cfg.network, cfg.train.task, cfg.train.seed)?;
    let mut trainer = Trainer::new(net, cfg.train.clone());
    if resuming {
        trainer.load(BufReader::new(File::open(&ckpt_path)?))?;
        log::info!("resuming after epoch {}", trainer.epoch);
    }
    let mut record = OpenOptions::new()
        .create(true)
        .append(true)
        .open(args.out.join(RECORD_FILE))?;
    let mut epochs = Vec::new();
    while trainer.epoch < cfg.train.epochs {
        let stats = trainer.step(train.samples())?;
        let mut line = serde_json::to_value(&stats).map_err(|e| Error::invalid(e.to_string()))?;
        line["schema"] = json!("aecnn.epoch/1");
        emit(&line, Some(&mut record))?;
        write_atomic(&ckpt_path, |w| trainer.save(w))?;
        epochs.push(stats);
    }
    if !ckpt_path.exists() {
        write_atomic(&ckpt_path, |w| trainer.save(w))?;
    }
    let metrics = evaluate(&trainer.net, &cfg, &test, 1, cfg.train.seed)?;
    let run = RunRecord {
        schema: "aecnn.run/1",
        parameters: trainer.net.num_parameters(),
        seed: cfg.train.seed,
        config: cfg,
        epochs,
        metrics,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    emit(&run, Some(&mut record))?;
    Ok(run)
}

fn config_beside(checkpoint: &Path, explicit: Option<&Path>) -> Result<RunConfig> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE),
    };
    if !path.exists() {
        return Err(Error::invalid(format!(
            "config {} not found (pass --config)",
            path.display()
        )));
    }
    RunConfig::load(&path)
}

fn load_network(checkpoint: &Path, cfg: &RunConfig) -> Result<Network> {
    if !checkpoint.exists() {
        return Err(Error::invalid(format!("checkpoint {} not found", checkpoint.display())));
    }
    let mut net = Network::new(&cfg.network, cfg.train.task, cfg.train.seed)?;
    net.load(BufReader::new(File::open(checkpoint)?))?;
    Ok(net)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Metrics> {
    let mut cfg = config_beside(&args.checkpoint, args.config.as_deref())?;
    if let Some(s) = args.setting {
        cfg.train.setting = s;
    }
    validate(&cfg)?;
    let net = load_network(&args.checkpoint, &cfg)?;
    let test = match &args.dataset {
        Some(p) => load_dataset_bin(p)?,
        None => synthetic(&cfg)?.1,
    };
    check_dataset(&cfg, &test, "test set")?;
    let metrics = evaluate(&net, &cfg, &test, args.votes, args.seed)?;
    let mut line = serde_json::to_value(&metrics).map_err(|e| Error::invalid(e.to_string()))?;
    line["schema"] = json!("aecnn.metrics/1");
    line["votes"] = json!(args.votes);
    emit(&line, None)?;
    Ok(metrics)
}

/// Returns whether the audit passed.
pub fn cmd_audit(args: &AuditArgs) -> Result<bool> {
    let (cfg, net) = match &args.checkpoint {
        Some(ckpt) => {
            let cfg = config_beside(ckpt, args.config.as_deref())?;
            validate(&cfg)?;
            let net = load_network(ckpt, &cfg)?;
            (cfg, net)
        }
        None => {
            let cfg = load_config(args.config.as_deref(), RunConfig::default())?;
            validate(&cfg)?;
            let net = Network::new(&cfg.network, cfg.train.task, args.seed)?;
            (cfg, net)
        }
    };
    let clouds: Vec<_> = match &args.dataset {
        Some(p) => load_dataset_bin(p)?
            .samples()
            .iter()
            .take(args.clouds)
            .cloned()
            .collect(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let n = cfg.network.n_points;
            let ds = match cfg.train.task {
                Task::Classification => synth_classification(args.clouds.div_ceil(4), n, &mut rng)?,
                Task::Segmentation => synth_segmentation(args.clouds.div_ceil(2), n, &mut rng)?,
            };
            ds.samples().iter().take(args.clouds).cloned().collect()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    rng.set_stream(2);
    let report = invariance_audit(&net, &clouds, args.rotations, &mut rng)?;
    let passed = report.passes(args.tolerance);
    emit(
        &json!({
            "schema": "aecnn.audit/1",
            "variant": cfg.network.align.variant.name(),
            "clouds": report.clouds,
            "rotations": report.rotations,
            "max_deviation": report.max_deviation,
            "agreement": report.agreement,
            "tolerance": args.tolerance,
            "passed": passed,
        }),
        None,
    )?;
    Ok(passed)
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref(), preset(Preset::Compact))?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
        cfg.train.lr_step = LrSchedule::compressed(e).step_epochs;
    }
    cfg.train.task = Task::Classification;
    validate(&cfg)?;
    let mut grid = AblationGrid::full();
    if !args.variants.is_empty() {
        grid.variants = args.variants.clone();
    }
    if !args.ks.is_empty() {
        grid.ks = args.ks.clone();
    }
    let (train, test) = synthetic(&cfg)?;
    fs::create_dir_all(&args.out)?;
    let mut log = File::create(args.out.join("ablation.jsonl"))?;
    let seeds: Vec<u64> = (0..args.seeds).map(|s| cfg.train.seed + s).collect();
    let mut results = Vec::new();
    for cell in grid.cells() {
        let r = run_cell(&cfg.network, &cfg.train, cell, &seeds, &train, &test, args.setting)?;
        let mut line = serde_json::to_value(&r).map_err(|e| Error::invalid(e.to_string()))?;
        line["schema"] = json!("aecnn.ablation/1");
        line["label"] = json!(cell.label());
        line["setting"] = json!(args.setting);
        emit(&line, Some(&mut log))?;
        results.push(r);
    }
    let table = format_table(&results);
    fs::write(args.out.join("ablation.md"), &table)?;
    eprintln!("{table}");
    Ok(())
}

pub fn cmd_lrf_dump(args: &LrfDumpArgs) -> Result<()> {
    if args.k == 0 {
        return Err(Error::invalid("--k must be positive"));
    }
    let cloud = load_xyz(&args.cloud)?;
    let pts = cloud.points();
    let o = centroid(&cloud)?;
    let index = SpatialIndex::build(pts)?;
    let refs: Vec<usize> = match args.n_ref {
        Some(n) => farthest_point_sampling(pts, n)?,
        None => (0..pts.len()).collect(),
    };
    let anchor = match args.anchor {
        AnchorArg::Mean => AnchorStrategy::Mean,
        AnchorArg::MaxProjection => AnchorStrategy::MaxProjection,
    };
    for &i in &refs {
        let nbrs = index.knn(pts[i], args.k);
        let nb_pts: Vec<_> = nbrs.iter().map(|&j| pts[j]).collect();
        let (frame, fb) = compute_lrf_with_fallback(pts[i], &nb_pts, o, anchor)?;
        let rirs: Vec<[f64; 3]> = nb_pts.iter().map(|&p| rir(p, &frame).to_array()).collect();
        emit(
            &json!({
                "schema": "aecnn.lrf/1",
                "index": i,
                "origin": frame.origin.to_array(),
                "basis": [frame.x().to_array(), frame.y().to_array(), frame.z().to_array()],
                "fallback": fb.any(),
                "neighbors": nbrs,
                "rir": rirs,
            }),
            None,
        )?;
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let ds = match args.kind {
        DatasetKind::Classification => synth_classification(args.per_class, args.points, &mut rng)?,
        DatasetKind::Segmentation => synth_segmentation(args.per_class, args.points, &mut rng)?,
    };
    save_dataset_bin(&args.out, &ds)?;
    let mut files: Vec<PathBuf> = Vec::new();
    if let Some(dir) = &args.xyz_dir {
        fs::create_dir_all(dir)?;
        for (i, s) in ds.samples().iter().enumerate() {
            let class = s.class_label().map_or("unlabeled", |c| ds.class_names()[c].as_str());
            let path = dir.join(format!("{i:05}_{class}.xyz"));
            save_xyz(&path, s)?;
            files.push(path);
        }
    }
    emit(
        &json!({
            "schema": "aecnn.synth/1",
            "out": args.out,
            "samples": ds.len(),
            "class_names": ds.class_names(),
            "part_names": ds.part_names(),
            "class_counts": ds.class_counts(),
            "xyz_files": files.len(),
        }),
        None,
    )?;
    Ok(ds)
}

pub fn cmd_config(args: &ConfigArgs) -> Result<()> {
    print!("{}", preset(args.preset).to_toml());
    Ok(())
}
