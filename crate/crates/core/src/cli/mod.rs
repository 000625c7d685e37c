//! Command-line front end.
//!
//! Subcommands: `gen-data`, `register`, `pretrain`, `finetune`, `crossval`,
//! `eval`, `report`, `overlay`. Every run resolves its configuration from an
//! optional key=value config file plus flags (flags win), executes
//! deterministically under its seed, and writes a `run_manifest.json` into
//! the output directory. Exit codes: 0 success, 1 usage error, 2
//! config/schema error, 3 runtime failure.

pub mod overlay;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    assemble_holdout, assemble_split, generate_dataset, load_dataset, make_folds, save_dataset,
    Cover, Dataset, ModalityMask, Pose, Sample, Source, SplitPlan, JOINT_COUNT,
};
use crate::eval::{
    breakdown, emit_report, load_report, EvalReport, FoldSummary, LabeledPair, MetricConfig,
};
use crate::geometry::{estimate_homography_ransac, Calibration, Plane, Point};
use crate::model::{
    init_encoder_from, init_vitpose_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    HeadConfig, MaeConfig, StageRecord, ViTConfig,
};
use crate::train::{
    cross_validate, finetune, predict_pose, pretrain_mae, run_hierarchy, PretrainConfig,
    StagePlan, TrainConfig, Variant,
};

const USAGE: &str = "\
matpose <command> [flags]

commands:
  gen-data   --poses N --seed S -o DIR [--source smal|slp|sim]
  register   --points FILE -o DIR [--threshold T] [--iterations N] [--seed S]
  pretrain   --data DIR --epochs N --seed S -o DIR [--init CKPT] [--model tiny|base]
             [--batch-size N] [--lr LR] [--threads N]
  finetune   --data DIR --init CKPT --seed S -o DIR [--epochs N] [--batch-size N]
             [--lr LR] [--modality both|depth|psm] [--fold-test N] [--fold-val N]
             [--holdout N] [--threads N]
  crossval   --variant baseline|S|R|B --stage-epochs N --seed S -o DIR [--poses N]
             [--sim-poses N] [--real-poses N] [--epochs N] [--batch-size N]
             [--lr LR] [--modality M] [--threads N]
  eval       (--pred FILE --gt FILE | --data DIR --checkpoint CKPT) -o DIR
             [--modality M] [--threads N]
  report     --in report.json -o DIR
  overlay    --data DIR --checkpoint CKPT -o DIR [--modality M] [--limit N]
             [--threads N]

common flags:
  --config FILE   key=value config file ([section] headers allowed);
                  command-line flags override file values
";

#[derive(Debug)]
enum CliError {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Resolved flag map: config file values overridden by command-line flags.
struct Opts {
    values: BTreeMap<String, String>,
    command: String,
}

impl Opts {
    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Usage(format!("{}: missing required flag --{key}", self.command)))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| CliError::Usage(format!("flag --{key}: cannot parse `{raw}`"))),
        }
    }

    fn parse_required<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| CliError::Usage(format!("flag --{key}: cannot parse `{raw}`")))
    }

    fn out_dir(&self) -> Result<PathBuf, CliError> {
        Ok(PathBuf::from(self.require("output")?))
    }

    fn modality(&self) -> Result<ModalityMask, CliError> {
        match self.get("modality").unwrap_or("both") {
            "both" | "BOTH" => Ok(ModalityMask::Both),
            "depth" | "DEPTH_ONLY" => Ok(ModalityMask::DepthOnly),
            "psm" | "PSM_ONLY" => Ok(ModalityMask::PsmOnly),
            other => Err(CliError::Usage(format!("unknown modality `{other}`"))),
        }
    }

    fn threads(&self) -> Result<usize, CliError> {
        self.parse("threads", 0usize)
    }
}

/// Parse `key = value` lines with optional `[section]` headers into
/// `section.key` entries; `#` starts a comment.
fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "{}:{}: expected key = value, got `{raw}`",
                path.display(),
                lineno + 1
            )));
        };
        let key = if section.is_empty() {
            key.trim().to_string()
        } else {
            format!("{section}.{}", key.trim())
        };
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn parse_args(command: &str, args: &[String]) -> Result<Opts, CliError> {
    let mut flags = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(stripped) = arg.strip_prefix("--") else {
            return Err(CliError::Usage(format!("unexpected argument `{arg}`")));
        };
        let (key, value) = match stripped.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let key = stripped.to_string();
                i += 1;
                let Some(value) = args.get(i) else {
                    return Err(CliError::Usage(format!("flag --{key} expects a value")));
                };
                (key, value.clone())
            }
        };
        let key = match key.as_str() {
            "o" | "out" => "output".to_string(),
            other => other.to_string(),
        };
        flags.insert(key, value);
        i += 1;
    }
    let mut values = BTreeMap::new();
    if let Some(path) = flags.get("config") {
        values.extend(parse_config_file(Path::new(path))?);
    }
    values.extend(flags);
    Ok(Opts { values, command: command.to_string() })
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    crate::parallel::tune_allocator();
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return 1;
    };
    // Accept `-o DIR` as shorthand for `--output DIR`.
    let mut rest: Vec<String> = Vec::with_capacity(args.len().saturating_sub(1));
    let mut iter = args[1..].iter().peekable();
    while let Some(a) = iter.next() {
        if a == "-o" {
            rest.push("--output".into());
            if let Some(v) = iter.next() {
                rest.push(v.clone());
            }
        } else {
            rest.push(a.clone());
        }
    }

    let result = match command.as_str() {
        "gen-data" => parse_args(command, &rest).and_then(cmd_gen_data),
        "register" => parse_args(command, &rest).and_then(cmd_register),
        "pretrain" => parse_args(command, &rest).and_then(cmd_pretrain),
        "finetune" => parse_args(command, &rest).and_then(cmd_finetune),
        "crossval" => parse_args(command, &rest).and_then(cmd_crossval),
        "eval" => parse_args(command, &rest).and_then(cmd_eval),
        "report" => parse_args(command, &rest).and_then(cmd_report),
        "overlay" => parse_args(command, &rest).and_then(cmd_overlay),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            return 0;
        }
        other => Err(CliError::Usage(format!("unknown command `{other}`"))),
    };

    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("matpose: {}", err.message());
            if matches!(err, CliError::Usage(_)) {
                eprintln!("\n{USAGE}");
            }
            err.code()
        }
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a BTreeMap<String, String>,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    details: serde_json::Value,
}

fn write_manifest(
    dir: &Path,
    opts: &Opts,
    status: &str,
    error: Option<String>,
    outputs: Vec<String>,
    details: serde_json::Value,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    let manifest = RunManifest {
        command: &opts.command,
        config: &opts.values,
        status,
        error,
        outputs,
        details,
    };
    let path = dir.join("run_manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
    std::fs::write(&path, json).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Wrap a command body so a runtime failure still leaves a partial manifest.
fn with_manifest(
    opts: &Opts,
    dir: &Path,
    body: impl FnOnce() -> Result<(Vec<String>, serde_json::Value), CliError>,
) -> Result<(), CliError> {
    match body() {
        Ok((outputs, details)) => write_manifest(dir, opts, "ok", None, outputs, details),
        Err(err) => {
            if !matches!(err, CliError::Usage(_)) {
                let _ = write_manifest(
                    dir,
                    opts,
                    "failed",
                    Some(err.message().to_string()),
                    Vec::new(),
                    serde_json::Value::Null,
                );
            }
            Err(err)
        }
    }
}

fn parse_source(tag: &str) -> Result<Source, CliError> {
    match tag {
        "smal" | "SMAL_LIKE" => Ok(Source::SmalLike),
        "slp" | "SLP_LIKE" => Ok(Source::SlpLike),
        "sim" | "SYNTH_SIM" => Ok(Source::SynthSim),
        other => Err(CliError::Usage(format!("unknown source `{other}`"))),
    }
}

fn cmd_gen_data(opts: Opts) -> Result<(), CliError> {
    let poses: usize = opts.parse_required("poses")?;
    let seed: u64 = opts.parse_required("seed")?;
    let source = parse_source(opts.get("source").unwrap_or("smal"))?;
    let dir = opts.out_dir()?;
    with_manifest(&opts, &dir, || {
        let dataset = generate_dataset(poses, seed, source).map_err(runtime)?;
        save_dataset(&dataset, &dir).map_err(runtime)?;
        let details = serde_json::json!({
            "samples": dataset.samples.len(),
            "poses": poses,
        });
        Ok((vec!["manifest.json".into()], details))
    })
}

#[derive(Deserialize)]
struct PointsFile {
    src_plane: Plane,
    dst_plane: Plane,
    src: Vec<Point>,
    dst: Vec<Point>,
}

fn cmd_register(opts: Opts) -> Result<(), CliError> {
    let points_path = PathBuf::from(opts.require("points")?);
    let threshold: f64 = opts.parse("threshold", 1.0)?;
    let iterations: usize = opts.parse("iterations", 2000)?;
    let seed: u64 = opts.parse("seed", 0)?;
    let dir = opts.out_dir()?;
    let text = std::fs::read_to_string(&points_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", points_path.display())))?;
    let points: PointsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", points_path.display())))?;
    with_manifest(&opts, &dir, || {
        let (h, mask) =
            estimate_homography_ransac(&points.src, &points.dst, threshold, iterations, seed)
                .map_err(runtime)?;
        let calib =
            Calibration::new(points.src_plane, points.dst_plane, &h, &points.src, &points.dst, &mask);
        let out = dir.join("calibration.json");
        let json = serde_json::to_string_pretty(&calib).map_err(runtime)?;
        std::fs::write(&out, json).map_err(runtime)?;
        let details = serde_json::json!({
            "inlier_count": calib.inlier_count,
            "rms_error": calib.rms_error,
        });
        Ok((vec!["calibration.json".into()], details))
    })
}

fn model_preset(opts: &Opts) -> Result<(ViTConfig, MaeConfig, HeadConfig), CliError> {
    match opts.get("model").unwrap_or("tiny") {
        "tiny" => Ok((ViTConfig::tiny(), MaeConfig::tiny(), HeadConfig::tiny())),
        "base" => Ok((ViTConfig::base(), MaeConfig::base(), HeadConfig::base())),
        other => Err(CliError::Usage(format!("unknown model preset `{other}`"))),
    }
}

fn load_data(opts: &Opts) -> Result<Dataset, CliError> {
    let dir = PathBuf::from(opts.require("data")?);
    load_dataset(&dir).map_err(|e| CliError::Config(e.to_string()))
}

fn cmd_pretrain(opts: Opts) -> Result<(), CliError> {
    let dataset = load_data(&opts)?;
    let epochs: usize = opts.parse_required("epochs")?;
    let seed: u64 = opts.parse_required("seed")?;
    let dir = opts.out_dir()?;
    let (vit, mae, _) = model_preset(&opts)?;
    let cfg = PretrainConfig {
        batch_size: opts.parse("batch-size", 32)?,
        base_lr: opts.parse("lr", 1.5e-3)?,
        warmup: opts.parse("warmup", 5)?,
        holdout_frac: 0.1,
        threads: opts.threads()?,
    };
    let init = match opts.get("init") {
        Some(path) => load_checkpoint(Path::new(path)).map_err(|e| CliError::Config(e.to_string()))?,
        None => crate::model::init_mae_checkpoint(vit, mae, seed).map_err(runtime)?,
    };
    with_manifest(&opts, &dir, || {
        let (ckpt, log) =
            pretrain_mae(&init, &dataset, epochs, &cfg, "pretrain-data", seed).map_err(runtime)?;
        let ckpt_dir = dir.join("checkpoint");
        save_checkpoint(&ckpt, &ckpt_dir).map_err(runtime)?;
        let details = serde_json::json!({
            "log": log,
            "lineage": ckpt.lineage,
        });
        Ok((vec!["checkpoint".into()], details))
    })
}

/// Build a pose model from an init checkpoint: reuse it when it already has
/// a head, otherwise wrap its encoder with a fresh head.
fn pose_model_from(init: Checkpoint, head: HeadConfig, seed: u64) -> Result<Checkpoint, CliError> {
    if init.head.is_some() {
        return Ok(init);
    }
    let fresh = init_vitpose_checkpoint(init.vit, head, seed).map_err(runtime)?;
    init_encoder_from(
        &init,
        fresh,
        StageRecord { stage: "init-encoder".into(), dataset: "checkpoint".into(), epochs: 0, seed },
    )
    .map_err(runtime)
}

fn cmd_finetune(opts: Opts) -> Result<(), CliError> {
    let dataset = load_data(&opts)?;
    let seed: u64 = opts.parse_required("seed")?;
    let dir = opts.out_dir()?;
    let (_, _, head_preset) = model_preset(&opts)?;
    let init = load_checkpoint(Path::new(opts.require("init")?))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let modality = opts.modality()?;
    let cfg = TrainConfig {
        batch_size: opts.parse("batch-size", 12)?,
        base_lr: opts.parse("lr", 1e-3)?,
        epochs: opts.parse("epochs", 10)?,
        warmup: opts.parse("warmup", 2)?,
        policy: crate::data::AugmentPolicy::smal_stage(),
        seed,
        threads: opts.threads()?,
    };

    let (train, val) = if let Some(holdout) = opts.get("holdout") {
        let train_poses: usize = holdout
            .parse()
            .map_err(|_| CliError::Usage(format!("--holdout: cannot parse `{holdout}`")))?;
        assemble_holdout(&dataset, train_poses).map_err(runtime)?
    } else {
        let folds = make_folds(&dataset, 5, seed).map_err(runtime)?;
        let plan = SplitPlan::new(
            folds,
            opts.parse("fold-test", 0usize)?,
            opts.parse("fold-val", 1usize)?,
        )
        .map_err(runtime)?;
        let (train, val, _) = assemble_split(&dataset, &plan).map_err(runtime)?;
        (train, val)
    };

    with_manifest(&opts, &dir, || {
        let model = pose_model_from(init, head_preset, seed)?;
        let outcome =
            finetune(&model, &train, &val, &cfg, modality, "finetune-data").map_err(runtime)?;
        let ckpt_dir = dir.join("checkpoint");
        save_checkpoint(&outcome.model, &ckpt_dir).map_err(runtime)?;
        let details = serde_json::json!({
            "best_epoch": outcome.best_epoch,
            "best_val_pck": outcome.best_val_pck,
            "log": outcome.log,
        });
        Ok((vec!["checkpoint".into()], details))
    })
}

fn cmd_crossval(opts: Opts) -> Result<(), CliError> {
    let variant = Variant::parse(opts.require("variant")?)
        .ok_or_else(|| CliError::Usage("variant must be baseline|S|R|B".into()))?;
    let stage_epochs: usize = opts.parse_required("stage-epochs")?;
    let seed: u64 = opts.parse_required("seed")?;
    let dir = opts.out_dir()?;
    let (vit, mae, head) = model_preset(&opts)?;
    let threads = opts.threads()?;
    let poses: usize = opts.parse("poses", 30)?;
    let sim_poses: usize = opts.parse("sim-poses", 60)?;
    let real_poses: usize = opts.parse("real-poses", 30)?;
    let ft_cfg = TrainConfig {
        batch_size: opts.parse("batch-size", 12)?,
        base_lr: opts.parse("lr", 1e-3)?,
        epochs: opts.parse("epochs", 10)?,
        warmup: opts.parse("warmup", 2)?,
        policy: crate::data::AugmentPolicy::smal_stage(),
        seed: crate::rng::derive_seed(&[seed, 0xf1]),
        threads,
    };
    let pre_cfg = PretrainConfig {
        batch_size: opts.parse("pretrain-batch-size", 32)?,
        base_lr: opts.parse("pretrain-lr", 1.5e-3)?,
        warmup: 3,
        holdout_frac: 0.1,
        threads,
    };
    let modality = opts.modality()?;

    with_manifest(&opts, &dir, || {
        let smal = generate_dataset(poses, crate::rng::derive_seed(&[seed, 1]), Source::SmalLike)
            .map_err(runtime)?;
        let sim = match variant {
            Variant::S | Variant::B => Some(
                generate_dataset(sim_poses, crate::rng::derive_seed(&[seed, 2]), Source::SynthSim)
                    .map_err(runtime)?,
            ),
            _ => None,
        };
        let real = match variant {
            Variant::R | Variant::B => Some(
                generate_dataset(real_poses, crate::rng::derive_seed(&[seed, 3]), Source::SlpLike)
                    .map_err(runtime)?,
            ),
            _ => None,
        };
        let plan = StagePlan { variant, epochs_per_stage: stage_epochs };
        let (pretrained, logs) =
            run_hierarchy(&plan, sim.as_ref(), real.as_ref(), vit, mae, &pre_cfg, seed)
                .map_err(runtime)?;

        let folds = make_folds(&smal, 5, crate::rng::derive_seed(&[seed, 4])).map_err(runtime)?;
        let fresh = init_vitpose_checkpoint(vit, head, crate::rng::derive_seed(&[seed, 5]))
            .map_err(runtime)?;
        let pose_init = match variant {
            Variant::Baseline => fresh,
            _ => init_encoder_from(
                &pretrained,
                fresh,
                StageRecord {
                    stage: "init-encoder".into(),
                    dataset: variant.tag().into(),
                    epochs: 0,
                    seed,
                },
            )
            .map_err(runtime)?,
        };

        let result = cross_validate(|_| Ok(pose_init.clone()), &smal, &folds, &ft_cfg, modality)
            .map_err(runtime)?;
        emit_report(&result.report, &dir).map_err(runtime)?;
        let details = serde_json::json!({
            "variant": variant.tag(),
            "per_fold_pck": result.per_fold_pck,
            "per_fold_nme_mm": result.per_fold_nme_mm,
            "mean_pck": result.mean_pck,
            "mean_nme_mm": result.mean_nme_mm,
            "pretrain_logs": logs,
            "lineage": pose_init.lineage,
        });
        Ok((vec!["report.json".into(), "report.txt".into()], details))
    })
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    pose_id: u32,
    cover: Cover,
    joints: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct PosesFile {
    plane: Plane,
    items: Vec<PoseRecord>,
}

fn read_poses_file(path: &Path) -> Result<PosesFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let file: PosesFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for item in &file.items {
        if item.joints.len() != JOINT_COUNT {
            return Err(CliError::Config(format!(
                "{}: pose {} has {} joints, expected {}",
                path.display(),
                item.pose_id,
                item.joints.len(),
                JOINT_COUNT
            )));
        }
    }
    Ok(file)
}

fn record_to_pose(record: &PoseRecord, plane: Plane) -> Pose {
    let mut joints = [(0.0, 0.0); JOINT_COUNT];
    joints.copy_from_slice(&record.joints);
    Pose { joints, plane }
}

fn pairs_from_files(pred: &PosesFile, gt: &PosesFile) -> Result<Vec<LabeledPair>, CliError> {
    let mut by_key: BTreeMap<(u32, &'static str), &PoseRecord> = BTreeMap::new();
    for item in &pred.items {
        by_key.insert((item.pose_id, item.cover.tag()), item);
    }
    let mut pairs = Vec::with_capacity(gt.items.len());
    for item in &gt.items {
        let Some(p) = by_key.get(&(item.pose_id, item.cover.tag())) else {
            return Err(CliError::Config(format!(
                "prediction missing for pose {} cover {}",
                item.pose_id,
                item.cover.tag()
            )));
        };
        pairs.push(LabeledPair {
            pred: record_to_pose(p, pred.plane),
            gt: record_to_pose(item, gt.plane),
            cover: item.cover,
        });
    }
    Ok(pairs)
}

fn report_from_pairs(pairs: &[LabeledPair]) -> Result<EvalReport, CliError> {
    let cfg = MetricConfig::default();
    let tables = breakdown(pairs, &cfg).map_err(runtime)?;
    Ok(EvalReport::from_tables(cfg, &tables, FoldSummary::default(), Vec::new()))
}

fn cmd_eval(opts: Opts) -> Result<(), CliError> {
    let dir = opts.out_dir()?;
    match (opts.get("pred"), opts.get("gt")) {
        (Some(pred), Some(gt)) => {
            let pred = read_poses_file(Path::new(pred))?;
            let gt = read_poses_file(Path::new(gt))?;
            with_manifest(&opts, &dir, || {
                let pairs = pairs_from_files(&pred, &gt)?;
                let report = report_from_pairs(&pairs)?;
                emit_report(&report, &dir).map_err(runtime)?;
                let details = serde_json::json!({
                    "pairs": pairs.len(),
                    "mean_pck": report.mean_pck,
                    "mean_nme_mm": report.mean_nme_mm,
                });
                Ok((vec!["report.json".into(), "report.txt".into()], details))
            })
        }
        (None, None) => {
            let dataset = load_data(&opts)?;
            let ckpt = load_checkpoint(Path::new(opts.require("checkpoint")?))
                .map_err(|e| CliError::Config(e.to_string()))?;
            let modality = opts.modality()?;
            let threads = opts.threads()?;
            with_manifest(&opts, &dir, || {
                let covered: Vec<&Sample> = dataset
                    .samples
                    .iter()
                    .filter(|s| s.cover != Cover::Uncovered)
                    .collect();
                if covered.is_empty() {
                    return Err(CliError::Runtime("dataset has no covered samples".into()));
                }
                let workers = crate::parallel::effective_threads(Some(threads));
                let preds = crate::parallel::par_map(&covered, workers, |_, s| {
                    predict_pose(&ckpt, s, modality)
                });
                let mut pairs = Vec::with_capacity(covered.len());
                let mut pred_records = Vec::with_capacity(covered.len());
                for (sample, pred) in covered.iter().zip(preds) {
                    let pred = pred.map_err(runtime)?;
                    pred_records.push(PoseRecord {
                        pose_id: sample.pose_id,
                        cover: sample.cover,
                        joints: pred.joints.to_vec(),
                    });
                    pairs.push(LabeledPair { pred, gt: sample.pose.clone(), cover: sample.cover });
                }
                let report = report_from_pairs(&pairs)?;
                emit_report(&report, &dir).map_err(runtime)?;
                let pred_file = PosesFile { plane: Plane::Psm, items: pred_records };
                let pred_json = serde_json::to_string_pretty(&pred_file).map_err(runtime)?;
                std::fs::write(dir.join("predictions.json"), pred_json).map_err(runtime)?;
                let details = serde_json::json!({
                    "pairs": pairs.len(),
                    "mean_pck": report.mean_pck,
                    "mean_nme_mm": report.mean_nme_mm,
                });
                Ok((
                    vec!["report.json".into(), "report.txt".into(), "predictions.json".into()],
                    details,
                ))
            })
        }
        _ => Err(CliError::Usage(
            "eval needs either --pred and --gt, or --data and --checkpoint".into(),
        )),
    }
}

fn cmd_report(opts: Opts) -> Result<(), CliError> {
    let input = PathBuf::from(opts.require("in")?);
    let dir = opts.out_dir()?;
    let report = load_report(&input).map_err(|e| CliError::Config(e.to_string()))?;
    with_manifest(&opts, &dir, || {
        emit_report(&report, &dir).map_err(runtime)?;
        Ok((vec!["report.json".into(), "report.txt".into()], serde_json::Value::Null))
    })
}

fn cmd_overlay(opts: Opts) -> Result<(), CliError> {
    let dataset = load_data(&opts)?;
    let ckpt = load_checkpoint(Path::new(opts.require("checkpoint")?))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let modality = opts.modality()?;
    let limit: usize = opts.parse("limit", usize::MAX)?;
    let dir = opts.out_dir()?;
    with_manifest(&opts, &dir, || {
        std::fs::create_dir_all(&dir).map_err(runtime)?;
        let mut outputs = Vec::new();
        for sample in dataset.samples.iter().take(limit) {
            let pred = predict_pose(&ckpt, sample, modality).map_err(runtime)?;
            let canvas = overlay::compose_overlay(sample, Some(&pred));
            let name = format!("{:05}_{}.png", sample.pose_id, sample.cover.tag());
            overlay::write_png(&dir.join(&name), &canvas).map_err(CliError::Runtime)?;
            outputs.push(name);
        }
        let details = serde_json::json!({ "images": outputs.len() });
        Ok((outputs, details))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_sections_and_overrides() {
        let dir = std::env::temp_dir().join("matpose_cli_cfg");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "poses = 30\nseed = 7 # comment\n[pretrain]\nlr = 0.001\n").unwrap();
        let parsed = parse_config_file(&path).unwrap();
        assert_eq!(parsed.get("poses").map(String::as_str), Some("30"));
        assert_eq!(parsed.get("seed").map(String::as_str), Some("7"));
        assert_eq!(parsed.get("pretrain.lr").map(String::as_str), Some("0.001"));

        let args = vec![
            "--config".to_string(),
            path.display().to_string(),
            "--poses".to_string(),
            "60".to_string(),
        ];
        let opts = parse_args("gen-data", &args).unwrap();
        assert_eq!(opts.get("poses"), Some("60"), "flag must override config");
        assert_eq!(opts.get("seed"), Some("7"));
    }

    #[test]
    fn malformed_config_line_is_a_config_error() {
        let dir = std::env::temp_dir().join("matpose_cli_badcfg");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.cfg");
        std::fs::write(&path, "this is not a pair\n").unwrap();
        match parse_config_file(&path) {
            Err(CliError::Config(msg)) => assert!(msg.contains("bad.cfg:1"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_command_is_usage_error() {
        assert_eq!(run(&["frobnicate".to_string()]), 1);
    }

    #[test]
    fn missing_required_flag_is_usage_error() {
        assert_eq!(run(&["gen-data".to_string()]), 1);
    }
}
