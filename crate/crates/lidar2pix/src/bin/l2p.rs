//! Command-line front end: dataset synthesis, training, prediction,
//! evaluation, and frame export, plus a one-shot pipeline.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use lidar2pix::dataset::{build_dataset, split, DatasetManifest, Split, MANIFEST_FILE};
use lidar2pix::eval::{evaluate_run, DetectorConfig, EvalReport};
use lidar2pix::lidar::SensorConfig;
use lidar2pix::pix2pix::{train, Checkpoint, Predictor, TrainConfig, write_epoch_csv};
use lidar2pix::raster::{ChannelMode, RasterImage};
use lidar2pix::scene::SceneParams;
use lidar2pix::{Error, Result};

#[derive(Parser)]
#[command(name = "l2p", about = "Synthetic LiDAR-to-image pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired dataset of projected point clouds and rendered images
    Synth(SynthArgs),
    /// Train the conditional model on a dataset's train split
    Train(TrainArgs),
    /// Run the generator on one input raster and write the predicted image
    Predict(PredictArgs),
    /// Score a checkpoint on a dataset split with the car-presence metric
    Eval(EvalArgs),
    /// Write numbered side-by-side frames (input | predicted | target)
    Export(ExportArgs),
    /// synth, train, and eval in one run
    Pipeline(PipelineArgs),
}

/// key=value overrides loaded from --config; flags beat file values.
struct FileCfg(HashMap<String, String>);

impl FileCfg {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::parse(path, format!("line {}: expected key=value", lineno + 1))
                })?;
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(FileCfg(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::invalid("config", format!("key '{key}': cannot parse '{raw}'"))
            }),
        }
    }

    /// flag beats file beats default
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Number of pairs [default: 200]
    #[arg(long)]
    count: Option<usize>,
    /// Base scene seed; pair i uses seed+i [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Square image side in pixels [default: 64]
    #[arg(long)]
    size: Option<usize>,
    /// Keep every n-th ray of the sensor grid [default: 4]
    #[arg(long)]
    subsample: Option<usize>,
    /// Input channels: refl or refl-dist [default: refl-dist]
    #[arg(long)]
    mode: Option<String>,
    /// Fraction of pairs assigned to the test split [default: 0.2]
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Probability that a car is black [default: 0.3]
    #[arg(long)]
    black_prob: Option<f64>,
    /// key=value config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (containing manifest.txt)
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Preset: exp1 (reflectance, 50 epochs) or exp2 (refl+dist, 40 epochs) [default: exp2]
    #[arg(long)]
    preset: Option<String>,
    /// Override the preset's epoch count
    #[arg(long)]
    epochs: Option<usize>,
    /// Training seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Generator/discriminator width at the first layer [default: 64]
    #[arg(long)]
    base_filters: Option<usize>,
    /// Per-epoch loss log CSV path [default: <out>.csv]
    #[arg(long)]
    log: Option<PathBuf>,
    /// key=value config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint path
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input raster (.l2ri)
    #[arg(long)]
    input: PathBuf,
    /// Predicted image output path (8-bit PNG)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint path (not needed with --ground-truth)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Split to score: train or test [default: test]
    #[arg(long)]
    split: Option<String>,
    /// Score the ground-truth images instead of predictions (upper bound)
    #[arg(long)]
    ground_truth: bool,
    /// Per-pair report CSV path [default: none]
    #[arg(long)]
    report: Option<PathBuf>,
    /// key=value config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Checkpoint path
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Split to export: train or test [default: test]
    #[arg(long)]
    split: Option<String>,
    /// Output directory for numbered frames
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Working directory for dataset, checkpoint, and reports
    #[arg(long)]
    out: PathBuf,
    /// Number of pairs [default: 200]
    #[arg(long)]
    count: Option<usize>,
    /// Base seed for scenes and training [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Square image side in pixels [default: 64]
    #[arg(long)]
    size: Option<usize>,
    /// Keep every n-th ray of the sensor grid [default: 4]
    #[arg(long)]
    subsample: Option<usize>,
    /// Preset: exp1 or exp2 [default: exp2]
    #[arg(long)]
    preset: Option<String>,
    /// Override the preset's epoch count
    #[arg(long)]
    epochs: Option<usize>,
    /// Generator/discriminator width at the first layer [default: 64]
    #[arg(long)]
    base_filters: Option<usize>,
    /// key=value config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Synth(a) => cmd_synth(a).map(|_| ()),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Export(a) => cmd_export(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<PathBuf> {
    let file = FileCfg::load(a.config.as_deref())?;
    let count = file.pick(a.count, "count", 200)?;
    let seed = file.pick(a.seed, "seed", 0)?;
    let size = file.pick(a.size, "size", 64)?;
    let subsample = file.pick(a.subsample, "subsample", 4)?;
    let mode_s: String = file.pick(a.mode, "mode", String::from("refl-dist"))?;
    let mode = ChannelMode::parse(&mode_s)?;
    let test_fraction = file.pick(a.test_fraction, "test_fraction", 0.2)?;
    let black_prob = file.pick(a.black_prob, "black_prob", 0.3)?;

    let params = SceneParams {
        black_car_probability: black_prob,
        ..SceneParams::default()
    };
    let sensor = SensorConfig::default();
    let manifest = build_dataset(count, seed, &params, &sensor, mode, size, size, subsample, &a.out)?;
    let manifest = split(&manifest, test_fraction, seed)?;
    let path = manifest.save()?;
    println!("wrote {} pairs, manifest {}", count, path.display());
    Ok(path)
}

fn resolve_train_config(
    preset: &str,
    epochs: Option<usize>,
    seed: u64,
    manifest: &DatasetManifest,
) -> Result<TrainConfig> {
    let mut cfg = match preset {
        "exp1" => TrainConfig::exp1(seed),
        "exp2" => TrainConfig::exp2(seed),
        other => return Err(Error::invalid("preset", format!("unknown preset '{other}', expected exp1 or exp2"))),
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if cfg.mode != manifest.mode {
        return Err(Error::ModeMismatch {
            dataset: manifest.mode.name().to_string(),
            requested: cfg.mode.name().to_string(),
        });
    }
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file = FileCfg::load(a.config.as_deref())?;
    let preset: String = file.pick(a.preset, "preset", String::from("exp2"))?;
    let epochs = match a.epochs {
        Some(e) => Some(e),
        None => file.get("epochs")?,
    };
    let seed = file.pick(a.seed, "seed", 0)?;
    let base_filters = file.pick(a.base_filters, "base_filters", 64)?;

    let manifest = DatasetManifest::load(&a.dataset.join(MANIFEST_FILE))?;
    let cfg = resolve_train_config(&preset, epochs, seed, &manifest)?;
    let pairs = manifest.train_pairs(Split::Train)?;
    println!(
        "training on {} pairs, {} epochs, mode {}",
        pairs.len(),
        cfg.epochs,
        cfg.mode.name()
    );
    let outcome = train(&pairs, &cfg, base_filters)?;
    outcome.best.save(&a.out)?;
    let log = a.log.unwrap_or_else(|| a.out.with_extension("csv"));
    write_epoch_csv(&log, &outcome.history)?;
    println!(
        "checkpoint {} (epoch {}, val L1 {:.4}), log {}",
        a.out.display(),
        outcome.best.epoch,
        outcome.best.val_l1,
        log.display()
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let input = RasterImage::load(&a.input)?;
    let mut predictor = Predictor::from_checkpoint(&ckpt)?;
    let predicted = predictor.predict(&input)?;
    predicted.save_rgb_png(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<EvalReport> {
    let file = FileCfg::load(a.config.as_deref())?;
    let split_s: String = file.pick(a.split, "split", String::from("test"))?;
    let which = Split::parse(&split_s)?;

    let manifest = DatasetManifest::load(&a.dataset.join(MANIFEST_FILE))?;
    let items = manifest.eval_items(which)?;
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ckpt = match (&a.checkpoint, a.ground_truth) {
        (_, true) => None,
        (Some(p), false) => Some(Checkpoint::load(p)?),
        (None, false) => {
            return Err(Error::invalid("eval", "--checkpoint required unless --ground-truth"))
        }
    };
    let report = evaluate_run(ckpt.as_ref(), &items, &DetectorConfig::default(), a.ground_truth)?;
    println!("{}", report.summary());
    if let Some(path) = &a.report {
        report.save_csv(path)?;
        println!("report {}", path.display());
    }
    Ok(report)
}

/// Grayscale RGB preview of the input's reflectance channel.
fn input_preview(input: &RasterImage) -> RasterImage {
    let (h, w) = (input.height(), input.width());
    let mut out = RasterImage::zeros(3, h, w);
    for v in 0..h {
        for u in 0..w {
            let g = input.data[[0, v, u]];
            for ch in 0..3 {
                out.data[[ch, v, u]] = g;
            }
        }
    }
    out
}

/// input | predicted | target with 1-pixel white separators.
fn side_by_side(panels: &[&RasterImage]) -> RasterImage {
    let (h, w) = (panels[0].height(), panels[0].width());
    let total_w = panels.len() * w + panels.len() - 1;
    let mut out = RasterImage::zeros(3, h, total_w);
    out.data.fill(1.0);
    for (k, panel) in panels.iter().enumerate() {
        let x0 = k * (w + 1);
        for ch in 0..3 {
            for v in 0..h {
                for u in 0..w {
                    out.data[[ch, v, x0 + u]] = panel.data[[ch, v, u]];
                }
            }
        }
    }
    out
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let which = Split::parse(a.split.as_deref().unwrap_or("test"))?;
    let manifest = DatasetManifest::load(&a.dataset.join(MANIFEST_FILE))?;
    let items = manifest.eval_items(which)?;
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut predictor = Predictor::from_checkpoint(&ckpt)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (i, item) in items.iter().enumerate() {
        let predicted = predictor.predict(&item.input)?;
        let frame = side_by_side(&[&input_preview(&item.input), &predicted, &item.target]);
        frame.save_rgb_png(&a.out.join(format!("frame_{i:05}.png")))?;
    }
    println!("wrote {} frames to {}", items.len(), a.out.display());
    Ok(())
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let file = FileCfg::load(a.config.as_deref())?;
    let preset: String = file.pick(a.preset.clone(), "preset", String::from("exp2"))?;
    let mode = match preset.as_str() {
        "exp1" => "refl",
        _ => "refl-dist",
    };
    let dataset = a.out.join("dataset");
    let ckpt = a.out.join("model.l2ck");
    cmd_synth(SynthArgs {
        out: dataset.clone(),
        count: a.count,
        seed: a.seed,
        size: a.size,
        subsample: a.subsample,
        mode: Some(mode.to_string()),
        test_fraction: None,
        black_prob: None,
        config: a.config.clone(),
    })?;
    cmd_train(TrainArgs {
        dataset: dataset.clone(),
        out: ckpt.clone(),
        preset: a.preset,
        epochs: a.epochs,
        seed: a.seed,
        base_filters: a.base_filters,
        log: None,
        config: a.config.clone(),
    })?;
    cmd_eval(EvalArgs {
        checkpoint: Some(ckpt),
        dataset,
        split: None,
        ground_truth: false,
        report: Some(a.out.join("eval.csv")),
        config: a.config,
    })?;
    Ok(())
}
