mod config;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use scribbleseg::dataio::{self, ImageSample, WeakKind};
use scribbleseg::metrics::{evaluate, MetricsReport};
use scribbleseg::model::{Architecture, SegmentationModel, SIZE_MULTIPLE};
use scribbleseg::selftrain::{generate_pseudo_labels, self_train, SelfTrainConfig};
use scribbleseg::trainer::{train_items, TrainLog, TrainingItem};
use scribbleseg::{Error, Scalar};

use config::{Precision, RunConfig, UsageError};

const CHECKPOINT: &str = "model.ckpt";

#[derive(Parser)]
#[command(name = "scribbleseg", version, about = "Scribble-supervised binary segmentation on synthetic blobs")]
struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, env = "SCRIBBLESEG_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic blob dataset.
    Gen(GenArgs),
    /// Train a model on scribble annotations.
    Train(TrainArgs),
    /// Pseudo-label a dataset with a teacher and train a fresh student.
    Selftrain(SelfTrainArgs),
    /// Score a checkpoint and append a row to a report CSV.
    Eval(EvalArgs),
    /// Label accuracy of scribble, box and point annotations.
    Stats(StatsArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    /// Image height and width; a multiple of 16.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, env = "SCRIBBLESEG_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Put the last N samples in `<out>/test` and the rest in `<out>/train`.
    #[arg(long)]
    test: Option<usize>,
}

/// Config file plus per-key overrides.
#[derive(Args)]
struct ConfigArgs {
    /// Complete config file (see defaults.toml); built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "SCRIBBLESEG_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, UsageError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.width {
            cfg.model.width_base = v;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Dataset scored after every epoch.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Partial BCE only, no alignment.
    #[arg(long)]
    baseline: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct SelfTrainArgs {
    /// Teacher checkpoint.
    #[arg(long)]
    teacher: PathBuf,
    /// Images to pseudo-label; their annotations are ignored.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// CSV the result row is appended to.
    #[arg(long)]
    report: PathBuf,
    /// Value of the `method` column.
    #[arg(long, default_value = "model")]
    method: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    /// Seed for the synthesized box and point annotations.
    #[arg(long, env = "SCRIBBLESEG_SEED", default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Selftrain(a) => cmd_selftrain(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::NonFinite { .. }) => 3,
        Some(_) => 2,
        None => 1,
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    if a.size == 0 || a.size % SIZE_MULTIPLE != 0 {
        return Err(usage(format!("--size must be a positive multiple of {SIZE_MULTIPLE}, got {}", a.size)));
    }
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let samples = dataio::generate_blob_dataset(a.n, a.size, a.size, a.seed)?;
    match a.test {
        None => dataio::save_dataset(&a.out, &samples)?,
        Some(t) if t >= a.n => return Err(usage(format!("--test {t} leaves no training samples out of {}", a.n))),
        Some(t) => {
            let (train, test) = samples.split_at(a.n - t);
            dataio::save_dataset(&a.out.join("train"), train)?;
            dataio::save_dataset(&a.out.join("test"), test)?;
        }
    }
    println!("wrote {} samples to {}", a.n, a.out.display());
    Ok(())
}

fn load_nonempty(dir: &Path) -> Result<Vec<ImageSample>> {
    if !dir.is_dir() {
        return Err(usage(format!("dataset directory {} does not exist", dir.display())));
    }
    let samples = dataio::load_dataset(dir)?;
    if samples.is_empty() {
        return Err(usage(format!("no samples in {}", dir.display())));
    }
    Ok(samples)
}

fn load_val(dir: Option<&Path>) -> Result<Option<Vec<ImageSample>>> {
    dir.map(load_nonempty).transpose()
}

fn write_outputs<T: Scalar>(out: &Path, model: &SegmentationModel<T>, log: &TrainLog, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let ckpt = out.join(CHECKPOINT);
    model.save(&ckpt)?;
    for (name, text) in [
        ("steps.jsonl", log.steps_jsonl()),
        ("epochs.csv", log.epochs_csv()),
        ("config.toml", cfg.to_toml()),
    ] {
        let path = out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("checkpoint {} sha256 {}", ckpt.display(), model.checkpoint_hash());
    Ok(())
}

fn progress(tag: &str) -> impl FnMut(usize, Option<&MetricsReport>) + '_ {
    move |epoch, report| match report {
        Some(r) => eprintln!("{tag} epoch {epoch}: dice {:.4} iou {:.4}", r.dice, r.iou),
        None => eprintln!("{tag} epoch {epoch}"),
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let mut train_cfg = cfg.train_config()?;
    if a.baseline {
        train_cfg = train_cfg.baseline();
    }
    let data = load_nonempty(&a.data)?;
    let val = load_val(a.val.as_deref())?;
    let items: Vec<TrainingItem> = data.iter().map(TrainingItem::from).collect();
    let channels = data[0].image.channels();

    fn run<T: Scalar>(
        a: &TrainArgs,
        cfg: &RunConfig,
        train_cfg: &scribbleseg::trainer::TrainConfig,
        items: &[TrainingItem],
        val: Option<&[ImageSample]>,
        channels: usize,
    ) -> Result<()> {
        let model = SegmentationModel::<T>::init(cfg.model.width_base, channels, train_cfg.seed)?;
        let tag = if a.baseline { "baseline" } else { "train" };
        let (model, log) = train_items(model, items, val, train_cfg, &mut progress(tag))?;
        write_outputs(&a.out, &model, &log, cfg)
    }
    match cfg.model.precision {
        Precision::F32 => run::<f32>(a, &cfg, &train_cfg, &items, val.as_deref(), channels),
        Precision::F64 => run::<f64>(a, &cfg, &train_cfg, &items, val.as_deref(), channels),
    }
}

fn cmd_selftrain(a: &SelfTrainArgs) -> Result<()> {
    if !a.teacher.is_file() {
        return Err(usage(format!("teacher checkpoint {} not found", a.teacher.display())));
    }
    let cfg = a.cfg.resolve()?;
    let train_cfg = cfg.train_config()?;
    let data = load_nonempty(&a.data)?;
    let val = load_val(a.val.as_deref())?;

    fn run<T: Scalar>(
        a: &SelfTrainArgs,
        cfg: &RunConfig,
        train_cfg: scribbleseg::trainer::TrainConfig,
        data: &[ImageSample],
        val: Option<&[ImageSample]>,
    ) -> Result<()> {
        let teacher = SegmentationModel::<T>::load(&a.teacher)?;
        let pseudo = generate_pseudo_labels(&teacher, data)?;
        pseudo.save(&a.out)?;
        let images: Vec<_> = data.iter().map(|s| (s.id.clone(), s.image.clone())).collect();
        let st = SelfTrainConfig {
            architecture: Architecture {
                width_base: cfg.model.width_base,
                in_channels: data[0].image.channels(),
                seed: train_cfg.seed,
            },
            train: train_cfg,
        };
        let (student, log) = self_train::<T>(&pseudo, &images, val, &st, &mut progress("student"))?;
        write_outputs(&a.out, &student, &log, cfg)
    }
    match cfg.model.precision {
        Precision::F32 => run::<f32>(a, &cfg, train_cfg, &data, val.as_deref()),
        Precision::F64 => run::<f64>(a, &cfg, train_cfg, &data, val.as_deref()),
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    if !a.checkpoint.is_file() {
        return Err(usage(format!("checkpoint {} not found", a.checkpoint.display())));
    }
    let cfg = RunConfig::load(a.config.as_deref())?;
    let threshold = a.threshold.unwrap_or(cfg.eval.threshold);
    let data = load_nonempty(&a.data)?;
    let report = match cfg.model.precision {
        Precision::F32 => evaluate(&SegmentationModel::<f32>::load(&a.checkpoint)?, &data, threshold, cfg.eval.aggregation)?,
        Precision::F64 => evaluate(&SegmentationModel::<f64>::load(&a.checkpoint)?, &data, threshold, cfg.eval.aggregation)?,
    };
    let row = report.csv_row(&a.method);
    let fresh = fs::metadata(&a.report).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&a.report)
        .with_context(|| format!("opening {}", a.report.display()))?;
    if fresh {
        writeln!(file, "{}", MetricsReport::CSV_HEADER)?;
    }
    writeln!(file, "{row}")?;
    println!("{row}");
    Ok(())
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let data = load_nonempty(&a.data)?;
    let kinds = ["scribble", "box", "point"];
    let mut sums = [[0.0f64; 3]; 3];
    let mut fg = 0.0;
    for (i, s) in data.iter().enumerate() {
        let seed = a.seed.wrapping_add(i as u64);
        let weak = [
            s.scribble.clone(),
            dataio::synthesize_weak(&s.full_mask, WeakKind::Box, seed)?,
            dataio::synthesize_weak(&s.full_mask, WeakKind::Point, seed)?,
        ];
        for (sum, w) in sums.iter_mut().zip(&weak) {
            let st = dataio::annotation_stats(&s.full_mask, w)?;
            sum[0] += st.accurate_fraction;
            sum[1] += st.noisy_fraction;
            sum[2] += st.unlabeled_fraction;
        }
        fg += s.full_mask.foreground_fraction();
    }
    let n = data.len() as f64;
    println!("annotation,accurate,noisy,unlabeled");
    for (kind, sum) in kinds.iter().zip(&sums) {
        println!("{kind},{:.6},{:.6},{:.6}", sum[0] / n, sum[1] / n, sum[2] / n);
    }
    eprintln!("{} samples, mean foreground fraction {:.4}", data.len(), fg / n);
    Ok(())
}
