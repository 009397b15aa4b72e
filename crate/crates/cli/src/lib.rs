//! Command-line surface: dataset generation, training commands and evaluation,
//! all writing under one output directory.

pub mod config;
pub mod manifest;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use aerodistill::curriculum::{
    comparison_row, evaluate_sequences, interval_rungs, loss_csv, run_ablation, run_classmix_flat, run_progressive,
    run_pseudo_flat, train_ground, AblationKind, Method, RunRecord, StageData,
};
use aerodistill::metrics::{aggregate, evaluate_frames, per_category_table, rai, MetricsRow};
use aerodistill::pixelmodel::{load_checkpoint, save_checkpoint, ModelParams};
use aerodistill::pnm::write_pgm;
use aerodistill::sample_ladder;
use aerodistill::scenegen::{generate_dataset, generate_random_height_testset, CameraSpec, Preset, WorldSpec};
use aerodistill::{Error, Palette};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{parse_lambda, RunConfig};
use crate::manifest::{load_dataset, palette_entries, write_sequence, Dataset, Manifest, MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(name = "aerodistill", version, about = "Ground-to-aerial progressive self-distillation on synthetic data")]
pub struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run configuration file (JSON); flags given on the command line override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a multi-height dataset and its manifest.
    Gen(GenArgs),
    /// Train the ground model on the labeled rung.
    TrainGround(TrainArgs),
    /// Progressive distillation up the ladder.
    Distill(DistillArgs),
    /// Flat semi-supervised baselines.
    Baseline(BaselineArgs),
    /// Ablation comparisons.
    Ablate(AblateArgs),
    /// Per-sequence metrics for a checkpoint.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value = "sim")]
    pub preset: String,
    #[arg(long)]
    pub max_height: Option<f64>,
    #[arg(long)]
    pub rungs: Option<usize>,
    #[arg(long, default_value_t = 40)]
    pub frames: usize,
    /// Frames in the random-height test split; 0 skips it.
    #[arg(long, default_value_t = 30)]
    pub random_frames: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest or its directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Existing ground checkpoint to start from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub ground_steps: Option<usize>,
    #[arg(long)]
    pub stage_steps: Option<usize>,
    /// `linear` or `const:<value>`.
    #[arg(long, value_parser = parse_lambda)]
    pub lambda: Option<aerodistill::curriculum::LambdaSchedule>,
    #[arg(long)]
    pub fresh_init: bool,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Use every `interval`-th rung above the ground one.
    #[arg(long)]
    pub interval: Option<usize>,
    #[arg(long)]
    pub no_mixview: bool,
    #[arg(long)]
    pub no_nnpl: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineMethod {
    Pseudo,
    Classmix,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_enum)]
    pub method: BaselineMethod,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AblateKindArg {
    Interval,
    NoMixview,
    NoNnpl,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_enum)]
    pub kind: AblateKindArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Baseline checkpoint; adds a relative-improvement column.
    #[arg(long)]
    pub against: Option<PathBuf>,
    /// Comma-separated sequence ids; defaults to the ladder rungs above the ground one.
    #[arg(long, value_delimiter = ',')]
    pub sequences: Vec<String>,
    /// Also write per-class pixel shares and IoU.
    #[arg(long)]
    pub per_category: bool,
    /// Output file stem; defaults to the checkpoint's.
    #[arg(long)]
    pub name: Option<String>,
}

/// Process exit code for an error: 1 usage/validation, 2 IO, 3 numeric failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NumericFailure(_) => 3,
                Error::Io(_) | Error::Format { .. } | Error::DataCorruption(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return 2;
        }
    }
    1
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(args) => cmd_gen(&cli, args),
        Command::TrainGround(args) => cmd_train_ground(&cli, args),
        Command::Distill(args) => cmd_distill(&cli, args),
        Command::Baseline(args) => cmd_baseline(&cli, args),
        Command::Ablate(args) => cmd_ablate(&cli, args),
        Command::Eval(args) => cmd_eval(&cli, args),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(Error::from).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).map_err(Error::from).with_context(|| format!("writing {}", path.display()))
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

pub fn cmd_gen(cli: &Cli, args: &GenArgs) -> Result<()> {
    let preset: Preset = args.preset.parse()?;
    let (default_max, default_rungs) = preset.default_ladder();
    let max_height = args.max_height.unwrap_or(default_max);
    let rungs = args.rungs.unwrap_or(default_rungs);
    if args.frames == 0 {
        return Err(usage("--frames must be at least 1"));
    }
    let seed = cli.seed.unwrap_or(7);
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    let ladder = sample_ladder(max_height, rungs)?;
    let camera = CameraSpec::desk_default(ladder.ground_height_m());
    let world = WorldSpec::preset(preset, seed);
    let sequences = generate_dataset(&world, &ladder, args.frames, &camera)?;

    fs::create_dir_all(&out).map_err(Error::from).with_context(|| format!("creating {}", out.display()))?;
    let mut entries = Vec::new();
    for seq in &sequences {
        entries.push(write_sequence(&out, seq, false)?);
    }
    if args.random_frames > 0 && rungs > 1 {
        let range = (ladder.heights_m()[1], max_height);
        let test = generate_random_height_testset(&world, range, args.random_frames, &camera)?;
        entries.push(write_sequence(&out, &test, true)?);
    }
    let manifest = Manifest {
        name: format!("{}-h{}-n{}", args.preset, max_height, rungs),
        preset,
        seed,
        camera,
        palette: palette_entries(&preset.palette()),
        sequences: entries,
    };
    write_file(&out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("wrote {} sequences to {}", manifest.sequences.len(), out.display());
    Ok(())
}

/// Defaults, then the config file, then explicit flags.
fn resolve_config(cli: &Cli, train: &TrainArgs, method: Method) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.method = method;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(data) = &train.data {
        cfg.dataset = data.clone();
    }
    if let Some(init) = &train.init {
        cfg.init = Some(init.clone());
    }
    if let Some(n) = train.ground_steps {
        cfg.ground.iterations = n;
    }
    if let Some(n) = train.stage_steps {
        cfg.stage.iterations = n;
    }
    if let Some(l) = train.lambda {
        cfg.stage.lambda = l;
    }
    cfg.fresh_init |= train.fresh_init;
    cfg.curriculum()?;
    Ok(cfg)
}

/// A run directory with its standard layout.
struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn create(root: &Path) -> Result<Self> {
        for sub in ["configs", "checkpoints", "pseudo", "metrics", "logs"] {
            fs::create_dir_all(root.join(sub)).map_err(Error::from).with_context(|| format!("creating {}", root.display()))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    fn path(&self, sub: &str, name: &str) -> PathBuf {
        self.root.join(sub).join(name)
    }

    fn checkpoint(&self, name: &str, model: &ModelParams) -> Result<String> {
        let rel = format!("checkpoints/{name}");
        save_checkpoint(self.root.join(&rel), model).with_context(|| format!("writing {rel}"))?;
        Ok(rel)
    }
}

#[derive(Serialize)]
struct RecordFile<'a> {
    manifest_sha256: &'a str,
    record: &'a RunRecord,
}

fn write_record(dir: &RunDir, name: &str, dataset: &Dataset, record: &RunRecord) -> Result<()> {
    for stage in &record.stages {
        let csv = loss_csv(&stage.rows);
        write_file(&dir.path("logs", &format!("{}_N_{:02}_loss.csv", record.method, stage.stage)), csv)?;
    }
    let file = RecordFile { manifest_sha256: &dataset.sha256, record };
    write_file(&dir.path("logs", &format!("{name}_record.json")), serde_json::to_string_pretty(&file)? + "\n")
}

fn check_classes(model: &ModelParams, palette: &Palette) -> Result<()> {
    if model.arch().classes != palette.len() {
        return Err(usage(format!(
            "checkpoint has {} classes but the dataset palette has {}",
            model.arch().classes,
            palette.len()
        )));
    }
    Ok(())
}

/// Loads `cfg.init` or trains (and saves) the ground model.
fn ground_model(cfg: &RunConfig, dataset: &Dataset, data: &StageData, dir: &RunDir) -> Result<ModelParams> {
    let palette = dataset.manifest.palette()?;
    if let Some(path) = &cfg.init {
        let model = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        check_classes(&model, &palette)?;
        return Ok(model);
    }
    let (model, mut record) = train_ground(&data.ground, palette.len(), &cfg.curriculum()?)?;
    record.checkpoints.push(dir.checkpoint("N_01.ckpt", &model)?);
    write_record(dir, "ground_only", dataset, &record)?;
    Ok(model)
}

struct Prepared {
    cfg: RunConfig,
    dataset: Dataset,
    ladder: Vec<aerodistill::scenegen::GeneratedSequence>,
    data: StageData,
    dir: RunDir,
}

fn prepare(cfg: RunConfig, command: &str) -> Result<Prepared> {
    let dataset = load_dataset(&cfg.dataset)?;
    let ladder = dataset.ladder_sequences()?;
    let data = StageData::from_sequences(&ladder)?;
    let dir = RunDir::create(&cfg.out)?;
    write_file(&dir.path("configs", &format!("{command}.json")), cfg.to_json())?;
    Ok(Prepared { cfg, dataset, ladder, data, dir })
}

pub fn cmd_train_ground(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(cli, args, Method::GroundOnly)?;
    if cfg.init.is_some() {
        return Err(usage("train-ground does not take --init"));
    }
    let p = prepare(cfg, "train-ground")?;
    let model = ground_model(&p.cfg, &p.dataset, &p.data, &p.dir)?;
    let palette = p.dataset.manifest.palette()?;
    write_metrics(&p.dir, "ground_only", &palette, &evaluate_sequences(&model, &p.ladder[1..])?, None)?;
    println!("ground model written to {}", p.dir.path("checkpoints", "N_01.ckpt").display());
    Ok(())
}

pub fn cmd_distill(cli: &Cli, args: &DistillArgs) -> Result<()> {
    let mut cfg = resolve_config(cli, &args.train, Method::Progressive)?;
    if let Some(k) = args.interval {
        cfg.interval = k;
    }
    cfg.no_mixview |= args.no_mixview;
    cfg.no_nnpl |= args.no_nnpl;
    cfg.curriculum()?;
    let p = prepare(cfg, "distill")?;
    let n1 = ground_model(&p.cfg, &p.dataset, &p.data, &p.dir)?;
    let rungs = interval_rungs(p.ladder.len(), p.cfg.interval)?;
    let data = p.data.restrict(&rungs)?;
    let outcome = run_progressive(&n1, &data, &p.cfg.curriculum()?)?;

    let mut record = outcome.record;
    for (stage, model) in &outcome.stage_models {
        record.checkpoints.push(p.dir.checkpoint(&format!("N_{stage:02}.ckpt"), model)?);
    }
    for set in &outcome.initial_pseudo {
        let seq = &p.ladder[set.rung];
        let folder = format!("N_{:02}_by_{}", set.rung + 1, set.producer);
        for item in &set.items {
            let path = p.dir.root.join("pseudo").join(&folder).join(format!("{}_{:04}.pgm", seq.id, item.sample_id));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(Error::from)?;
            }
            write_pgm(&path, &item.label)?;
        }
    }
    write_record(&p.dir, "progressive", &p.dataset, &record)?;
    let palette = p.dataset.manifest.palette()?;
    let rows = evaluate_sequences(&outcome.model, &p.ladder[1..])?;
    write_metrics(&p.dir, "progressive", &palette, &rows, None)?;
    println!("{} stages trained; rungs {:?}", outcome.stage_models.len(), rungs.iter().map(|r| r + 1).collect::<Vec<_>>());
    Ok(())
}

pub fn cmd_baseline(cli: &Cli, args: &BaselineArgs) -> Result<()> {
    let method = match args.method {
        BaselineMethod::Pseudo => Method::PseudoFlat,
        BaselineMethod::Classmix => Method::ClassmixFlat,
    };
    let cfg = resolve_config(cli, &args.train, method)?;
    let p = prepare(cfg, &format!("baseline-{method}"))?;
    let n1 = ground_model(&p.cfg, &p.dataset, &p.data, &p.dir)?;
    let curriculum = p.cfg.curriculum()?;
    let (model, mut record) = match method {
        Method::PseudoFlat => run_pseudo_flat(&n1, &p.data, &curriculum)?,
        _ => run_classmix_flat(&n1, &p.data, &curriculum)?,
    };
    record.checkpoints.push(p.dir.checkpoint(&format!("{method}.ckpt"), &model)?);
    write_record(&p.dir, &method.to_string(), &p.dataset, &record)?;
    let palette = p.dataset.manifest.palette()?;
    write_metrics(&p.dir, &method.to_string(), &palette, &evaluate_sequences(&model, &p.ladder[1..])?, None)?;
    println!("{method} finished");
    Ok(())
}

pub fn cmd_ablate(cli: &Cli, args: &AblateArgs) -> Result<()> {
    let kind = match args.kind {
        AblateKindArg::Interval => AblationKind::Interval,
        AblateKindArg::NoMixview => AblationKind::NoMixview,
        AblateKindArg::NoNnpl => AblationKind::NoNnpl,
    };
    let cfg = resolve_config(cli, &args.train, Method::Progressive)?;
    let name = format!("ablate-{}", serde_json::to_value(kind)?.as_str().unwrap_or("kind"));
    let p = prepare(cfg, &name)?;
    let n1 = ground_model(&p.cfg, &p.dataset, &p.data, &p.dir)?;
    let table = run_ablation(kind, &n1, &p.data, &p.ladder[1..], &p.cfg.curriculum()?)?;

    let mut csv = String::from("variant");
    for row in &table[0].rows {
        csv.push_str(&format!(",{}", row.sequence));
    }
    csv.push_str(",mean,std\n");
    for row in &table {
        csv.push_str(&row.name);
        for r in &row.rows {
            csv.push_str(&format!(",{:.6}", r.miou));
        }
        csv.push_str(&format!(",{:.6},{:.6}\n", row.mean, row.std));
        println!("{:<14} mean {:.4} std {:.4}", row.name, row.mean, row.std);
    }
    write_file(&p.dir.path("metrics", &format!("{}.csv", name.replace('-', "_"))), csv)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

/// `sequence,height,<classes>,miou[,rai_pct]` plus `mean` and `std` footer rows.
pub fn metrics_csv(palette: &Palette, rows: &[MetricsRow], baseline: Option<&[MetricsRow]>) -> Result<String> {
    let mut out = String::from("sequence,height");
    for name in palette.names() {
        out.push_str(&format!(",{name}"));
    }
    out.push_str(",miou");
    if baseline.is_some() {
        out.push_str(",rai_pct");
    }
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&format!("{},{}", row.sequence, row.height_m));
        for v in &row.per_class {
            out.push_str(&format!(",{}", fmt_opt(*v)));
        }
        out.push_str(&format!(",{:.6}", row.miou));
        if let Some(base) = baseline {
            out.push_str(&format!(",{:.3}", rai(row.miou, base[i].miou)?));
        }
        out.push('\n');
    }
    let mious: Vec<f64> = rows.iter().map(|r| r.miou).collect();
    let (mean, std) = aggregate(&mious)?;
    let blanks = ",".repeat(palette.len() + 1);
    out.push_str(&format!("mean{blanks},{mean:.6}"));
    if let Some(base) = baseline {
        let base_mean = aggregate(&base.iter().map(|r| r.miou).collect::<Vec<_>>())?.0;
        out.push_str(&format!(",{:.3}", rai(mean, base_mean)?));
    }
    out.push('\n');
    out.push_str(&format!("std{blanks},{std:.6}"));
    if baseline.is_some() {
        out.push(',');
    }
    out.push('\n');
    Ok(out)
}

fn write_metrics(dir: &RunDir, name: &str, palette: &Palette, rows: &[MetricsRow], baseline: Option<&[MetricsRow]>) -> Result<()> {
    write_file(&dir.path("metrics", &format!("{name}.csv")), metrics_csv(palette, rows, baseline)?)
}

pub fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let palette = dataset.manifest.palette()?;
    let model = load_checkpoint(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    check_classes(&model, &palette)?;
    let baseline = match &args.against {
        Some(path) => {
            let m = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            check_classes(&m, &palette)?;
            Some(m)
        }
        None => None,
    };
    let ids: Vec<String> = if args.sequences.is_empty() {
        dataset.manifest.training_sequences().skip(1).map(|s| s.id.clone()).collect()
    } else {
        args.sequences.clone()
    };
    let sequences = dataset.sequences_named(&ids)?;
    let name = args
        .name
        .clone()
        .or_else(|| args.checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "eval".into());
    let dir = RunDir::create(&cli.out.clone().unwrap_or_else(|| PathBuf::from("run")))?;

    let ours = comparison_row(&name, &model, &sequences)?;
    let base = baseline.as_ref().map(|m| evaluate_sequences(m, &sequences)).transpose()?;
    write_metrics(&dir, &format!("eval_{name}"), &palette, &ours.rows, base.as_deref())?;
    println!("{name}: mean IoU {:.4} (std {:.4}) over {} sequences", ours.mean, ours.std, ours.rows.len());

    if args.per_category {
        let frames = || sequences.iter().flat_map(|s| s.frames.iter().map(|(i, l)| (i, l)));
        let mut counts = vec![evaluate_frames(&model, frames())?];
        if let Some(m) = &baseline {
            counts.push(evaluate_frames(m, frames())?);
        }
        let lines = per_category_table(&palette, &counts)?;
        let mut csv = format!("class,share,iou_{name}");
        if baseline.is_some() {
            csv.push_str(",iou_against");
        }
        csv.push('\n');
        for line in lines {
            csv.push_str(&format!("{},{:.6}", line.class, line.share));
            for v in line.iou {
                csv.push_str(&format!(",{}", fmt_opt(v)));
            }
            csv.push('\n');
        }
        write_file(&dir.path("metrics", &format!("eval_{name}_categories.csv")), csv)?;
    }
    Ok(())
}
