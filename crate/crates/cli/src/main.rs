//! `zone`: batch front end over the editing pipeline. Each subcommand reads
//! files, runs one operation and writes new files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zone_core::attention::{average_maps, binarize_location, LocalizerConfig};
use zone_core::classifier::{self, BlobSpec, ClassifierParams, Dataset, TrainConfig};
use zone_core::compositor::metrics::{masked_pixel_metrics, pixel_metrics};
use zone_core::compositor::{composite_images, EditSession};
use zone_core::denoise::EditAction;
use zone_core::fixtures::{self, FixtureSpec, Region};
use zone_core::io;
use zone_core::pipeline::{self, ConfigOverrides, EditManifest, PipelineConfig};
use zone_core::refine::{read_segment_dir, refine};
use zone_core::smoother::{smooth, SmootherConfig};
use zone_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "zone",
    version,
    about = "Instruction-guided local image editing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full edit and write session/, final.png and report.json
    Run(RunArgs),
    /// Binarize averaged attention into a location mask
    Localize(LocalizeArgs),
    /// Pick the segment with the best Region-IoU against a location mask
    Refine(RefineArgs),
    /// Clean a refined mask's edges against the original
    Smooth(SmoothArgs),
    /// Stack hard-alpha layers over a base image
    Composite(CompositeArgs),
    /// Predict the edit action of an instruction embedding
    Classify(ClassifyArgs),
    /// Train the action classifier on an embedding dataset
    TrainClassifier(TrainArgs),
    /// L1/L2 pixel distance between two images
    Metrics(MetricsArgs),
    /// Synthetic inputs for testing without a model
    #[command(subcommand)]
    Fixtures(FixturesCommand),
    /// Inspect and edit a saved layer session
    #[command(subcommand)]
    Session(SessionCommand),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    instruction: String,
    /// Edit manifest JSON
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON config file; falls back to $ZONE_CONFIG
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_riou: Option<f64>,
    #[arg(long)]
    invert_localization: bool,
}

#[derive(Args)]
struct LocalizeArgs {
    /// Edit manifest; only its attention list is read
    #[arg(long)]
    manifest: PathBuf,
    /// Image whose size the mask takes
    #[arg(long)]
    size_of: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = LocalizerConfig::DEFAULT_THRESHOLD)]
    threshold: u8,
    #[arg(long)]
    invert: bool,
}

#[derive(Args)]
struct RefineArgs {
    /// Segment directory with segments.json
    #[arg(long)]
    segments: PathBuf,
    #[arg(long)]
    location: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SmoothArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    canvas: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SmootherConfig::default().cutoff)]
    cutoff: f64,
    #[arg(long, default_value_t = SmootherConfig::default().dilation_radius)]
    dilation_radius: usize,
    #[arg(long, default_value_t = SmootherConfig::default().g_threshold)]
    g_threshold: f64,
    #[arg(long, default_value_t = SmootherConfig::default().closing_radius)]
    closing_radius: usize,
}

#[derive(Args)]
struct CompositeArgs {
    #[arg(long)]
    base: PathBuf,
    /// RGBA layers, bottom first
    #[arg(long = "layer")]
    layers: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Parameter directory with classifier.json
    #[arg(long)]
    params: PathBuf,
    /// 1xD embedding tensor
    #[arg(long)]
    embedding: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory with train/test .ztf and .labels files
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = classifier::HIDDEN_DIM)]
    hidden: usize,
}

#[derive(Args)]
struct MetricsArgs {
    a: PathBuf,
    b: PathBuf,
    /// Restrict to pixels set in this mask
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// Write one synthetic edit case
    Generate(GenerateArgs),
    /// Write a labeled embedding dataset
    Dataset(DatasetArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    size: usize,
    /// square:TOP,LEFT,SIDE or disk:CY,CX,RADIUS
    #[arg(long, value_parser = parse_region)]
    region: Option<Region>,
    #[arg(long, default_value = "change", value_parser = parse_action)]
    action: EditAction,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 150)]
    train_per_class: usize,
    #[arg(long, default_value_t = 50)]
    test_per_class: usize,
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Print layers bottom to top
    List { dir: PathBuf },
    /// Drop a layer and save the session to --out
    Remove {
        dir: PathBuf,
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Move a layer to a new stack position and save to --out
    Reorder {
        dir: PathBuf,
        name: String,
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the composite of a session
    Flatten {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_action(s: &str) -> std::result::Result<EditAction, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_region(s: &str) -> std::result::Result<Region, String> {
    let (kind, rest) = s.split_once(':').ok_or("expected KIND:A,B,C")?;
    let nums: Vec<f64> = rest
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [a, b, c] = nums[..] else {
        return Err("expected three numbers".into());
    };
    match kind {
        "square" => {
            if [a, b, c].iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
                return Err("square values must be non-negative integers".into());
            }
            Ok(Region::square(a as usize, b as usize, c as usize))
        }
        "disk" => Ok(Region::Disk {
            cy: a,
            cx: b,
            radius: c,
        }),
        other => Err(format!("unknown region kind {other:?}")),
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => other.at_stage(name),
    })
}

/// `println!` that exits quietly when stdout is closed, e.g. piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {
        emit(format_args!($($arg)*))
    };
}

fn emit(args: std::fmt::Arguments) {
    if let Err(e) = writeln!(std::io::stdout().lock(), "{args}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: stdout: {e}");
        std::process::exit(1);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => stage("run", cmd_run(a)),
        Command::Localize(a) => stage("localize", cmd_localize(a)),
        Command::Refine(a) => stage("refine", cmd_refine(a)),
        Command::Smooth(a) => stage("smooth", cmd_smooth(a)),
        Command::Composite(a) => stage("composite", cmd_composite(a)),
        Command::Classify(a) => stage("classify", cmd_classify(a)),
        Command::TrainClassifier(a) => stage("train-classifier", cmd_train(a)),
        Command::Metrics(a) => stage("metrics", cmd_metrics(a)),
        Command::Fixtures(c) => stage("fixtures", cmd_fixtures(c)),
        Command::Session(c) => stage("session", cmd_session(c)),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let config_path = a
        .config
        .or_else(|| std::env::var_os("ZONE_CONFIG").map(PathBuf::from));
    let file = config_path.as_deref().map(read_file).transpose()?;
    let overrides = ConfigOverrides {
        seed: a.seed,
        min_riou: a.min_riou,
        invert_localization: a.invert_localization.then_some(true),
    };
    let config = stage(
        "config",
        PipelineConfig::layered(file.as_deref(), std::env::vars(), &overrides),
    )?;
    let report = pipeline::run_edit(&a.original, &a.instruction, &a.manifest, &config, &a.out)?;
    eprintln!("{}", report.summary());
    for t in &report.timings {
        eprintln!("  {:<10} {:>9.2} ms", t.stage, t.millis);
    }
    out!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_localize(a: LocalizeArgs) -> Result<()> {
    let manifest = EditManifest::parse(&read_file(&a.manifest)?)?;
    let dir = a.manifest.parent().unwrap_or(Path::new("."));
    let mut attention = zone_core::attention::AttentionCollection::default();
    for entry in &manifest.attention {
        attention.push(
            entry.step,
            entry.block.clone(),
            io::read_tensor(dir.join(&entry.path))?.into_grid3()?,
        );
    }
    let (h, w) = io::read_image(&a.size_of)?.dims();
    let config = LocalizerConfig {
        threshold: a.threshold,
        target_h: h,
        target_w: w,
        invert: a.invert,
    };
    let mask = binarize_location(&average_maps(&attention, &config)?, &config)?;
    io::write_mask(&mask, &a.out)?;
    out!("area {}", mask.count());
    Ok(())
}

fn cmd_refine(a: RefineArgs) -> Result<()> {
    let segments = read_segment_dir(&a.segments)?;
    let location = io::read_mask(&a.location)?;
    let r = refine(&segments, &location)?;
    if let Some(out) = &a.out {
        io::write_mask(&r.mask, out)?;
    }
    out!("index {}", r.index);
    out!("score {:.6}", r.score);
    Ok(())
}

fn cmd_smooth(a: SmoothArgs) -> Result<()> {
    let config = SmootherConfig {
        cutoff: a.cutoff,
        dilation_radius: a.dilation_radius,
        g_threshold: a.g_threshold,
        closing_radius: a.closing_radius,
    };
    let mask = smooth(
        &io::read_image(&a.original)?,
        &io::read_image(&a.canvas)?,
        &io::read_mask(&a.mask)?,
        &config,
    )?;
    io::write_mask(&mask, &a.out)?;
    out!("area {}", mask.count());
    Ok(())
}

fn cmd_composite(a: CompositeArgs) -> Result<()> {
    let base = io::read_image(&a.base)?;
    let layers = a
        .layers
        .iter()
        .map(io::read_image)
        .collect::<Result<Vec<_>>>()?;
    io::write_image(&composite_images(&base, &layers)?, &a.out)
}

fn cmd_classify(a: ClassifyArgs) -> Result<()> {
    let params = ClassifierParams::load(&a.params)?;
    let embedding = pipeline::read_embedding(&a.embedding)?;
    out!("{}", classifier::classify(&params, &embedding)?);
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let config = TrainConfig {
        epochs: a.epochs,
        hidden_dim: a.hidden,
        seed: a.seed,
        adam: classifier::AdamConfig {
            learning_rate: a.lr,
            ..classifier::AdamConfig::default()
        },
    };
    let (params, report) = classifier::train(&data, &config)?;
    params.save(&a.out)?;
    for (epoch, loss) in report.losses.iter().enumerate() {
        out!("epoch {epoch} loss {loss:.6}");
    }
    out!("train_top1 {:.4}", report.train_top1);
    out!("test_top1 {:.4}", report.test_top1);
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let (x, y) = (io::read_image(&a.a)?, io::read_image(&a.b)?);
    let m = match &a.mask {
        Some(mask) => masked_pixel_metrics(&x, &y, &io::read_mask(mask)?)?,
        None => pixel_metrics(&x, &y)?,
    };
    out!("l1={} l2={}", m.l1, m.l2);
    Ok(())
}

fn cmd_fixtures(c: FixturesCommand) -> Result<()> {
    match c {
        FixturesCommand::Generate(a) => {
            let mut spec = FixtureSpec {
                height: a.size,
                width: a.size,
                action: a.action,
                seed: a.seed,
                ..FixtureSpec::default()
            };
            spec.region = match a.region {
                Some(r) => r,
                None => {
                    let side = (a.size / 8).max(2);
                    Region::square(a.size * 3 / 8, a.size / 2, side)
                }
            };
            let case = fixtures::write_case(&spec, &a.out)?;
            out!("original {}", case.original.display());
            out!("manifest {}", case.manifest.display());
            out!("instruction {}", case.instruction);
        }
        FixturesCommand::Dataset(a) => {
            let spec = BlobSpec {
                train_per_class: a.train_per_class,
                test_per_class: a.test_per_class,
                ..BlobSpec::default()
            };
            let data = fixtures::write_dataset(&a.out, &spec, a.seed)?;
            out!("train {} test {}", data.train.len(), data.test.len());
        }
    }
    Ok(())
}

fn cmd_session(c: SessionCommand) -> Result<()> {
    match c {
        SessionCommand::List { dir } => {
            let s = EditSession::load(&dir)?;
            for (i, l) in s.layers().iter().enumerate() {
                out!(
                    "{i}\t{}\t{}\t{}\t{}",
                    l.name(),
                    l.meta.action,
                    l.mask.count(),
                    l.meta.instruction
                );
            }
        }
        SessionCommand::Remove { dir, name, out } => {
            let mut s = EditSession::load(&dir)?;
            s.remove_layer(&name)?;
            s.save(&out)?;
        }
        SessionCommand::Reorder {
            dir,
            name,
            index,
            out,
        } => {
            let mut s = EditSession::load(&dir)?;
            s.reorder(&name, index)?;
            s.save(&out)?;
        }
        SessionCommand::Flatten { dir, out } => {
            io::write_image(&EditSession::load(&dir)?.flatten()?, &out)?;
        }
    }
    Ok(())
}
