use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ucowod::harness::io::{self, fixed6, GroundTruthFile};
use ucowod::harness::{self, Dataset, RunConfig, ToyHead};
use ucowod::metrics::{evaluate, EvalConfig, DEFAULT_IOU_THRESHOLD, DEFAULT_SCORE_THRESHOLD};

/// Open-world detection harness: simulate data, train the toy head, refine
/// unknown clusters and evaluate detections.
#[derive(Parser, Debug)]
#[command(name = "ucowod", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score a detections file against a ground-truth file.
    Eval(EvalArgs),
    /// Generate a synthetic dataset and its test ground truth.
    Simulate(SimulateArgs),
    /// Train the head on a simulated dataset.
    Train(TrainArgs),
    /// Detect on the test split and refine unknown clusters.
    Refine(RefineArgs),
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Ground-truth JSON file.
    #[arg(long)]
    gt: PathBuf,
    /// Detections JSON Lines file.
    #[arg(long)]
    det: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    iou_thresh: f64,
    #[arg(long, default_value_t = DEFAULT_SCORE_THRESHOLD)]
    score_thresh: f64,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON file overriding run-config defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory; receives `dataset.json` and `gt.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset written by `simulate`.
    #[arg(long)]
    data: PathBuf,
    /// Path of the trained head (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RefineArgs {
    /// JSON file overriding run-config defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the refinement (k-means) seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset written by `simulate`.
    #[arg(long)]
    data: PathBuf,
    /// Head written by `train`.
    #[arg(long)]
    head: PathBuf,
    /// Refined detections (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    /// Also write the detections before refinement here.
    #[arg(long)]
    raw_out: Option<PathBuf>,
}

enum CliError {
    Io(PathBuf, std::io::Error),
    Schema(String),
    Run(ucowod::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(..) => 1,
            CliError::Schema(_) => 2,
            CliError::Run(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(path, e) => write!(f, "{}: {e}", path.display()),
            CliError::Schema(msg) => write!(f, "{msg}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<ucowod::Error> for CliError {
    fn from(e: ucowod::Error) -> Self {
        match e {
            ucowod::Error::Schema(msg) => CliError::Schema(msg),
            ucowod::Error::InvalidConfig(msg) => CliError::Schema(format!("invalid config: {msg}")),
            other => CliError::Run(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(path.to_owned(), e))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Io(path.to_owned(), e))
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_json(&read(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn eval(args: &EvalArgs) -> CliResult<()> {
    let gt = io::parse_ground_truth(&read(&args.gt)?)?;
    let dets = io::parse_detections(&read(&args.det)?, &gt.label_space())?;
    let config = EvalConfig {
        iou_threshold: args.iou_thresh,
        score_threshold: args.score_thresh,
    };
    let report = evaluate(&gt.objects(), &dets, &config)?;
    if report.wi_undefined {
        log::warn!("no known detections; wilderness impact reported as 0");
    }
    let echo = json!({
        "iou_threshold": fixed6(config.iou_threshold),
        "score_threshold": fixed6(config.score_threshold),
        "known_count": gt.known_count,
        "unknown_slots": gt.unknown_slots,
    });
    let text = io::report_json(&report, echo);
    match &args.out {
        Some(path) => write(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = load_config(&args.common)?;
    let dataset = harness::generate_dataset(&cfg, cfg.seed)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::Io(args.out.clone(), e))?;
    let data = serde_json::to_string(&dataset).expect("dataset serializes");
    write(&args.out.join("dataset.json"), &data)?;
    write(&args.out.join("gt.json"), &GroundTruthFile::from_dataset(&dataset).to_json())?;
    log::info!(
        "wrote {} train and {} test scenes to {}",
        dataset.train.len(),
        dataset.test.len(),
        args.out.display()
    );
    Ok(())
}

fn train(args: &TrainArgs) -> CliResult<()> {
    let cfg = load_config(&args.common)?;
    let dataset: Dataset = load_json(&args.data)?;
    dataset.validate()?;
    let outcome = harness::train(&cfg, &dataset)?;
    write(&args.out, &serde_json::to_string(&outcome.head).expect("head serializes"))
}

fn refine(args: &RefineArgs) -> CliResult<()> {
    let mut cfg = load_config(&Common {
        config: args.config.clone(),
        seed: None,
    })?;
    if let Some(seed) = args.seed {
        cfg.refine.seed = seed;
    }
    let dataset: Dataset = load_json(&args.data)?;
    dataset.validate()?;
    let head: ToyHead = load_json(&args.head)?;
    if let Some(path) = &args.raw_out {
        let raw = harness::detect(&head, &dataset.test, &cfg.label_space(), cfg.detection_nms)?;
        let mut dets = harness::train::plain_detections(&raw);
        io::sort_detections(&mut dets);
        write(path, &io::detections_to_jsonl(&dets)?)?;
    }
    let refined = harness::refine_pipeline(&head, &dataset, &cfg)?;
    let mut dets = harness::train::plain_detections(&refined.detections);
    io::sort_detections(&mut dets);
    write(&args.out, &io::detections_to_jsonl(&dets)?)
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("UCOWOD_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Schema(format!("UCOWOD_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Schema(format!("cannot size thread pool: {e}")))
}

fn run(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    match &cli.command {
        Command::Eval(a) => eval(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Refine(a) => refine(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
