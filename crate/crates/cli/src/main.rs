use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tubelet_core::config::{Ablation, Fusion, PipelineConfig, TrackerKind};
use tubelet_core::dataio::{self, DatasetManifest, Schema};
use tubelet_core::eval::{self, EvalReport};
use tubelet_core::oracles;
use tubelet_core::perturb::{Combine, Scheme};
use tubelet_core::pipeline::{self, files, ScoreSource, Stage};
use tubelet_core::tcn::TcnModel;
use tubelet_core::{Detection, Error, Tubelet};

#[derive(Parser)]
#[command(
    name = "tubelet",
    version,
    about = "Tubelet proposal, pooling and temporal re-scoring for video object detection"
)]
struct Cli {
    /// Pipeline config: `default` or a TOML file. Flags override it.
    #[arg(long, global = true, default_value = "default")]
    config: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the manifest, ground truth and proposals.
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop low-scoring proposals and score the rest for every class.
    Filter {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        threshold: Option<f64>,
        /// Output directory for filtered proposals and detections.
        #[arg(long)]
        out: PathBuf,
    },
    /// Track from anchor detections into tubelets.
    Propose {
        #[command(flatten)]
        data: DataArgs,
        /// Scored detections from `filter`.
        #[arg(long)]
        detections: PathBuf,
        /// Filtered proposals, needed by the iou_chain tracker.
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[arg(long, value_enum)]
        tracker: Option<TrackerArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perturb tubelet boxes and max-pool by detector score.
    PerturbPool {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        tubelets: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// Scheme such as `R(20,0.2)` or `O(0.5)`; repeat to combine.
        #[arg(long = "scheme")]
        schemes: Vec<Scheme>,
        #[arg(long, value_enum)]
        combine: Option<CombineArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Temporal convolutional network training and re-scoring.
    Tcn {
        #[command(subcommand)]
        command: TcnCommand,
    },
    /// Evaluation of detections or tubelets against ground truth.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// End-to-end runs.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
}

#[derive(Subcommand)]
enum TcnCommand {
    /// Train one model per class on tubelets labelled against ground truth.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        tubelets: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, one `<class>.tcn` per class.
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach per-box TCN scores to tubelets.
    Rescore {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        tubelets: PathBuf,
        /// Directory written by `tcn train`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Mean average precision.
    Map {
        #[command(flatten)]
        input: EvalInput,
        #[arg(long)]
        iou: Option<f64>,
    },
    /// Correct localization over annotated frames.
    Corloc {
        #[command(flatten)]
        input: EvalInput,
    },
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Run every stage, or resume from one.
    Run {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Existing dataset manifest; a synthetic world is generated otherwise.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// First stage to run; earlier outputs are read from `--out`.
        #[arg(long, default_value = "simulate")]
        from: Stage,
        #[arg(long, value_enum)]
        ablation: Option<AblationArg>,
        #[arg(long, value_enum)]
        tracker: Option<TrackerArg>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset manifest.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct EvalInput {
    #[command(flatten)]
    data: DataArgs,
    /// Detection records to evaluate.
    #[arg(long, conflicts_with = "tubelets", required_unless_present = "tubelets")]
    detections: Option<PathBuf>,
    /// Tubelet records to evaluate, one detection per box.
    #[arg(long)]
    tubelets: Option<PathBuf>,
    /// Which tubelet score to rank by.
    #[arg(long, value_enum, default_value = "det")]
    score: ScoreArg,
    #[arg(long, default_value = "eval")]
    label: String,
    /// Report records are written here; the table goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrackerArg {
    GtFollow,
    IouChain,
}

impl From<TrackerArg> for TrackerKind {
    fn from(t: TrackerArg) -> Self {
        match t {
            TrackerArg::GtFollow => TrackerKind::GtFollow,
            TrackerArg::IouChain => TrackerKind::IouChain,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CombineArg {
    Tubelets,
    Candidates,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    Baseline,
    Perturb,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreArg {
    Det,
    Tcn,
    TcnTimesDet,
}

fn load_config(spec: &str) -> tubelet_core::Result<PipelineConfig> {
    if spec == "default" {
        Ok(PipelineConfig::default())
    } else {
        PipelineConfig::load(Path::new(spec))
    }
}

struct Dataset {
    manifest: DatasetManifest,
    schema: Schema,
    gts: Vec<tubelet_core::GroundTruthObject>,
}

impl Dataset {
    fn load(path: &Path) -> tubelet_core::Result<Self> {
        let manifest = dataio::read_manifest(path)?;
        let schema = manifest.schema()?;
        let gts = match manifest.ground_truth {
            Some(_) => dataio::read_ground_truth(&manifest.ground_truth_path()?, &schema)?,
            None => Vec::new(),
        };
        Ok(Self { manifest, schema, gts })
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli.config)?;
    match cli.command {
        Command::Simulate { seed, out } => {
            if let Some(s) = seed {
                cfg.sim.seed = s;
            }
            let world = oracles::generate_world(&cfg.sim)?;
            let manifest = oracles::write_world(&world, &out)?;
            println!("{}", manifest.display());
        }
        Command::Filter { data, threshold, out } => {
            let ds = Dataset::load(&data.manifest)?;
            let detector = pipeline::detector_for(&ds.manifest, &ds.gts)?;
            let proposals = dataio::read_proposals(&ds.manifest.proposals_path()?, &ds.schema)?;
            let threshold = threshold.unwrap_or(cfg.filter.threshold);
            let (kept, dets) = pipeline::with_workers(|| {
                pipeline::filter_and_score(&ds.schema, &proposals, detector.as_ref(), threshold)
            })?;
            create_dir(&out)?;
            dataio::write_proposals(&out.join(files::FILTERED_PROPOSALS), &kept)?;
            dataio::write_detections(&out.join(files::DETECTIONS), &dets, &ds.schema)?;
        }
        Command::Propose { data, detections, proposals, tracker, out } => {
            let ds = Dataset::load(&data.manifest)?;
            let kind = tracker.map_or(cfg.tracker.kind, Into::into);
            let dets = dataio::read_detections(&detections, &ds.schema)?;
            let filtered = match (&proposals, kind) {
                (Some(p), _) => dataio::read_proposals(p, &ds.schema)?,
                (None, TrackerKind::IouChain) => {
                    anyhow::bail!(Error::Config("the iou_chain tracker needs --proposals".into()))
                }
                (None, TrackerKind::GtFollow) => Vec::new(),
            };
            let detector = pipeline::detector_for(&ds.manifest, &ds.gts)?;
            let tracker = pipeline::tracker_for(kind, &ds.manifest, &ds.gts, &filtered)?;
            let tubelets = pipeline::with_workers(|| {
                pipeline::propose_all(&ds.schema, &dets, tracker.as_ref(), detector.as_ref(), &cfg.proposal)
            })??;
            dataio::write_tubelets(&out, &tubelets, &ds.schema)?;
        }
        Command::PerturbPool { data, tubelets, detections, schemes, combine, seed, out } => {
            let ds = Dataset::load(&data.manifest)?;
            if !schemes.is_empty() {
                cfg.perturb.schemes = schemes;
            }
            if let Some(c) = combine {
                cfg.perturb.combine = match c {
                    CombineArg::Tubelets => Combine::Tubelets,
                    CombineArg::Candidates => Combine::Candidates,
                };
            }
            if let Some(s) = seed {
                cfg.perturb.seed = s;
            }
            let tubes = dataio::read_tubelets(&tubelets, &ds.schema)?;
            let dets = dataio::read_detections(&detections, &ds.schema)?;
            let detector = pipeline::detector_for(&ds.manifest, &ds.gts)?;
            let (_, pooled) = pipeline::with_workers(|| {
                pipeline::perturb_all(&tubes, &dets, &ds.schema, detector.as_ref(), &cfg.perturb)
            })??;
            dataio::write_tubelets(&out, &pooled, &ds.schema)?;
        }
        Command::Tcn { command: TcnCommand::Train { data, tubelets, iterations, hidden, seed, out } } => {
            let ds = Dataset::load(&data.manifest)?;
            if let Some(i) = iterations {
                cfg.train.iterations = i;
            }
            if let Some(h) = hidden {
                cfg.train.hidden_channels = h;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.train.validate()?;
            let tubes = dataio::read_tubelets(&tubelets, &ds.schema)?;
            let all: std::collections::BTreeSet<String> = ds.schema.videos().map(|v| v.video_id.clone()).collect();
            let outcomes = pipeline::train_all(&ds.schema, &tubes, &ds.gts, &all, &cfg.train)?;
            create_dir(&out)?;
            for (class, outcome) in ds.schema.classes().iter().zip(&outcomes) {
                match outcome {
                    Some(o) => {
                        o.model.save(&out.join(files::model(class)))?;
                        let last = o.loss_history.last().copied().unwrap_or(f64::NAN);
                        println!("{class}: final loss {last:.6}");
                    }
                    None => println!("{class}: no training windows, no model written"),
                }
            }
        }
        Command::Tcn { command: TcnCommand::Rescore { data, tubelets, models, out } } => {
            let ds = Dataset::load(&data.manifest)?;
            let tubes = dataio::read_tubelets(&tubelets, &ds.schema)?;
            let mut loaded = Vec::new();
            for class in ds.schema.classes() {
                let path = models.join(files::model(class));
                if path.is_file() {
                    loaded.push(Some(TcnModel::load(&path)?));
                } else {
                    eprintln!("note: no model for class `{class}`; using the logistic of the detection score");
                    loaded.push(None);
                }
            }
            let rescored = pipeline::with_workers(|| pipeline::rescore_all(&tubes, &loaded, cfg.train.window_stride))??;
            dataio::write_tubelets(&out, &rescored, &ds.schema)?;
        }
        Command::Eval { command } => {
            let (input, report) = match command {
                EvalCommand::Map { input, iou } => {
                    let iou = iou.unwrap_or(cfg.eval.iou);
                    let (ds, dets) = eval_inputs(&input)?;
                    let report = eval::mean_ap(&input.label, &dets, &ds.gts, ds.schema.classes(), iou)?;
                    (input, report)
                }
                EvalCommand::Corloc { input } => {
                    let (ds, dets) = eval_inputs(&input)?;
                    let report = eval::corloc_report(&input.label, &dets, &ds.gts, ds.schema.classes())?;
                    (input, report)
                }
            };
            emit_report(&report, input.out.as_deref())?;
        }
        Command::Pipeline { command: PipelineCommand::Run { out, seed, manifest, from, ablation, tracker } } => {
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            if manifest.is_some() {
                cfg.pipeline.manifest = manifest;
            }
            if let Some(a) = ablation {
                cfg.pipeline.ablation = match a {
                    AblationArg::Baseline => Ablation::Baseline,
                    AblationArg::Perturb => Ablation::Perturb,
                    AblationArg::Full => Ablation::Full,
                };
            }
            if let Some(t) = tracker {
                cfg.tracker.kind = t.into();
            }
            let outcome = pipeline::run_pipeline(&cfg, &out, from)?;
            for note in &outcome.notes {
                eprintln!("note: {note}");
            }
            println!("{}", outcome.table());
        }
    }
    Ok(())
}

fn eval_inputs(input: &EvalInput) -> anyhow::Result<(Dataset, Vec<Detection>)> {
    let ds = Dataset::load(&input.data.manifest)?;
    let dets = match (&input.detections, &input.tubelets) {
        (Some(d), _) => dataio::read_detections(d, &ds.schema)?,
        (None, Some(t)) => {
            let tubes: Vec<Tubelet> = dataio::read_tubelets(t, &ds.schema)?;
            let source = match input.score {
                ScoreArg::Det => ScoreSource::Det,
                ScoreArg::Tcn => ScoreSource::Tcn(Fusion::Tcn),
                ScoreArg::TcnTimesDet => ScoreSource::Tcn(Fusion::TcnTimesDet),
            };
            pipeline::tubelet_detections(&tubes, source)
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    Ok((ds, dets))
}

fn emit_report(report: &EvalReport, out: Option<&Path>) -> anyhow::Result<()> {
    if let Some(path) = out {
        dataio::write_reports(path, std::slice::from_ref(report))?;
    }
    println!("{}", report.to_table());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_schema_or_config() => 2,
        Some(Error::NumericalAbort(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
