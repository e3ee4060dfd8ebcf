//! `amsod` — generate synthetic data, train, evaluate, predict and inspect
//! arbitrary-modality saliency models.
//!
//! Exit codes: 0 success, 1 runtime/I-O failure, 2 usage error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use amsod_core::config::{parse_config_file, render_config, FileConfig};
use amsod_core::fusion::FusionMode;
use amsod_core::losses::DistanceFn;
use amsod_core::metrics::{evaluate, EvalMode, FbetaPolicy};
use amsod_core::model::Model;
use amsod_core::pipeline;
use amsod_core::synthdata;
use amsod_core::types::{ComboLabel, ModalityKind, MultimodalSample};
use amsod_core::Error as CoreError;

#[derive(Parser)]
#[command(
    name = "amsod",
    version,
    about = "Arbitrary-modality salient object detection toolkit",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic registered multimodal dataset
    GenerateData(GenerateArgs),
    /// Train a model on a generated dataset
    Train(TrainArgs),
    /// Evaluate a checkpoint in sole or joint mode
    Eval(EvalArgs),
    /// Predict a saliency map from registered input images
    Predict(PredictArgs),
    /// Report parameter counts and forward-cost scaling
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output dataset root directory
    #[arg(long)]
    out: PathBuf,
    /// Training-split sample count
    #[arg(long, default_value_t = 700)]
    n: usize,
    /// Test-split sample count (0 skips the test split)
    #[arg(long, default_value_t = 280)]
    n_test: usize,
    /// Combo mix like `rgb=0.2,d=0.1,rgb-d-t=0.7` (default: uniform over
    /// the seven standard combos); weights must sum to 1
    #[arg(long)]
    mix: Option<String>,
    /// Canvas side length in pixels
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Generation seed
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root (as written by generate-data)
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint and loss history
    #[arg(long)]
    out: PathBuf,
    /// Flat key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fusion plan: `sdfm=1,2 cdfm=3,4`, a table form like `1,2|3,4`, or
    /// `additive` for the element-wise baseline
    #[arg(long)]
    fusion_plan: Option<String>,
    /// Disable the modality-translation contrastive term
    #[arg(long)]
    no_mtc: bool,
    /// Remove the modality prompts (prompt-free backbone)
    #[arg(long)]
    no_prompts: bool,
    /// Training seed (also seeds parameter initialization)
    #[arg(long)]
    seed: Option<u64>,
    /// Phase-1 epochs (full network)
    #[arg(long)]
    epochs: Option<usize>,
    /// Phase-2 epochs (prompt fine-tuning)
    #[arg(long)]
    prompt_epochs: Option<usize>,
    /// Batch size
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Weight decay
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Contrastive distance: euclidean-mean or euclidean-sum
    #[arg(long, default_value = "euclidean-mean")]
    distance: String,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset root
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset split to evaluate
    #[arg(long, default_value = "test")]
    split: String,
    /// sole (per-subset rows) or joint (single pooled row)
    #[arg(long, default_value = "sole")]
    mode: String,
    /// Comma-separated subset list for sole mode, e.g. `rgb,d-t,rgb-d-t`
    #[arg(long)]
    subsets: Option<String>,
    /// F-measure thresholding: sweep (255 uniform thresholds) or adaptive
    /// (2x mean)
    #[arg(long, default_value = "sweep")]
    fbeta_policy: String,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint directory
    #[arg(long)]
    checkpoint: PathBuf,
    /// Registered inputs like `rgb=a.png,d=b.png`
    #[arg(long)]
    inputs: String,
    /// Output path for the primary saliency map (8-bit grayscale PNG)
    #[arg(long)]
    out: PathBuf,
    /// Also write the three auxiliary maps into this directory
    #[arg(long)]
    aux: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint directory (defaults to a freshly initialized model)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Flat key=value config file for a fresh model
    #[arg(long)]
    config: Option<PathBuf>,
    /// Measure forward cost against modality count
    #[arg(long)]
    arity_report: bool,
    /// Timing repetitions per arity
    #[arg(long, default_value_t = 5)]
    reps: usize,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(_) | CoreError::Image(_) | CoreError::Checkpoint(_) => {
                CliError::Runtime(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenerateData(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Inspect(args) => cmd_inspect(args),
    }
}

/// Errors reaching this adapter after argument validation are filesystem
/// problems, except config/parse issues which stay usage errors.
fn runtime_if_io(e: CoreError) -> CliError {
    match e {
        CoreError::InvalidConfig(m) | CoreError::Parse(m) => CliError::Usage(m),
        other => CliError::Runtime(other.to_string()),
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let known = amsod_core::types::default_modalities();
    let mix = match &args.mix {
        None => synthdata::DatasetSpec::uniform(args.n.max(1), args.size, args.seed).mix,
        Some(text) => synthdata::parse_mix(text, &known)?,
    };
    let splits: Vec<(&str, usize, u64)> = if args.n_test > 0 {
        vec![("train", args.n, args.seed), ("test", args.n_test, args.seed.wrapping_add(1))]
    } else {
        vec![("train", args.n, args.seed)]
    };
    for (split, n, seed) in splits {
        let spec = synthdata::DatasetSpec { n, mix: mix.clone(), canvas: args.size, seed };
        let report = synthdata::build_dataset(&args.out, split, &spec).map_err(runtime_if_io)?;
        println!("{split}: {} samples across {} combos", report.n, report.per_combo.len());
        println!("{split}: depth-threshold baseline Fbeta = {:.3}", report.baseline_fbeta);
        if report.baseline_fbeta >= 0.9 {
            eprintln!(
                "warning: trivial baseline reaches Fbeta {:.3}; dataset may be degenerate",
                report.baseline_fbeta
            );
        }
    }
    Ok(())
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => parse_config_file(p).map_err(|e| match e {
            CoreError::Io(io) => CliError::Runtime(io.to_string()),
            other => CliError::Usage(other.to_string()),
        }),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_file_config(args.config.as_deref())?;
    if let Some(plan) = &args.fusion_plan {
        cfg.model.fusion = FusionMode::parse(plan)?;
    }
    if args.no_prompts {
        cfg.model.prompts_enabled = false;
    }
    if args.no_mtc {
        cfg.train.mtc_enabled = false;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(pe) = args.prompt_epochs {
        cfg.train.prompt_epochs = pe;
    }
    if let Some(b) = args.batch {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(wd) = args.weight_decay {
        cfg.train.weight_decay = wd;
    }
    cfg.train.mtc_distance = DistanceFn::from_str(&args.distance)?;
    cfg.model.validate()?;
    cfg.train.validate()?;

    let dataset = synthdata::load_manifest(&args.data, "train").map_err(runtime_if_io)?;
    let samples = synthdata::load_all(&dataset).map_err(runtime_if_io)?;
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let counts = pipeline::count_parameters(&model);
    eprintln!(
        "training on {} samples | params: backbone {} prompts {} fusion {} decoder {} (total {})",
        samples.len(),
        counts.backbone,
        counts.prompts,
        counts.fusion,
        counts.decoder,
        counts.total
    );
    let report = pipeline::train(&mut model, &samples, &cfg.train)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    pipeline::save_checkpoint(&model, &args.out).map_err(runtime_if_io)?;
    pipeline::save_history(&report, &args.out.join("loss_history.tsv")).map_err(runtime_if_io)?;
    std::fs::write(args.out.join("train_config.txt"), render_config(&cfg))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if let (Some((_, first)), Some((_, last))) =
        (report.history.first(), report.history.last())
    {
        eprintln!(
            "done: {} steps, first-step loss {first:.4}, last-step loss {last:.4}",
            report.history.len()
        );
    }
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let mode = EvalMode::from_str(&args.mode)?;
    let policy = FbetaPolicy::from_str(&args.fbeta_policy)?;
    let model = pipeline::load_checkpoint(&args.checkpoint)?;
    let known = model.cfg.modalities.clone();
    let subsets: Option<Vec<ComboLabel>> = match &args.subsets {
        None => None,
        Some(text) => Some(
            text.split(',')
                .map(|s| ComboLabel::parse(s.trim(), &known))
                .collect::<Result<_, _>>()?,
        ),
    };
    let dataset = synthdata::load_manifest(&args.data, &args.split).map_err(runtime_if_io)?;
    let samples = synthdata::load_all(&dataset).map_err(runtime_if_io)?;
    let predict = |s: &MultimodalSample| model.predict_map(s);
    let report = evaluate(&predict, &samples, mode, subsets.as_deref(), policy)?;
    // human-readable table on stderr, machine-readable records on stdout
    eprint!("{}", report.to_table());
    print!("{}", report.to_records());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let model = pipeline::load_checkpoint(&args.checkpoint)?;
    let mut images = BTreeMap::new();
    for part in args.inputs.split(',') {
        let (tag, path) = part.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("expected tag=path in --inputs, got '{part}'"))
        })?;
        let kind = ModalityKind::new(tag);
        if !model.cfg.modalities.contains(&kind) {
            let known = model
                .cfg
                .modalities
                .iter()
                .map(|k| k.as_str())
                .collect::<Vec<_>>()
                .join(", ");
            return Err(CliError::Usage(format!(
                "unknown modality '{tag}', known tags: {known}"
            )));
        }
        let img = amsod_core::imgio::load_image(Path::new(path.trim()))
            .map_err(|e| CliError::Runtime(format!("{path}: {e}")))?;
        images.insert(kind, img);
    }
    if images.is_empty() {
        return Err(CliError::Usage("--inputs named no images".into()));
    }
    let dims: Vec<(ModalityKind, usize, usize)> =
        images.iter().map(|(k, v)| (k.clone(), v.dim().1, v.dim().2)).collect();
    let (h0, w0) = (dims[0].1, dims[0].2);
    for (kind, h, w) in &dims {
        if (*h, *w) != (h0, w0) {
            return Err(CliError::Usage(format!(
                "inputs not co-registered: {kind} is {h}x{w}, {} is {h0}x{w0}",
                dims[0].0
            )));
        }
    }
    let sample = MultimodalSample {
        id: "predict".into(),
        images,
        ground_truth: ndarray::Array2::zeros((h0, w0)),
    };
    let pred = model.predict(&sample)?;
    amsod_core::imgio::save_gray(&pred.primary, &args.out)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(aux_dir) = &args.aux {
        std::fs::create_dir_all(aux_dir).map_err(|e| CliError::Runtime(e.to_string()))?;
        for (i, map) in pred.auxiliary.iter().enumerate() {
            amsod_core::imgio::save_gray(map, &aux_dir.join(format!("s{}.png", i + 2)))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    println!("saliency map written to {}", args.out.display());
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), CliError> {
    let model = match (&args.checkpoint, &args.config) {
        (Some(dir), _) => pipeline::load_checkpoint(dir)?,
        (None, cfg_path) => {
            let cfg = load_file_config(cfg_path.as_deref())?;
            Model::new(cfg.model, cfg.train.seed)?
        }
    };
    let counts = pipeline::count_parameters(&model);
    println!("{:<12} {:>10}", "module", "params");
    println!("{:<12} {:>10}", "backbone", counts.backbone);
    println!("{:<12} {:>10}", "prompts", counts.prompts);
    println!("{:<12} {:>10}", "fusion", counts.fusion);
    println!("{:<12} {:>10}", "decoder", counts.decoder);
    println!("{:<12} {:>10}", "total", counts.total);
    if args.arity_report {
        let costs = pipeline::arity_scaling_report(&model, 3, args.reps)?;
        println!();
        print!("{}", pipeline::arity_table(&costs));
    }
    Ok(())
}
