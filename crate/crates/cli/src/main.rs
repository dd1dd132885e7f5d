use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ovpath::{run_all, run_stage, CliError, Context, PipelineConfig, Stage};

#[derive(Parser)]
#[command(name = "ovpath", version, about = "Serous ovarian tumor histotyping from H&E tiles")]
struct Cli {
    /// JSON configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the cohort directory.
    #[arg(long, global = true)]
    cohort: Option<PathBuf>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cohort.
    Synth,
    /// Separate hematoxylin and eosin OD planes.
    Deconvolve,
    /// Detect nuclei and cells.
    Segment,
    /// Assign annotation labels to cells.
    Label,
    /// Compute the 41 cell features.
    Features,
    /// Train the tumor/stroma cell SVM.
    TrainCell,
    /// Classify all cells and draw overlays.
    PredictCell,
    /// Tile ROIs into patches and build patch descriptors.
    Patchify,
    /// Cross-validate and train the patch SVM, fit the LASSO.
    TrainPatch,
    /// Apply the patch SVM to all patches.
    PredictPatch,
    /// Bootstrap subject-level calls.
    Subjects,
    /// Write confusion matrices, ROC, histograms and tables.
    Report,
    /// Run every stage in order.
    RunAll,
    /// Print the effective configuration.
    ShowConfig,
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            let line = serde_json::json!({
                "ts": buf.timestamp_millis().to_string(),
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .init();
}

fn resolve(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(c) = &cli.cohort {
        cfg.cohort_dir = c.clone();
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    let ctx = Context::new(cfg)?;
    if ctx.cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(ctx.cfg.workers)
            .build_global()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    }
    let stage = match cli.command {
        Command::RunAll => return run_all(&ctx),
        Command::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(&ctx.cfg).expect("config serializes"));
            return Ok(());
        }
        Command::Synth => Stage::Synth,
        Command::Deconvolve => Stage::Deconvolve,
        Command::Segment => Stage::Segment,
        Command::Label => Stage::Label,
        Command::Features => Stage::Features,
        Command::TrainCell => Stage::TrainCell,
        Command::PredictCell => Stage::PredictCell,
        Command::Patchify => Stage::Patchify,
        Command::TrainPatch => Stage::TrainPatch,
        Command::PredictPatch => Stage::PredictPatch,
        Command::Subjects => Stage::Subjects,
        Command::Report => Stage::Report,
    };
    run_stage(&ctx, stage)
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
