mod stages;

use std::io::{self, BufRead};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use korpus_core::bpe::BpeModel;
use korpus_core::config::{parse_stage_list, PipelineConfig, Stage};
use stages::{load_config, merged_stats, run_stage, usage, CliError, StageOutcome};

#[derive(Parser)]
#[command(
    name = "korpus",
    version,
    about = "Build a cleaned web-text corpus and its downstream artifacts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pull page text for one crawl and language out of WET archives
    Ingest(StageArgs),
    /// Apply line and page cleaning rules to ingested records
    Clean(StageArgs),
    /// Remove duplicate lines across the whole corpus
    Dedup(StageArgs),
    /// Train the subword vocabulary on the deduplicated corpus
    TrainTokenizer(StageArgs),
    /// Encode text from stdin with a trained tokenizer model
    Encode(EncodeArgs),
    /// Generate masked-LM pre-training instances
    Prep(StageArgs),
    /// Write a cross-validation fold plan for a prediction file
    SplitFolds(SplitFoldsArgs),
    /// Score a prediction file fold by fold
    Evaluate(EvaluateArgs),
    /// Print accumulated run statistics
    Stats(StatsArgs),
    /// Run a contiguous span of pipeline stages
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline configuration file
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Directory stage artifacts live in
    #[arg(long)]
    run_dir: PathBuf,
    /// Redo the stage even when its manifest says it is up to date
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EncodeArgs {
    /// Tokenizer model file (as written by train-tokenizer)
    #[arg(long)]
    model: PathBuf,
    /// Print token strings instead of ids
    #[arg(long)]
    pieces: bool,
}

#[derive(Args)]
struct SplitFoldsArgs {
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Prediction file whose gold labels drive stratification
    #[arg(long)]
    predictions: PathBuf,
    /// Where to write the plan (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Prediction file; overrides eval.predictions from the config
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Run as the eval pipeline stage, persisting reports here
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Reuse a fold plan instead of building one (ad hoc mode only)
    #[arg(long)]
    folds: Option<PathBuf>,
    /// Print the report as JSON (ad hoc mode only)
    #[arg(long)]
    json: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Print raw JSON instead of the human summary
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, short = 'c')]
    config: PathBuf,
    #[arg(long)]
    run_dir: PathBuf,
    /// Comma-separated contiguous stage span; default runs
    /// ingest,clean,dedup,tokenize,prep (eval needs a prediction file)
    #[arg(long)]
    stages: Option<String>,
    /// Redo stages even when their manifests say they are up to date
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(args) => stage_cmd(args, Stage::Ingest),
        Command::Clean(args) => stage_cmd(args, Stage::Clean),
        Command::Dedup(args) => stage_cmd(args, Stage::Dedup),
        Command::TrainTokenizer(args) => stage_cmd(args, Stage::Tokenize),
        Command::Prep(args) => stage_cmd(args, Stage::Prep),
        Command::Encode(args) => encode_cmd(args),
        Command::SplitFolds(args) => {
            let config = load_config(&args.config)?;
            stages::split_folds(&config, &args.predictions, args.out.as_deref())
        }
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Stats(args) => stats_cmd(args),
        Command::Pipeline(args) => pipeline_cmd(args),
    }
}

/// Sizes the shared worker pool once per process; 0 keeps the default.
fn init_workers(config: &PipelineConfig) {
    if config.run.workers > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.run.workers)
            .build_global();
    }
}

fn report_outcome(stage: Stage, outcome: StageOutcome) {
    match outcome {
        StageOutcome::Ran => println!("stage {stage}: done"),
        StageOutcome::UpToDate => println!("stage {stage}: up to date"),
    }
}

fn stage_cmd(args: StageArgs, stage: Stage) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    init_workers(&config);
    let outcome = run_stage(&config, &args.run_dir, stage, args.force)?;
    report_outcome(stage, outcome);
    Ok(())
}

fn encode_cmd(args: EncodeArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.model)
        .map_err(|e| usage(format!("{}: {e}", args.model.display())))?;
    let model = BpeModel::from_text(&text)
        .map_err(|e| usage(format!("{}: {e}", args.model.display())))?;
    let stdin = io::stdin();
    let mut out = String::new();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| CliError::Runtime(e.into()))?;
        let seq = model.encode(&line);
        out.clear();
        if args.pieces {
            for (i, id) in seq.ids.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(model.token_string(*id).unwrap_or("?"));
            }
        } else {
            for (i, id) in seq.ids.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(&id.to_string());
            }
        }
        println!("{out}");
    }
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<(), CliError> {
    let mut config = load_config(&args.config)?;
    if let Some(path) = args.predictions {
        config.eval.predictions = Some(path);
    }
    match args.run_dir {
        Some(run_dir) => {
            if args.folds.is_some() {
                return Err(usage("--folds only applies without --run-dir"));
            }
            init_workers(&config);
            let outcome = run_stage(&config, &run_dir, Stage::Eval, args.force)?;
            report_outcome(Stage::Eval, outcome);
            Ok(())
        }
        None => stages::evaluate_adhoc(&config, args.folds.as_deref(), args.json),
    }
}

fn stats_cmd(args: StatsArgs) -> Result<(), CliError> {
    if !args.run_dir.is_dir() {
        return Err(usage(format!("{} is not a run directory", args.run_dir.display())));
    }
    let stats = merged_stats(&args.run_dir)?;
    if args.json {
        let text = serde_json::to_string_pretty(&stats)
            .map_err(|e| CliError::Runtime(e.into()))?;
        println!("{text}");
    } else {
        print!("{}", stats.render());
    }
    Ok(())
}

fn pipeline_cmd(args: PipelineArgs) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    init_workers(&config);
    let names: Vec<String> = match &args.stages {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect(),
        None => ["ingest", "clean", "dedup", "tokenize", "prep"]
            .map(String::from)
            .to_vec(),
    };
    let stages = parse_stage_list(&names).map_err(|e| usage(e.to_string()))?;
    for stage in stages {
        let outcome = run_stage(&config, &args.run_dir, stage, args.force)?;
        report_outcome(stage, outcome);
    }
    let stats = merged_stats(&args.run_dir)?;
    print!("{}", stats.render());
    Ok(())
}
