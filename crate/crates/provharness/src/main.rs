//! Thin command-line front end over [`provharness::pipeline`].
//!
//! All behavior lives in the library; this binary only parses flags, loads
//! the config, applies overrides, and prints stage summaries. See the
//! `examples/` directory for the library-level API.

use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use provharness::pipeline::{load_config, run, Stage};

/// Offline evaluation pipeline for model-assisted intrusion detection
/// over provenance graphs.
#[derive(Parser)]
#[command(name = "provharness", version, about, max_term_width = 100)]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true, default_value = "provharness.toml")]
    config: PathBuf,

    /// Stage to run (ingest, segment, detect, eval, report, all). A
    /// subcommand takes precedence over this flag.
    #[arg(long, global = true)]
    stage: Option<String>,

    /// Restrict the run to one dataset by name (default: all datasets).
    #[arg(long, global = true)]
    dataset: Option<String>,

    /// Override the root RNG seed (also re-seeds detection sampling).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Serve completions from this fixture directory instead of the
    /// network, overriding the config.
    #[arg(long, global = true)]
    mock_fixtures: Option<PathBuf>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, deduplicate, and validate the raw dataset files.
    Ingest,
    /// Carve the attack-centric window and enforce the token budget.
    Segment,
    /// Run evidence identification, chain reconstruction, and voting.
    Detect,
    /// Score the voted report against ground truth.
    Eval,
    /// Merge metrics files and render the result tables.
    Report,
    /// Run every stage for every dataset, then the report.
    All,
}

impl Command {
    fn stage(&self) -> Stage {
        match self {
            Command::Ingest => Stage::Ingest,
            Command::Segment => Stage::Segment,
            Command::Detect => Stage::Detect,
            Command::Eval => Stage::Eval,
            Command::Report => Stage::Report,
            Command::All => Stage::All,
        }
    }
}

fn execute(cli: Cli) -> Result<(), Box<dyn Error>> {
    let mut config = load_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.root_seed = seed;
        config.detection.rng_seed = seed;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    if let Some(fixtures) = cli.mock_fixtures {
        config.mock_fixtures = Some(fixtures);
    }

    let stage = match (&cli.command, &cli.stage) {
        (Some(command), _) => command.stage(),
        (None, Some(flag)) => flag.parse()?,
        (None, None) => Stage::All,
    };

    for summary in run(&config, stage, cli.dataset.as_deref())? {
        println!("{summary}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            let mut source = error.source();
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}
