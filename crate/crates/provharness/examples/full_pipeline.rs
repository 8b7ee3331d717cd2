//! Drive the whole pipeline through the library API: load a config, run
//! every stage for every dataset, and render the report — all offline via
//! the mock backend.
//!
//! This is exactly what the `provharness` binary does; use the library
//! entry points when embedding the harness in another tool.
//!
//! ```sh
//! cargo run --example full_pipeline
//! ```

use std::error::Error;
use std::fs;
use std::path::PathBuf;

use provharness::pipeline::{load_config, run, Stage};

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn main() -> Result<(), Box<dyn Error>> {
    let mut config = load_config(&workspace_root().join("provharness.toml"))?;

    // Redirect output into a scratch directory so the example never
    // clobbers a real run.
    let scratch = tempfile::tempdir()?;
    config.out_dir = scratch.path().to_path_buf();

    for summary in run(&config, Stage::All, None)? {
        println!("{summary}");
    }

    println!("\nreport/summary.txt:");
    let summary = fs::read_to_string(config.out_dir.join("report/summary.txt"))?;
    for line in summary.lines() {
        println!("  {line}");
    }

    // Stages also run in isolation against the persisted artifacts —
    // rerunning eval alone touches nothing upstream.
    let rerun = run(&config, Stage::Eval, Some("mini"))?;
    println!("\nisolated rerun: {}", rerun[0]);
    Ok(())
}
