//! Merge metrics files and render the report tables.
//!
//! The report stage is pure file-to-file work: it unions rows from any
//! number of metrics CSVs, sorts them by (model, dataset), renders a
//! fixed-width summary, and — once every model covers all nine
//! sub-datasets — appends regime verdicts.
//!
//! ```sh
//! cargo run --example report_tables
//! ```

use std::error::Error;
use std::path::PathBuf;

use provharness::pipeline::{merge_metrics, regime_rows, render_summary_table};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn main() -> Result<(), Box<dyn Error>> {
    let rows = merge_metrics(&[fixtures().join("recorded/main_results.csv")])?;
    println!("{}", render_summary_table(&rows));

    let verdicts = regime_rows(&rows);
    assert!(
        !verdicts.is_empty(),
        "the recorded table covers all nine sub-datasets"
    );
    println!("regimes (FPR in percentage points):");
    for (model, verdict) in &verdicts {
        println!(
            "  {model:<18} {:<14} avg {:.3}  max {:.3}",
            verdict.regime.as_str(),
            verdict.fpr_avg,
            verdict.fpr_max
        );
    }
    Ok(())
}
