//! Score predictions and classify model behavior regimes from recorded
//! benchmark results.
//!
//! Reads the bundled results table (nine models, nine sub-datasets),
//! reports per-dataset MCC means, and assigns each model a regime from its
//! false-positive-rate vector: conservative detectors stay quiet,
//! over-sensitive ones flood alerts, balanced ones sit between.
//!
//! ```sh
//! cargo run --example metrics_and_regimes
//! ```

use std::collections::BTreeMap;
use std::error::Error;
use std::path::PathBuf;

use provharness::pipeline::read_metrics_file;
use provharness::scoring::{
    aggregate_metrics, classify_regime, compute_metrics, ConfusionCounts, MetricSet,
};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn main() -> Result<(), Box<dyn Error>> {
    // First the metric primitives on a single confusion table.
    let counts = ConfusionCounts {
        true_positives: 13,
        false_positives: 2,
        true_negatives: 26,
        false_negatives: 0,
    };
    let metrics = compute_metrics(&counts);
    println!(
        "single run: precision {:.3}, fpr {:.3}%, mcc {:.3}",
        metrics.precision,
        metrics.fpr * 100.0,
        metrics.mcc
    );

    // Then the recorded table: per-dataset means across all models.
    let rows = read_metrics_file(&fixtures().join("recorded/main_results.csv"))?;
    println!("\nper-dataset MCC means over {} rows:", rows.len());
    let mut by_dataset: BTreeMap<&str, Vec<MetricSet>> = BTreeMap::new();
    for row in &rows {
        by_dataset.entry(&row.dataset).or_default().push(MetricSet {
            precision: row.precision,
            fpr: row.fpr_percent / 100.0,
            mcc: row.mcc,
            no_alerts: false,
        });
    }
    for (dataset, sets) in &by_dataset {
        let means = aggregate_metrics(sets)?;
        println!(
            "  {dataset:<10} mcc {:.3}  precision {:.3}  ({} models)",
            means.mcc, means.precision, means.datasets
        );
    }

    // Finally the regimes, from each model's FPR vector in percentage
    // points across all nine sub-datasets.
    let mut by_model: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for row in &rows {
        by_model
            .entry(&row.model)
            .or_default()
            .push(row.fpr_percent);
    }
    println!("\nbehavior regimes:");
    for (model, fprs) in &by_model {
        let verdict = classify_regime(fprs)?;
        println!(
            "  {model:<18} {:<14} (avg {:.3}, max {:.3})",
            verdict.regime.as_str(),
            verdict.fpr_avg,
            verdict.fpr_max
        );
    }
    Ok(())
}
