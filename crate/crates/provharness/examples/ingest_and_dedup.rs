//! Load a raw dataset, deduplicate redundant events, and validate the
//! ground-truth labels against it.
//!
//! ```sh
//! cargo run --example ingest_and_dedup
//! ```

use std::error::Error;
use std::path::PathBuf;

use provharness::ingest::{dedup_events, load_event_log, load_ground_truth_file};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn main() -> Result<(), Box<dyn Error>> {
    let dir = fixtures().join("mini");
    let log = load_event_log(
        &dir.join("events.jsonl"),
        &dir.join("entities.jsonl"),
        "mini",
    )?;
    println!(
        "raw log: {} events over {} entities",
        log.events.len(),
        log.entities.len()
    );

    let raw = log.events.len();
    let log = dedup_events(log);
    println!(
        "deduplicated: {} events kept, {} redundant copies removed",
        log.events.len(),
        raw - log.events.len()
    );

    // Labels are validated against the deduplicated log: every malicious id
    // must exist and fall inside the attack interval.
    let truth = load_ground_truth_file(&dir.join("labels.json"), &log)?;
    println!(
        "ground truth: {} malicious events in [{}, {}] ({})",
        truth.malicious_event_ids.len(),
        truth.t_s,
        truth.t_e,
        truth.source_note
    );

    // A peek at the first few events, via the same accessors the pipeline
    // uses downstream.
    for event in log.events.iter().take(5) {
        let object = event
            .object_id
            .as_ref()
            .map(|id| id.as_str())
            .unwrap_or("-");
        println!(
            "  {} t={} {} {} -> {}",
            event.event_id, event.timestamp_ns, event.event_type, event.subject_id, object
        );
    }
    Ok(())
}
