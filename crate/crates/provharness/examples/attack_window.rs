//! Carve the attack-centric window around a labeled interval and enforce a
//! token budget on it.
//!
//! The window takes every event in the attack interval plus equal-duration
//! benign flanks before and after it. When the serialized window exceeds
//! the budget, outermost flank events are trimmed first — attack events
//! are never dropped.
//!
//! ```sh
//! cargo run --example attack_window
//! ```

use std::error::Error;
use std::path::PathBuf;

use provharness::ingest::{dedup_events, load_event_log, load_ground_truth_file};
use provharness::segment::{
    build_attack_window, check_token_budget, trim_to_budget, AttackInterval, CharsPerFour,
};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn main() -> Result<(), Box<dyn Error>> {
    let dir = fixtures().join("mini");
    let log = dedup_events(load_event_log(
        &dir.join("events.jsonl"),
        &dir.join("entities.jsonl"),
        "mini",
    )?);
    let truth = load_ground_truth_file(&dir.join("labels.json"), &log)?;

    let interval = AttackInterval::new(truth.t_s, truth.t_e)?;
    let window = build_attack_window(&log.events, interval);
    println!(
        "attack interval [{}, {}], duration {}",
        truth.t_s,
        truth.t_e,
        truth.t_e - truth.t_s
    );
    println!(
        "window: {} pre / {} attack / {} post events, ~{} tokens",
        window.pre.len(),
        window.attack.len(),
        window.post.len(),
        window.token_estimate
    );

    // A generous budget passes the check untouched.
    let fit = check_token_budget(&window, 131_072, &CharsPerFour)?;
    println!("estimate {fit} fits the 131072 token budget");

    // A tight budget forces trimming: flank events fall away from the
    // outside in, alternating earliest-pre / latest-post.
    let tight = window.token_estimate * 3 / 4;
    let trimmed = trim_to_budget(&window, tight, &CharsPerFour)?;
    println!(
        "trimmed to budget {tight}: {} pre / {} attack / {} post events, ~{} tokens",
        trimmed.pre.len(),
        trimmed.attack.len(),
        trimmed.post.len(),
        trimmed.token_estimate
    );
    assert_eq!(
        trimmed.attack.len(),
        window.attack.len(),
        "attack events are never trimmed"
    );
    Ok(())
}
