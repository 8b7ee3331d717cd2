//! Run the full detection flow over the bundled dataset against the mock
//! completion backend: evidence identification, seed resolution, k-hop
//! context expansion, multi-sample reconstruction, and majority voting.
//!
//! ```sh
//! cargo run --example mock_detection
//! ```

use std::error::Error;
use std::path::PathBuf;

use provharness::detect::{run_detection, DetectionConfig};
use provharness::ingest::{dedup_events, load_event_log, load_ground_truth_file};
use provharness::llm::client::{LlmClient, MockBackend};
use provharness::llm::{Currency, ModelEndpoint, SamplingParams};
use provharness::segment::{build_attack_window, AttackInterval};

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
    let window = build_attack_window(&log.events, AttackInterval::new(truth.t_s, truth.t_e)?);

    let endpoint = ModelEndpoint {
        name: "mock-model".into(),
        base_url: String::new(),
        auth_env_var: "PROVHARNESS_API_KEY".into(),
        max_context_tokens: 131_072,
        price_per_1k_prompt: Currency::from_dollars(0.005),
        price_per_1k_completion: Currency::from_dollars(0.025),
        sampling: SamplingParams::default(),
    };
    let client = LlmClient::new(
        endpoint,
        Box::new(MockBackend::new(fixtures().join("mock_llm"))),
    )?;

    let config = DetectionConfig {
        k_hop: 2,
        vote_k: 3,
        rng_seed: 42,
        ..DetectionConfig::default()
    };
    let outcome = run_detection(
        &window,
        &log.entities,
        &config,
        &client,
        "a FreeBSD web server running nginx",
        &[],
    )?;

    println!("evidence commands:");
    for cmd in &outcome.evidence.commands {
        println!("  {} — {}", cmd.command, cmd.rationale);
    }
    println!("seed entities: {:?}", outcome.evidence.seed_entities);
    println!(
        "expanded context: {} nodes, {} edges",
        outcome.subgraph_nodes, outcome.subgraph_edges
    );

    println!("\nsamples:");
    for sample in &outcome.samples {
        println!(
            "  #{} shuffle_seed={} parsed={} ({} completion tokens)",
            sample.sample_index,
            sample.shuffle_seed,
            sample.report.is_some(),
            sample.usage.completion_tokens
        );
    }

    println!(
        "\nvoted report:\n{}",
        outcome.final_report.to_response_text()
    );
    println!("model calls:");
    for entry in &outcome.usage_log {
        println!(
            "  {}: {} tokens, cost {}",
            entry.call, entry.usage.total_tokens, entry.usage.cost
        );
    }
    Ok(())
}
