//! Detection with the two self-reflection strategies.
//!
//! `ref_then_agg` refines every sample against its own serialized graph
//! and then votes; `agg_then_ref` votes first and refines the consolidated
//! report once. The bundled refinement fixture returns the report
//! unchanged, so both strategies reproduce the baseline here — the point
//! is the call flow and the recorded artifacts.
//!
//! ```sh
//! cargo run --example self_reflection
//! ```

use std::error::Error;
use std::path::PathBuf;

use provharness::detect::{run_detection, DetectionConfig, Reflection};
use provharness::ingest::{dedup_events, load_event_log, load_ground_truth_file};
use provharness::llm::client::{LlmClient, MockBackend};
use provharness::llm::{Currency, ModelEndpoint, SamplingParams};
use provharness::segment::{build_attack_window, AttackInterval};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn client() -> Result<LlmClient, Box<dyn Error>> {
    let endpoint = ModelEndpoint {
        name: "mock-model".into(),
        base_url: String::new(),
        auth_env_var: "PROVHARNESS_API_KEY".into(),
        max_context_tokens: 131_072,
        price_per_1k_prompt: Currency::from_dollars(0.005),
        price_per_1k_completion: Currency::from_dollars(0.025),
        sampling: SamplingParams::default(),
    };
    Ok(LlmClient::new(
        endpoint,
        Box::new(MockBackend::new(fixtures().join("mock_llm"))),
    )?)
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
    let env = "a FreeBSD web server running nginx";

    for reflection in [Reflection::RefThenAgg, Reflection::AggThenRef] {
        let config = DetectionConfig {
            k_hop: 2,
            vote_k: 3,
            reflection,
            rng_seed: 42,
            ..DetectionConfig::default()
        };
        let outcome = run_detection(&window, &log.entities, &config, &client()?, env, &[])?;

        let calls: Vec<&str> = outcome.usage_log.iter().map(|e| e.call.as_str()).collect();
        println!("{reflection:?}: calls = {calls:?}");
        println!(
            "  {} refinement responses recorded, {} indicators in the final report",
            outcome.reflections.len(),
            outcome.final_report.ioc_count()
        );
        assert_eq!(
            outcome.final_report, outcome.voted,
            "the identity refiner leaves the voted report unchanged"
        );
    }
    println!("\nboth strategies preserved the report under an identity refiner");
    Ok(())
}
