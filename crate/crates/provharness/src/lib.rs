//! Offline evaluation harness for LLM-assisted host-based intrusion detection.
//!
//! The library turns normalized host telemetry into attack-centric provenance
//! graph inputs, drives a model endpoint through evidence-identification and
//! attack-reconstruction prompts, aggregates sampled outputs by majority vote,
//! and scores the results against ground truth with imbalance-aware metrics,
//! behavioral-regime classification, and cost accounting.
//!
//! The pipeline runs in five stages, each consuming the persisted artifacts of
//! the previous one:
//!
//! 1. [`ingest`] — parse canonical event/entity/label files, deduplicate
//!    redundant events, validate referential integrity.
//! 2. [`segment`] — carve the attack-centric window (equal-duration benign
//!    context before and after the attack interval) and enforce token budgets.
//! 3. [`graph`] — build the provenance graph, expand k hops around evidence
//!    seeds, and serialize subgraphs with seeded order shuffling.
//! 4. [`detect`] — the model-driven flow: evidence identification, context
//!    expansion, chain reconstruction with multi-sample voting, and optional
//!    self-reflection. [`llm`] supplies the endpoint client and a
//!    deterministic mock backend so the whole flow runs offline.
//! 5. [`scoring`] — match reported IOCs to events, compute precision / FPR /
//!    MCC, aggregate across datasets, classify behavioral regimes, and
//!    account API cost and runtime.
//!
//! [`pipeline`] wires the stages together behind a declarative run
//! configuration; the `provharness` binary is a thin front end over it.
//! The `examples/` directory carries one runnable example per capability —
//! start with `cargo run --example full_pipeline`.

pub mod detect;
pub mod graph;
pub mod ingest;
pub mod llm;
pub mod pipeline;
pub mod rng;
pub mod scoring;
pub mod segment;
