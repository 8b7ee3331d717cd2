//! Four-stage detection flow over one attack window: evidence
//! identification from command lines, k-hop context expansion around the
//! flagged entities, attack-chain reconstruction with multi-sample voting,
//! and optional self-reflection.
//!
//! Every model interaction is replayable: payload shuffles derive from the
//! configured seed, raw response texts ride along in the outcome, and token
//! usage is logged per call.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::{build_graph, khop_expand, serialize_shuffled, GraphError, ProvenanceGraph};
use crate::ingest::{Entity, EntityId};
use crate::llm::client::LlmClient;
use crate::llm::prompts::{
    guard_contamination, render_acr_prompt, render_mei_prompt, render_reflect_prompt,
};
use crate::llm::report::{
    normalize_ioc, parse_acr_response, parse_mei_reasons, parse_mei_response, InvestigationReport,
};
use crate::llm::{LlmError, UsageRecord};
use crate::rng::derive_sample_seed;
use crate::segment::AttackWindow;

/// How aggregated votes turn into a kept indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRule {
    /// Keep an indicator iff it appears in strictly more than half the
    /// sampled reports.
    #[default]
    StrictMajority,
}

/// When (and whether) the model re-examines its own report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reflection {
    #[default]
    None,
    /// Refine each sample's report first, then vote over the refined set.
    RefThenAgg,
    /// Vote first, then refine the aggregated report once.
    AggThenRef,
}

/// Knobs for one detection run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    /// Hops of undirected context kept around the evidence entities.
    pub k_hop: usize,
    /// Reconstruction samples drawn for voting; odd so strict majority is
    /// never a tie.
    pub vote_k: usize,
    pub vote_rule: VoteRule,
    pub reflection: Reflection,
    /// Root seed for payload shuffles; sample `i` shuffles with a seed
    /// derived from this and `i`.
    pub rng_seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            k_hop: 2,
            vote_k: 3,
            vote_rule: VoteRule::StrictMajority,
            reflection: Reflection::None,
            rng_seed: 0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !matches!(self.vote_k, 1 | 3 | 5 | 7) {
            return Err(DetectError::InvalidConfig {
                message: format!("vote_k must be 1, 3, 5, or 7, got {}", self.vote_k),
            });
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid detection configuration: {message}")]
    InvalidConfig { message: String },
    #[error("all {} reconstruction samples failed to parse", raw_texts.len())]
    AllSamplesUnparseable { raw_texts: Vec<String> },
    #[error(
        "graph payload exceeds the context limit with no flank events left \
         to trim (estimated {estimate} tokens, limit {limit})"
    )]
    ContextOverflow { estimate: u64, limit: u64 },
}

/// One command the model flagged as suspicious, with its stated rationale
/// (empty when the response gave none).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceCommand {
    pub command: String,
    pub rationale: String,
}

/// Output of evidence identification: the flagged commands and the window
/// entities they resolve to. `seed_entities` only ever names subjects of
/// window events, so every seed exists in the window graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub commands: Vec<EvidenceCommand>,
    pub seed_entities: BTreeSet<EntityId>,
    /// True when no seeds could be resolved (no command lines in the
    /// window, or nothing flagged matched an event). Reconstruction then
    /// falls back to the full window graph.
    pub used_fallback: bool,
    pub warning: Option<String>,
    /// Raw evidence-identification responses, one per prompt batch.
    pub raw_responses: Vec<String>,
}

/// One reconstruction (or reflection) sample: the payload shuffle seed, the
/// raw response, and the parse outcome. Parse failures keep the raw text
/// for audit instead of aborting the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_index: usize,
    pub shuffle_seed: u64,
    pub raw_text: String,
    pub usage: UsageRecord,
    pub report: Option<InvestigationReport>,
    pub parse_error: Option<String>,
}

/// Token usage of one model call, labeled by pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallUsage {
    pub call: String,
    pub usage: UsageRecord,
}

/// Everything a detection run produced, serializable as the run artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub config: DetectionConfig,
    /// Endpoint name the completions came from.
    pub model: String,
    pub environment: String,
    pub evidence: EvidenceSet,
    pub subgraph_nodes: usize,
    pub subgraph_edges: usize,
    /// Flank events dropped to fit the fallback payload in context.
    pub trimmed_events: usize,
    pub samples: Vec<SampleRecord>,
    pub reflections: Vec<SampleRecord>,
    /// Majority vote over the parsed samples, before any reflection.
    pub voted: InvestigationReport,
    /// What the run stands behind: the reflected report when reflection ran
    /// and parsed, otherwise `voted`.
    pub final_report: InvestigationReport,
    pub usage_log: Vec<CallUsage>,
}

/// Asks the model which of the window's command lines look malicious and
/// resolves the flagged ones back to seed entities.
///
/// Command lines go out in first-occurrence order, de-duplicated. When the
/// batch prompt exceeds the context limit the batch splits in half
/// recursively; a single command that still does not fit is a hard error.
/// A window with no command lines at all skips the model entirely and
/// returns an empty set with the fallback flag raised.
pub fn identify_evidence(
    window: &AttackWindow,
    client: &LlmClient,
    environment: &str,
    forbidden: &[String],
) -> Result<(EvidenceSet, Vec<UsageRecord>), DetectError> {
    let mut distinct: Vec<String> = Vec::new();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for event in window.iter_events() {
        if let Some(cmdline) = &event.cmdline {
            if seen.insert(cmdline) {
                distinct.push(cmdline.clone());
            }
        }
    }
    if distinct.is_empty() {
        return Ok((
            EvidenceSet {
                commands: Vec::new(),
                seed_entities: BTreeSet::new(),
                used_fallback: true,
                warning: Some(
                    "window has no command lines; reconstruction will use the full window graph"
                        .into(),
                ),
                raw_responses: Vec::new(),
            },
            Vec::new(),
        ));
    }

    let mut usage = Vec::new();
    let mut raw_responses = Vec::new();
    let mut warnings = Vec::new();
    let flagged = flag_commands(
        &distinct,
        environment,
        client,
        forbidden,
        &mut usage,
        &mut raw_responses,
        &mut warnings,
    )?;

    let (seed_entities, unmatched) = resolve_seed_entities(window, &flagged);
    if !unmatched.is_empty() {
        warnings.push(format!(
            "{} flagged command(s) matched no window event: {}",
            unmatched.len(),
            unmatched.join(", ")
        ));
    }
    let used_fallback = seed_entities.is_empty();
    if used_fallback {
        warnings.push(
            "no seed entities resolved; reconstruction will use the full window graph".into(),
        );
    }
    Ok((
        EvidenceSet {
            commands: flagged
                .into_iter()
                .map(|(command, rationale)| EvidenceCommand { command, rationale })
                .collect(),
            seed_entities,
            used_fallback,
            warning: if warnings.is_empty() {
                None
            } else {
                Some(warnings.join("; "))
            },
            raw_responses,
        },
        usage,
    ))
}

/// Sends one evidence prompt for `commands`, splitting the batch in half on
/// a context-limit violation. Results merge in input order, de-duplicated.
#[allow(clippy::too_many_arguments)]
fn flag_commands(
    commands: &[String],
    environment: &str,
    client: &LlmClient,
    forbidden: &[String],
    usage: &mut Vec<UsageRecord>,
    raw_responses: &mut Vec<String>,
    warnings: &mut Vec<String>,
) -> Result<Vec<(String, String)>, DetectError> {
    let prompt = render_mei_prompt(commands, environment);
    guard_contamination(&prompt, forbidden)?;
    match client.complete(&prompt, 1) {
        Ok(mut completions) => {
            let (text, record) = completions.pop().expect("one sample requested");
            usage.push(record);
            let parsed = parse_mei_response(&text);
            if let Some(w) = parsed.warning {
                warnings.push(w);
            }
            let reasons: BTreeMap<String, String> = parse_mei_reasons(&text).into_iter().collect();
            raw_responses.push(text);
            Ok(parsed
                .commands
                .into_iter()
                .map(|c| {
                    let rationale = reasons.get(&c).cloned().unwrap_or_default();
                    (c, rationale)
                })
                .collect())
        }
        Err(LlmError::PromptOverBudget { .. }) if commands.len() > 1 => {
            let mid = commands.len() / 2;
            let mut merged = flag_commands(
                &commands[..mid],
                environment,
                client,
                forbidden,
                usage,
                raw_responses,
                warnings,
            )?;
            let right = flag_commands(
                &commands[mid..],
                environment,
                client,
                forbidden,
                usage,
                raw_responses,
                warnings,
            )?;
            let known: BTreeSet<String> = merged.iter().map(|(c, _)| c.clone()).collect();
            merged.extend(right.into_iter().filter(|(c, _)| !known.contains(c)));
            Ok(merged)
        }
        Err(e) => Err(e.into()),
    }
}

/// Maps flagged commands back to the subjects of the window events that ran
/// them. Exact command-line equality is tried first; only when a command
/// matches nothing exactly does it fall back to whitespace-token subset
/// matching (models often quote a command without its arguments). Commands
/// matching neither way are reported back, not errors.
fn resolve_seed_entities(
    window: &AttackWindow,
    flagged: &[(String, String)],
) -> (BTreeSet<EntityId>, Vec<String>) {
    let mut seeds = BTreeSet::new();
    let mut unmatched = Vec::new();
    for (command, _) in flagged {
        let mut hit = false;
        for event in window.iter_events() {
            if event.cmdline.as_deref() == Some(command.as_str()) {
                seeds.insert(event.subject_id.clone());
                hit = true;
            }
        }
        if !hit {
            let want: BTreeSet<&str> = command.split_whitespace().collect();
            if !want.is_empty() {
                for event in window.iter_events() {
                    if let Some(cmdline) = &event.cmdline {
                        let have: BTreeSet<&str> = cmdline.split_whitespace().collect();
                        if want.is_subset(&have) {
                            seeds.insert(event.subject_id.clone());
                            hit = true;
                        }
                    }
                }
            }
        }
        if !hit {
            unmatched.push(command.clone());
        }
    }
    (seeds, unmatched)
}

/// Draws `vote_k` reconstruction samples over the payload graph. Each
/// sample serializes the graph under its own derived shuffle seed, so the
/// model sees the same evidence in a different order every time. Individual
/// parse failures are recorded and tolerated; only all samples failing is
/// an error.
pub fn reconstruct_chain(
    subgraph: &ProvenanceGraph,
    config: &DetectionConfig,
    client: &LlmClient,
    environment: &str,
    forbidden: &[String],
) -> Result<Vec<SampleRecord>, DetectError> {
    config.validate()?;
    let mut samples = Vec::with_capacity(config.vote_k);
    for i in 0..config.vote_k {
        let shuffle_seed = derive_sample_seed(config.rng_seed, i);
        let payload = serialize_shuffled(subgraph, shuffle_seed);
        let prompt = render_acr_prompt(&payload.text, environment);
        guard_contamination(&prompt, forbidden)?;
        let (raw_text, usage) = client.complete_indexed(&prompt, i)?;
        let (report, parse_error) = match parse_acr_response(&raw_text) {
            Ok(report) => (Some(report), None),
            Err(e) => (None, Some(e.to_string())),
        };
        samples.push(SampleRecord {
            sample_index: i,
            shuffle_seed,
            raw_text,
            usage,
            report,
            parse_error,
        });
    }
    if samples.iter().all(|s| s.report.is_none()) {
        return Err(DetectError::AllSamplesUnparseable {
            raw_texts: samples.into_iter().map(|s| s.raw_text).collect(),
        });
    }
    Ok(samples)
}

fn normalized_sets(report: &InvestigationReport) -> [BTreeSet<String>; 3] {
    let norm = |set: &BTreeSet<String>| set.iter().filter_map(|s| normalize_ioc(s)).collect();
    [
        norm(&report.ioc_ips),
        norm(&report.ioc_processes),
        norm(&report.ioc_files),
    ]
}

/// Strict-majority vote over per-category indicators: an indicator survives
/// iff it appears in more than half the reports (after normalization). The
/// narrative and key steps come from the report whose indicators overlap
/// the voted sets the most, earliest sample winning ties. With a single
/// report this is the identity.
pub fn majority_vote(reports: &[InvestigationReport]) -> InvestigationReport {
    if reports.is_empty() {
        return InvestigationReport::default();
    }
    let n = reports.len();
    let normalized: Vec<[BTreeSet<String>; 3]> = reports.iter().map(normalized_sets).collect();

    let vote = |category: usize| -> BTreeSet<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for sets in &normalized {
            for entry in &sets[category] {
                *counts.entry(entry).or_default() += 1;
            }
        }
        counts
            .into_iter()
            .filter(|&(_, count)| count * 2 > n)
            .map(|(entry, _)| entry.to_string())
            .collect()
    };
    let ioc_ips = vote(0);
    let ioc_processes = vote(1);
    let ioc_files = vote(2);

    let mut best = 0;
    let mut best_score = None;
    for (i, sets) in normalized.iter().enumerate() {
        let score = sets[0].intersection(&ioc_ips).count()
            + sets[1].intersection(&ioc_processes).count()
            + sets[2].intersection(&ioc_files).count();
        if best_score.is_none_or(|b| score > b) {
            best = i;
            best_score = Some(score);
        }
    }

    InvestigationReport {
        narrative: reports[best].narrative.clone(),
        key_steps: reports[best].key_steps.clone(),
        ioc_ips,
        ioc_processes,
        ioc_files,
    }
}

/// Runs the configured self-reflection strategy over reconstruction
/// samples and returns the final report plus the reflection records.
///
/// `ref_then_agg` shows each parsed sample its own payload again (same
/// shuffle seed) and votes over the refined reports; `agg_then_ref` votes
/// first and refines the aggregate once against a fresh shuffle. A
/// reflection that fails to parse keeps the pre-reflection report — a model
/// losing the format must not erase a finding it already made.
pub fn self_reflect(
    samples: &[SampleRecord],
    subgraph: &ProvenanceGraph,
    config: &DetectionConfig,
    client: &LlmClient,
    environment: &str,
    forbidden: &[String],
) -> Result<(InvestigationReport, Vec<SampleRecord>), DetectError> {
    let parsed: Vec<&SampleRecord> = samples.iter().filter(|s| s.report.is_some()).collect();
    if parsed.is_empty() {
        return Err(DetectError::AllSamplesUnparseable {
            raw_texts: samples.iter().map(|s| s.raw_text.clone()).collect(),
        });
    }

    let reflect_once = |report_text: &str,
                        shuffle_seed: u64,
                        sample_index: usize|
     -> Result<SampleRecord, DetectError> {
        let graph_text = serialize_shuffled(subgraph, shuffle_seed).text;
        let prompt = render_reflect_prompt(report_text, &graph_text, environment);
        guard_contamination(&prompt, forbidden)?;
        let (raw_text, usage) = client.complete_indexed(&prompt, sample_index)?;
        let (report, parse_error) = match parse_acr_response(&raw_text) {
            Ok(report) => (Some(report), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(SampleRecord {
            sample_index,
            shuffle_seed,
            raw_text,
            usage,
            report,
            parse_error,
        })
    };

    match config.reflection {
        Reflection::None => Err(DetectError::InvalidConfig {
            message: "self-reflection invoked with reflection = \"none\"".into(),
        }),
        Reflection::RefThenAgg => {
            let mut records = Vec::with_capacity(parsed.len());
            let mut refined = Vec::with_capacity(parsed.len());
            for sample in parsed {
                let original = sample.report.as_ref().expect("filtered to parsed");
                let record = reflect_once(
                    &original.to_response_text(),
                    sample.shuffle_seed,
                    sample.sample_index,
                )?;
                refined.push(record.report.clone().unwrap_or_else(|| original.clone()));
                records.push(record);
            }
            Ok((majority_vote(&refined), records))
        }
        Reflection::AggThenRef => {
            let reports: Vec<InvestigationReport> = parsed
                .iter()
                .map(|s| s.report.clone().expect("parsed"))
                .collect();
            let voted = majority_vote(&reports);
            let index = samples.len();
            let record = reflect_once(
                &voted.to_response_text(),
                derive_sample_seed(config.rng_seed, index),
                index,
            )?;
            let final_report = record.report.clone().unwrap_or_else(|| voted.clone());
            Ok((final_report, vec![record]))
        }
    }
}

/// Full-graph fallback payload for a window without evidence seeds. When
/// the payload overflows the context limit, flank events are dropped from
/// the outside in (earliest pre, latest post, alternating) until it fits;
/// attack-interval events are never dropped. Shuffling permutes lines
/// without changing the text length, so checking one shuffle covers all
/// samples.
fn expand_fallback(
    window: &AttackWindow,
    entities: &BTreeMap<EntityId, Entity>,
    config: &DetectionConfig,
    client: &LlmClient,
    environment: &str,
) -> Result<(ProvenanceGraph, usize), DetectError> {
    let limit = client.endpoint().max_context_tokens;
    let mut work = window.clone();
    let mut trimmed = 0;
    let mut take_pre = true;
    loop {
        let graph = build_graph(&work, entities)?;
        let payload = serialize_shuffled(&graph, derive_sample_seed(config.rng_seed, 0));
        let prompt = render_acr_prompt(&payload.text, environment);
        let estimate = client.estimate_prompt(&prompt);
        if estimate <= limit {
            return Ok((graph, trimmed));
        }
        if take_pre && !work.pre.is_empty() {
            work.pre.remove(0);
        } else if !work.post.is_empty() {
            work.post.pop();
        } else if !work.pre.is_empty() {
            work.pre.remove(0);
        } else {
            return Err(DetectError::ContextOverflow { estimate, limit });
        }
        take_pre = !take_pre;
        trimmed += 1;
    }
}

/// End-to-end detection over one window: evidence, expansion,
/// reconstruction with voting, optional reflection. Deterministic given
/// the config, the window, and the backend's responses.
pub fn run_detection(
    window: &AttackWindow,
    entities: &BTreeMap<EntityId, Entity>,
    config: &DetectionConfig,
    client: &LlmClient,
    environment: &str,
    forbidden: &[String],
) -> Result<DetectionOutcome, DetectError> {
    config.validate()?;
    let mut usage_log: Vec<CallUsage> = Vec::new();

    let (evidence, mei_usage) = identify_evidence(window, client, environment, forbidden)?;
    usage_log.extend(mei_usage.into_iter().map(|usage| CallUsage {
        call: "mei".into(),
        usage,
    }));

    let (subgraph, trimmed_events) = if evidence.seed_entities.is_empty() {
        expand_fallback(window, entities, config, client, environment)?
    } else {
        let full = build_graph(window, entities)?;
        (
            khop_expand(&full, &evidence.seed_entities, config.k_hop)?,
            0,
        )
    };

    let samples = reconstruct_chain(&subgraph, config, client, environment, forbidden)?;
    usage_log.extend(samples.iter().map(|s| CallUsage {
        call: "acr".into(),
        usage: s.usage.clone(),
    }));

    let parsed: Vec<InvestigationReport> =
        samples.iter().filter_map(|s| s.report.clone()).collect();
    let voted = majority_vote(&parsed);

    let (final_report, reflections) = match config.reflection {
        Reflection::None => (voted.clone(), Vec::new()),
        Reflection::RefThenAgg | Reflection::AggThenRef => {
            self_reflect(&samples, &subgraph, config, client, environment, forbidden)?
        }
    };
    usage_log.extend(reflections.iter().map(|s| CallUsage {
        call: "reflect".into(),
        usage: s.usage.clone(),
    }));

    Ok(DetectionOutcome {
        config: config.clone(),
        model: client.endpoint().name.clone(),
        environment: environment.to_string(),
        evidence,
        subgraph_nodes: subgraph.node_count(),
        subgraph_edges: subgraph.edge_count(),
        trimmed_events,
        samples,
        reflections,
        voted,
        final_report,
        usage_log,
    })
}
