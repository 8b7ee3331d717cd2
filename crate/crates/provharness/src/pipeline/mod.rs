//! Staged run orchestration: declarative config, per-stage artifact
//! production under one output tree, and report rendering.
//!
//! Stages communicate only through persisted files, so any stage can be
//! rerun or audited in isolation. A stage that fails leaves a `.partial`
//! marker in its directory. With the mock backend, identical config yields
//! a byte-identical output tree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::detect::{run_detection, DetectionConfig, DetectionOutcome};
use crate::ingest::{
    self, dedup_events, load_event_log, load_ground_truth, load_ground_truth_file, Entity,
    EntityId, EventLog, GroundTruth,
};
use crate::llm::client::{HttpBackend, LlmClient, MockBackend};
use crate::llm::{Currency, LedgerEntry, ModelEndpoint, PriceTable, SamplingParams};
use crate::scoring::{
    account_costs, classify_regime, compute_confusion, compute_metrics, match_iocs, CostReport,
};
use crate::segment::{
    build_attack_window, check_token_budget, read_window_dump, trim_to_budget, write_window_dump,
    AttackInterval, AttackWindow, CharsPerFour, SegmentError,
};

/// A runnable pipeline stage. `All` chains ingest through eval per dataset,
/// then renders the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Segment,
    Detect,
    Eval,
    Report,
    All,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Segment => "segment",
            Stage::Detect => "detect",
            Stage::Eval => "eval",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ingest" => Ok(Stage::Ingest),
            "segment" => Ok(Stage::Segment),
            "detect" => Ok(Stage::Detect),
            "eval" => Ok(Stage::Eval),
            "report" => Ok(Stage::Report),
            "all" => Ok(Stage::All),
            other => Err(PipelineError::Config(format!(
                "unknown stage `{other}` (expected ingest, segment, detect, eval, report, or all)"
            ))),
        }
    }
}

type StageFailure = Box<dyn std::error::Error + Send + Sync + 'static>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage} stage failed for dataset `{dataset}`: {source}")]
    Stage {
        stage: Stage,
        dataset: String,
        #[source]
        source: StageFailure,
    },
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("metrics file {}: missing column `{column}`", path.display())]
    MissingColumn { path: PathBuf, column: String },
    #[error("metrics file {} record {record}: {message}", path.display())]
    MetricsParse {
        path: PathBuf,
        record: usize,
        message: String,
    },
    #[error("no metrics files found under {}; run the eval stage first", .0.display())]
    NoMetrics(PathBuf),
}

/// One dataset to run: where its raw files live and how to describe the
/// host environment in prompts.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub events: PathBuf,
    pub entities: PathBuf,
    pub labels: PathBuf,
    /// Prompt environment clause, e.g. "a FreeBSD web server running nginx".
    pub environment: String,
}

/// Optional per-endpoint sampling overrides; unset fields take the
/// defaults (temperature 0.7 when voting, 0 for single-shot runs).
#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub temperature: Option<f64>,
    pub max_output_tokens: Option<u64>,
}

/// One model endpoint as configured. Prices are decimal dollars per 1k
/// tokens; the API key comes from `auth_env_var`, never the file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub name: String,
    #[serde(default)]
    pub base_url: String,
    #[serde(default = "default_auth_env_var")]
    pub auth_env_var: String,
    #[serde(default = "default_max_context_tokens")]
    pub max_context_tokens: u64,
    pub price_per_1k_prompt: f64,
    pub price_per_1k_completion: f64,
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
    /// Exactly one endpoint must be active per run.
    #[serde(default)]
    pub active: bool,
}

fn default_auth_env_var() -> String {
    "PROVHARNESS_API_KEY".into()
}

fn default_max_context_tokens() -> u64 {
    131_072
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_token_budget() -> u64 {
    131_072
}

/// The declarative run configuration. Relative paths resolve against the
/// config file's directory; CLI flags may override `root_seed`, `out_dir`,
/// and `mock_fixtures`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Window-size guard at the segment stage, in estimated tokens.
    #[serde(default = "default_token_budget")]
    pub token_budget: u64,
    /// Tokens that must never reach a prompt (dataset names, label ids).
    #[serde(default)]
    pub forbidden_tokens: Vec<String>,
    /// When set, completions come from this fixture directory instead of
    /// the network.
    #[serde(default)]
    pub mock_fixtures: Option<PathBuf>,
    #[serde(default)]
    pub detection: DetectionConfig,
    pub datasets: Vec<DatasetConfig>,
    pub endpoints: Vec<EndpointConfig>,
}

impl RunConfig {
    pub fn active_endpoint(&self) -> &EndpointConfig {
        self.endpoints
            .iter()
            .find(|e| e.active)
            .expect("validated: exactly one active endpoint")
    }

    /// Price schedule over every configured endpoint, for cost accounting
    /// across ledgers that may span models.
    pub fn price_table(&self) -> PriceTable {
        let mut table = PriceTable::default();
        for endpoint in &self.endpoints {
            table.insert(
                &endpoint.name,
                Currency::from_dollars(endpoint.price_per_1k_prompt),
                Currency::from_dollars(endpoint.price_per_1k_completion),
            );
        }
        table
    }

    fn dataset(&self, name: &str) -> Result<&DatasetConfig, PipelineError> {
        self.datasets
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| PipelineError::UnknownDataset(name.to_string()))
    }

    fn dataset_dir(&self, dataset: &str) -> PathBuf {
        self.out_dir.join(dataset)
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Loads and validates a TOML run configuration. All randomness flows from
/// `root_seed`: the detection seed is always set from it, whatever the
/// file says.
pub fn load_config(path: &Path) -> Result<RunConfig, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config: RunConfig = toml::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for dataset in &mut config.datasets {
        dataset.events = resolve(base, &dataset.events);
        dataset.entities = resolve(base, &dataset.entities);
        dataset.labels = resolve(base, &dataset.labels);
    }
    config.out_dir = resolve(base, &config.out_dir);
    if let Some(mock) = &config.mock_fixtures {
        config.mock_fixtures = Some(resolve(base, mock));
    }
    config.detection.rng_seed = config.root_seed;
    validate_config(&config)?;
    Ok(config)
}

fn validate_config(config: &RunConfig) -> Result<(), PipelineError> {
    let fail = |message: String| Err(PipelineError::Config(message));
    if config.datasets.is_empty() {
        return fail("at least one [[datasets]] entry is required".into());
    }
    let mut names = BTreeSet::new();
    for dataset in &config.datasets {
        if dataset.name.is_empty() {
            return fail("dataset name must not be empty".into());
        }
        if dataset.name.contains(['/', '\\']) || dataset.name == ".." {
            return fail(format!(
                "dataset name `{}` must be usable as a directory name",
                dataset.name
            ));
        }
        if !names.insert(&dataset.name) {
            return fail(format!("duplicate dataset name `{}`", dataset.name));
        }
        for (what, path) in [
            ("events", &dataset.events),
            ("entities", &dataset.entities),
            ("labels", &dataset.labels),
        ] {
            if !path.is_file() {
                return fail(format!(
                    "dataset `{}`: {what} file {} does not exist",
                    dataset.name,
                    path.display()
                ));
            }
        }
    }
    if config.endpoints.is_empty() {
        return fail("at least one [[endpoints]] entry is required".into());
    }
    let mut endpoint_names = BTreeSet::new();
    for endpoint in &config.endpoints {
        if endpoint.name.is_empty() {
            return fail("endpoint name must not be empty".into());
        }
        if !endpoint_names.insert(&endpoint.name) {
            return fail(format!("duplicate endpoint name `{}`", endpoint.name));
        }
        if endpoint.price_per_1k_prompt < 0.0 || endpoint.price_per_1k_completion < 0.0 {
            return fail(format!(
                "endpoint `{}`: prices must be non-negative",
                endpoint.name
            ));
        }
        if endpoint.max_context_tokens == 0 {
            return fail(format!(
                "endpoint `{}`: max_context_tokens must be positive",
                endpoint.name
            ));
        }
    }
    let active = config.endpoints.iter().filter(|e| e.active).count();
    if active != 1 {
        return fail(format!(
            "exactly one endpoint must have active = true, found {active}"
        ));
    }
    config
        .detection
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(())
}

/// Materializes the active endpoint. Single-shot runs (vote_k = 1) default
/// to temperature 0 for full determinism; voting runs default to 0.7 for
/// sample diversity. Explicit sampling keys always win.
fn model_endpoint(config: &RunConfig) -> ModelEndpoint {
    let endpoint = config.active_endpoint();
    let default_temperature = if config.detection.vote_k == 1 {
        0.0
    } else {
        0.7
    };
    let overrides = endpoint.sampling.unwrap_or_default();
    let sampling = SamplingParams {
        temperature: overrides.temperature.unwrap_or(default_temperature),
        max_output_tokens: overrides
            .max_output_tokens
            .unwrap_or(SamplingParams::default().max_output_tokens),
    };
    ModelEndpoint {
        name: endpoint.name.clone(),
        base_url: endpoint.base_url.clone(),
        auth_env_var: endpoint.auth_env_var.clone(),
        max_context_tokens: endpoint.max_context_tokens,
        price_per_1k_prompt: Currency::from_dollars(endpoint.price_per_1k_prompt),
        price_per_1k_completion: Currency::from_dollars(endpoint.price_per_1k_completion),
        sampling,
    }
}

fn build_client(config: &RunConfig) -> Result<LlmClient, StageFailure> {
    let endpoint = model_endpoint(config);
    let client = match &config.mock_fixtures {
        Some(dir) => LlmClient::new(endpoint, Box::new(MockBackend::new(dir)))?,
        None => LlmClient::new(
            endpoint,
            Box::new(HttpBackend::new(3, Duration::from_millis(250))),
        )?,
    };
    Ok(client)
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = File::create(path).map_err(io)?;
    file.write_all(contents.as_bytes()).map_err(io)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Creates the stage directory with a `.partial` marker; [`StageGuard::finish`]
/// removes the marker. A stage aborted by an error leaves it behind.
struct StageGuard {
    marker: PathBuf,
}

impl StageGuard {
    fn begin(stage_dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(stage_dir).map_err(|source| PipelineError::Io {
            path: stage_dir.to_path_buf(),
            source,
        })?;
        let marker = stage_dir.join(".partial");
        write_file(&marker, "")?;
        Ok(StageGuard { marker })
    }

    fn finish(self) -> Result<(), PipelineError> {
        fs::remove_file(&self.marker).map_err(|source| PipelineError::Io {
            path: self.marker.clone(),
            source,
        })
    }
}

fn write_jsonl<I: IntoIterator<Item = String>>(path: &Path, lines: I) -> Result<(), PipelineError> {
    let mut out = String::new();
    for line in lines {
        out.push_str(&line);
        out.push('\n');
    }
    write_file(path, &out)
}

// ---------------------------------------------------------------------
// Stage implementations. Each reads only persisted artifacts of earlier
// stages and returns a one-line human summary.
// ---------------------------------------------------------------------

fn ingest_dataset(config: &RunConfig, dataset: &DatasetConfig) -> Result<String, StageFailure> {
    let dir = config.dataset_dir(&dataset.name).join("ingest");
    let guard = StageGuard::begin(&dir)?;

    let log = load_event_log(&dataset.events, &dataset.entities, &dataset.name)?;
    let raw_count = log.events.len();
    let log = dedup_events(log);
    let truth = load_ground_truth_file(&dataset.labels, &log)?;

    write_jsonl(
        &dir.join("events.jsonl"),
        log.events.iter().map(ingest::event_to_json_line),
    )?;
    write_jsonl(
        &dir.join("entities.jsonl"),
        log.entities.values().map(ingest::entity_to_json_line),
    )?;
    write_file(
        &dir.join("labels.json"),
        &ingest::ground_truth_to_json(&truth),
    )?;
    guard.finish()?;
    Ok(format!(
        "ingest {}: {} events in, {} kept after dedup, {} entities, {} labeled malicious",
        dataset.name,
        raw_count,
        log.events.len(),
        log.entities.len(),
        truth.malicious_event_ids.len()
    ))
}

fn load_ingest_artifacts(
    config: &RunConfig,
    dataset: &DatasetConfig,
) -> Result<(EventLog, GroundTruth), StageFailure> {
    let dir = config.dataset_dir(&dataset.name).join("ingest");
    let entities = ingest::parse_entities(File::open(dir.join("entities.jsonl"))?)?;
    let log = ingest::parse_events(
        File::open(dir.join("events.jsonl"))?,
        entities,
        &dataset.name,
    )?;
    let truth = load_ground_truth(File::open(dir.join("labels.json"))?, &log)?;
    Ok((log, truth))
}

fn segment_dataset(config: &RunConfig, dataset: &DatasetConfig) -> Result<String, StageFailure> {
    let dir = config.dataset_dir(&dataset.name).join("segment");
    let guard = StageGuard::begin(&dir)?;

    let (log, truth) = load_ingest_artifacts(config, dataset)?;
    let interval = AttackInterval::new(truth.t_s, truth.t_e)?;
    let mut window = build_attack_window(&log.events, interval);

    // The budget check never truncates silently: a violation either trims
    // loudly (reported in the summary) or fails the stage.
    let mut trimmed = 0;
    match check_token_budget(&window, config.token_budget, &CharsPerFour) {
        Ok(_) => {}
        Err(SegmentError::BudgetExceeded { .. }) => {
            let before = window.event_count();
            window = trim_to_budget(&window, config.token_budget, &CharsPerFour)?;
            trimmed = before - window.event_count();
        }
        Err(e) => return Err(e.into()),
    }

    // Only the entities the window still references travel forward.
    let mut referenced: BTreeSet<EntityId> = BTreeSet::new();
    for event in window.iter_events() {
        referenced.insert(event.subject_id.clone());
        if let Some(object) = &event.object_id {
            referenced.insert(object.clone());
        }
    }

    write_file(&dir.join("window.jsonl"), &write_window_dump(&window))?;
    write_file(
        &dir.join("interval.json"),
        &serde_json::to_string(&interval)?,
    )?;
    write_jsonl(
        &dir.join("entities.jsonl"),
        log.entities
            .values()
            .filter(|e| referenced.contains(&e.entity_id))
            .map(ingest::entity_to_json_line),
    )?;
    write_file(
        &dir.join("labels.json"),
        &ingest::ground_truth_to_json(&truth),
    )?;
    guard.finish()?;

    let mut summary = format!(
        "segment {}: {} window events ({} pre / {} attack / {} post), ~{} tokens",
        dataset.name,
        window.event_count(),
        window.pre.len(),
        window.attack.len(),
        window.post.len(),
        window.token_estimate
    );
    if trimmed > 0 {
        summary.push_str(&format!(
            ", trimmed {trimmed} flank events to fit the {} token budget",
            config.token_budget
        ));
    }
    Ok(summary)
}

fn load_segment_artifacts(
    config: &RunConfig,
    dataset: &DatasetConfig,
) -> Result<(AttackWindow, BTreeMap<EntityId, Entity>, GroundTruth), StageFailure> {
    let dir = config.dataset_dir(&dataset.name).join("segment");
    let interval: AttackInterval = serde_json::from_str(&read_file(&dir.join("interval.json"))?)?;
    let window = read_window_dump(File::open(dir.join("window.jsonl"))?, interval)?;
    let entities = ingest::parse_entities(File::open(dir.join("entities.jsonl"))?)?;
    // Re-validate the labels against the window itself: attack events are
    // never trimmed, so every malicious id must still be present.
    let log = EventLog {
        dataset_name: dataset.name.clone(),
        events: window.iter_events().cloned().collect(),
        entities: entities.clone(),
    };
    let truth = load_ground_truth(File::open(dir.join("labels.json"))?, &log)?;
    Ok((window, entities, truth))
}

fn detect_dataset(config: &RunConfig, dataset: &DatasetConfig) -> Result<String, StageFailure> {
    let dir = config.dataset_dir(&dataset.name).join("detect");
    let guard = StageGuard::begin(&dir)?;

    let (window, entities, _) = load_segment_artifacts(config, dataset)?;
    let client = build_client(config)?;
    let outcome = run_detection(
        &window,
        &entities,
        &config.detection,
        &client,
        &dataset.environment,
        &config.forbidden_tokens,
    )?;

    write_file(
        &dir.join("detection.json"),
        &serde_json::to_string_pretty(&outcome)?,
    )?;
    let ledger_lines: Result<Vec<String>, serde_json::Error> = outcome
        .usage_log
        .iter()
        .map(|entry| {
            serde_json::to_string(&LedgerEntry {
                model: outcome.model.clone(),
                dataset: dataset.name.clone(),
                call: entry.call.clone(),
                usage: entry.usage.clone(),
            })
        })
        .collect();
    write_jsonl(&dir.join("ledger.jsonl"), ledger_lines?)?;
    guard.finish()?;

    Ok(format!(
        "detect {}: {} evidence commands, {} seed entities, {}-node payload, {} samples, {} indicators voted",
        dataset.name,
        outcome.evidence.commands.len(),
        outcome.evidence.seed_entities.len(),
        outcome.subgraph_nodes,
        outcome.samples.len(),
        outcome.final_report.ioc_count()
    ))
}

/// One row of a metrics CSV. `fpr_percent` is the false-positive rate in
/// percentage points, as reported in result tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub dataset: String,
    pub precision: f64,
    pub mcc: f64,
    pub fpr_percent: f64,
    #[serde(default)]
    pub no_alerts: bool,
}

fn eval_dataset(config: &RunConfig, dataset: &DatasetConfig) -> Result<String, StageFailure> {
    let dir = config.dataset_dir(&dataset.name).join("eval");
    let guard = StageGuard::begin(&dir)?;

    let (window, entities, truth) = load_segment_artifacts(config, dataset)?;
    let detection_path = config
        .dataset_dir(&dataset.name)
        .join("detect")
        .join("detection.json");
    let outcome: DetectionOutcome = serde_json::from_str(&read_file(&detection_path)?)?;

    let predicted = match_iocs(&outcome.final_report, &window, &entities);
    let confusion = compute_confusion(&predicted, &truth, &window);
    let metrics = compute_metrics(&confusion);
    let row = MetricsRow {
        model: outcome.model.clone(),
        dataset: dataset.name.clone(),
        precision: metrics.precision,
        mcc: metrics.mcc,
        fpr_percent: metrics.fpr * 100.0,
        no_alerts: metrics.no_alerts,
    };

    write_file(
        &dir.join("confusion.json"),
        &serde_json::to_string_pretty(&confusion)?,
    )?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.serialize(&row)?;
    let csv_bytes = writer.into_inner().map_err(|e| e.error().to_string())?;
    write_file(&dir.join("metrics.csv"), &String::from_utf8(csv_bytes)?)?;
    guard.finish()?;

    Ok(format!(
        "eval {}: tp={} fp={} tn={} fn={}, precision {:.3}, mcc {:.3}, fpr {:.3}%",
        dataset.name,
        confusion.true_positives,
        confusion.false_positives,
        confusion.true_negatives,
        confusion.false_negatives,
        metrics.precision,
        metrics.mcc,
        metrics.fpr * 100.0
    ))
}

/// Reads one metrics CSV, checking the schema before deserializing so a
/// missing column is named precisely.
pub fn read_metrics_file(path: &Path) -> Result<Vec<MetricsRow>, PipelineError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| PipelineError::MetricsParse {
        path: path.to_path_buf(),
        record: 0,
        message: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| PipelineError::MetricsParse {
            path: path.to_path_buf(),
            record: 0,
            message: e.to_string(),
        })?
        .clone();
    for column in ["model", "dataset", "precision", "mcc", "fpr_percent"] {
        if !headers.iter().any(|h| h == column) {
            return Err(PipelineError::MissingColumn {
                path: path.to_path_buf(),
                column: column.to_string(),
            });
        }
    }
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize::<MetricsRow>().enumerate() {
        rows.push(record.map_err(|e| PipelineError::MetricsParse {
            path: path.to_path_buf(),
            record: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Merges metrics rows from several files: union of rows, sorted by
/// (model, dataset).
pub fn merge_metrics(files: &[PathBuf]) -> Result<Vec<MetricsRow>, PipelineError> {
    let mut rows = Vec::new();
    for file in files {
        rows.extend(read_metrics_file(file)?);
    }
    rows.sort_by(|a, b| {
        (a.model.as_str(), a.dataset.as_str()).cmp(&(b.model.as_str(), b.dataset.as_str()))
    });
    Ok(rows)
}

/// How many sub-datasets a model must cover before a regime is assigned.
/// Partial vectors say little about worst-case behavior, so the verdict
/// waits for the full family.
pub const REGIME_DATASET_COUNT: usize = 9;

/// Per-model regime verdicts for models whose FPR vectors are complete:
/// one value for each of the nine sub-datasets seen in the merged table.
pub fn regime_rows(rows: &[MetricsRow]) -> Vec<(String, crate::scoring::RegimeAssignment)> {
    let datasets: BTreeSet<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
    if datasets.len() != REGIME_DATASET_COUNT {
        return Vec::new();
    }
    let mut by_model: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for row in rows {
        by_model
            .entry(&row.model)
            .or_default()
            .insert(&row.dataset, row.fpr_percent);
    }
    let mut verdicts = Vec::new();
    for (model, fprs) in by_model {
        if fprs.len() != datasets.len() {
            continue;
        }
        let vector: Vec<f64> = fprs.values().copied().collect();
        if let Ok(assignment) = classify_regime(&vector) {
            verdicts.push((model.to_string(), assignment));
        }
    }
    verdicts
}

fn render_metrics_csv(rows: &[MetricsRow]) -> Result<String, PipelineError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| PipelineError::Config(format!("csv render failed: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| PipelineError::Config(format!("csv render failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Plain-text results table: precision and MCC to 3 decimals, FPR as a
/// percentage to 3 decimals, one row per (model, dataset).
pub fn render_summary_table(rows: &[MetricsRow]) -> String {
    let model_width = rows
        .iter()
        .map(|r| r.model.len())
        .max()
        .unwrap_or(5)
        .max("model".len());
    let dataset_width = rows
        .iter()
        .map(|r| r.dataset.len())
        .max()
        .unwrap_or(7)
        .max("dataset".len());
    let mut out = String::new();
    out.push_str(&format!(
        "{:<model_width$}  {:<dataset_width$}  {:>7}  {:>7}  {:>8}\n",
        "model", "dataset", "pre", "mcc", "fpr%"
    ));
    out.push_str(&format!(
        "{:-<model_width$}  {:-<dataset_width$}  {:->7}  {:->7}  {:->8}\n",
        "", "", "", "", ""
    ));
    for row in rows {
        out.push_str(&format!(
            "{:<model_width$}  {:<dataset_width$}  {:>7.3}  {:>7.3}  {:>8.3}\n",
            row.model, row.dataset, row.precision, row.mcc, row.fpr_percent
        ));
    }
    out
}

fn render_regimes(verdicts: &[(String, crate::scoring::RegimeAssignment)]) -> String {
    let mut out = String::from("model,fpr_avg,fpr_max,regime\n");
    for (model, assignment) in verdicts {
        out.push_str(&format!(
            "{model},{:.3},{:.3},{}\n",
            assignment.fpr_avg,
            assignment.fpr_max,
            assignment.regime.as_str()
        ));
    }
    out
}

fn render_costs_csv(report: &CostReport) -> String {
    let mut out = String::from(
        "model,dataset,calls,prompt_tokens,completion_tokens,total_tokens,cost_usd,wall_time_s\n",
    );
    for (model, datasets) in &report.by_model {
        for (dataset, s) in datasets {
            out.push_str(&format!(
                "{model},{dataset},{},{},{},{},{},{:.3}\n",
                s.calls,
                s.prompt_tokens,
                s.completion_tokens,
                s.total_tokens,
                s.cost,
                s.wall_time_s
            ));
        }
    }
    out
}

fn report_run(config: &RunConfig) -> Result<String, PipelineError> {
    let metrics_files: Vec<PathBuf> = config
        .datasets
        .iter()
        .map(|d| config.dataset_dir(&d.name).join("eval").join("metrics.csv"))
        .filter(|p| p.is_file())
        .collect();
    if metrics_files.is_empty() {
        return Err(PipelineError::NoMetrics(config.out_dir.clone()));
    }
    let rows = merge_metrics(&metrics_files)?;

    let dir = config.out_dir.join("report");
    let guard = StageGuard::begin(&dir)?;
    write_file(&dir.join("metrics.csv"), &render_metrics_csv(&rows)?)?;

    let mut summary = render_summary_table(&rows);
    let verdicts = regime_rows(&rows);
    if !verdicts.is_empty() {
        write_file(&dir.join("regimes.csv"), &render_regimes(&verdicts))?;
        summary.push_str("\nregimes (avg / max FPR in percentage points):\n");
        for (model, a) in &verdicts {
            summary.push_str(&format!(
                "  {model}: {} (avg {:.3}, max {:.3})\n",
                a.regime.as_str(),
                a.fpr_avg,
                a.fpr_max
            ));
        }
    }

    let mut ledger: Vec<LedgerEntry> = Vec::new();
    for dataset in &config.datasets {
        let path = config
            .dataset_dir(&dataset.name)
            .join("detect")
            .join("ledger.jsonl");
        if !path.is_file() {
            continue;
        }
        for (i, line) in read_file(&path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: LedgerEntry =
                serde_json::from_str(line).map_err(|e| PipelineError::MetricsParse {
                    path: path.clone(),
                    record: i + 1,
                    message: e.to_string(),
                })?;
            ledger.push(entry);
        }
    }
    if !ledger.is_empty() {
        let costs = account_costs(&ledger, &config.price_table())
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        write_file(&dir.join("costs.csv"), &render_costs_csv(&costs))?;
        summary.push_str(&format!("\ntotal model spend: ${}\n", costs.total));
    }

    write_file(&dir.join("summary.txt"), &summary)?;
    guard.finish()?;
    Ok(format!(
        "report: {} metric rows from {} files -> {}",
        rows.len(),
        metrics_files.len(),
        dir.display()
    ))
}

/// Runs one stage (or the whole chain) for the selected datasets and
/// returns the per-step summaries in execution order.
pub fn run(
    config: &RunConfig,
    stage: Stage,
    dataset: Option<&str>,
) -> Result<Vec<String>, PipelineError> {
    let selected: Vec<&DatasetConfig> = match dataset {
        Some(name) => vec![config.dataset(name)?],
        None => config.datasets.iter().collect(),
    };
    let mut summaries = Vec::new();
    let run_one = |stage: Stage,
                   dataset: &DatasetConfig,
                   f: &dyn Fn(&RunConfig, &DatasetConfig) -> Result<String, StageFailure>|
     -> Result<String, PipelineError> {
        f(config, dataset).map_err(|source| PipelineError::Stage {
            stage,
            dataset: dataset.name.clone(),
            source,
        })
    };
    match stage {
        Stage::Ingest | Stage::Segment | Stage::Detect | Stage::Eval => {
            let f: &dyn Fn(&RunConfig, &DatasetConfig) -> Result<String, StageFailure> = match stage
            {
                Stage::Ingest => &ingest_dataset,
                Stage::Segment => &segment_dataset,
                Stage::Detect => &detect_dataset,
                Stage::Eval => &eval_dataset,
                _ => unreachable!(),
            };
            for dataset in selected {
                summaries.push(run_one(stage, dataset, f)?);
            }
        }
        Stage::Report => summaries.push(report_run(config)?),
        Stage::All => {
            for dataset in selected {
                summaries.push(run_one(Stage::Ingest, dataset, &ingest_dataset)?);
                summaries.push(run_one(Stage::Segment, dataset, &segment_dataset)?);
                summaries.push(run_one(Stage::Detect, dataset, &detect_dataset)?);
                summaries.push(run_one(Stage::Eval, dataset, &eval_dataset)?);
            }
            summaries.push(report_run(config)?);
        }
    }
    Ok(summaries)
}
