//! Canonical telemetry ingestion.
//!
//! Raw vendor formats are out of scope; converters are expected to emit the
//! canonical line-delimited JSON schema handled here. One event per line:
//!
//! ```text
//! {"event_id":"e1","ts_ns":1000,"type":"EVENT_EXECUTE","subject":"p1",
//!  "object":"f1","cmdline":"/bin/sh -c ./run","extra":{"tty":"none"}}
//! ```
//!
//! plus an entities sidecar, one entity per line:
//!
//! ```text
//! {"entity_id":"p1","kind":"process","path":"/bin/sh"}
//! {"entity_id":"n1","kind":"netflow","rip":"10.0.0.9","rport":443}
//! ```
//!
//! and a label file:
//!
//! ```text
//! {"malicious_event_ids":["e7","e9"],"t_s":5000,"t_e":9000,"note":"..."}
//! ```
//!
//! Unknown top-level keys on an event record are preserved in its `extra`
//! map (non-string values are kept as compact JSON text). Events are sorted
//! by `(ts_ns, event_id)` so re-parsing a file always yields the same log.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

/// Opaque entity identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub String);

/// Opaque event identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(pub String);

macro_rules! id_impls {
    ($t:ty) => {
        impl $t {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
        impl From<&str> for $t {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
        impl From<String> for $t {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
        impl std::borrow::Borrow<str> for $t {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}
id_impls!(EntityId);
id_impls!(EventId);

/// One normalized audit record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: EventId,
    pub timestamp_ns: i64,
    pub event_type: String,
    pub subject_id: EntityId,
    /// Absent for subject-only events (e.g. exit, clone without target).
    pub object_id: Option<EntityId>,
    pub cmdline: Option<String>,
    pub extra: BTreeMap<String, String>,
}

/// Kind of system entity a node represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Process,
    File,
    Netflow,
}

impl EntityKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntityKind::Process => "process",
            EntityKind::File => "file",
            EntityKind::Netflow => "netflow",
        }
    }
}

impl std::str::FromStr for EntityKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "process" => Ok(EntityKind::Process),
            "file" => Ok(EntityKind::File),
            "netflow" => Ok(EntityKind::Netflow),
            other => Err(format!("unknown entity kind `{other}`")),
        }
    }
}

/// A process, file, or network-flow entity referenced by events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub entity_id: EntityId,
    pub kind: EntityKind,
    /// Process image path or file path.
    pub path: Option<String>,
    pub remote_ip: Option<String>,
    pub remote_port: Option<u16>,
    pub local_ip: Option<String>,
    pub local_port: Option<u16>,
}

impl Entity {
    /// Kind-consistency check: netflows need at least one address attribute;
    /// processes and files must not carry network attributes.
    fn validate(&self) -> Result<(), String> {
        let has_net = self.remote_ip.is_some()
            || self.remote_port.is_some()
            || self.local_ip.is_some()
            || self.local_port.is_some();
        match self.kind {
            EntityKind::Netflow => {
                if !has_net {
                    return Err("netflow entity carries no ip or port".into());
                }
            }
            EntityKind::Process | EntityKind::File => {
                if has_net {
                    return Err(format!(
                        "{} entity carries network attributes",
                        self.kind.as_str()
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A validated, timestamp-sorted event log with its entity table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    pub dataset_name: String,
    pub events: Vec<Event>,
    pub entities: BTreeMap<EntityId, Entity>,
}

impl EventLog {
    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }
}

/// Ground-truth labels for one dataset: the malicious event ids and the
/// documented attack interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub malicious_event_ids: BTreeSet<EventId>,
    pub t_s: i64,
    pub t_e: i64,
    pub source_note: String,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate event id `{0}`")]
    DuplicateEvent(EventId),
    #[error("duplicate entity id `{0}`")]
    DuplicateEntity(EntityId),
    #[error("invalid event `{id}`: {message}")]
    InvalidEvent { id: EventId, message: String },
    #[error("invalid entity `{id}`: {message}")]
    InvalidEntity { id: EntityId, message: String },
    #[error("events reference entities missing from the sidecar: {}", format_ids(.0))]
    DanglingEntityRefs(Vec<EntityId>),
    #[error("labels reference event ids missing from the log: {}", format_ids(.0))]
    UnknownLabelIds(Vec<EventId>),
    #[error("invalid attack interval: t_s {t_s} must be earlier than t_e {t_e}")]
    InvalidInterval { t_s: i64, t_e: i64 },
    #[error("malicious event `{id}` at t={ts} lies outside the attack interval [{t_s}, {t_e}]")]
    LabelOutsideInterval {
        id: EventId,
        ts: i64,
        t_s: i64,
        t_e: i64,
    },
}

fn format_ids<T: fmt::Display>(ids: &[T]) -> String {
    ids.iter()
        .map(|id| format!("`{id}`"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Deserialize)]
struct RawEvent {
    event_id: String,
    ts_ns: i64,
    #[serde(rename = "type")]
    event_type: String,
    subject: String,
    #[serde(default)]
    object: Option<String>,
    #[serde(default)]
    cmdline: Option<String>,
    #[serde(default)]
    extra: BTreeMap<String, serde_json::Value>,
    #[serde(flatten)]
    unknown: BTreeMap<String, serde_json::Value>,
}

#[derive(Deserialize)]
struct RawEntity {
    entity_id: String,
    kind: EntityKind,
    #[serde(default)]
    path: Option<String>,
    #[serde(default)]
    rip: Option<String>,
    #[serde(default)]
    rport: Option<u16>,
    #[serde(default)]
    lip: Option<String>,
    #[serde(default)]
    lport: Option<u16>,
}

#[derive(Deserialize)]
struct RawLabels {
    malicious_event_ids: Vec<String>,
    t_s: i64,
    t_e: i64,
    #[serde(default)]
    note: String,
}

fn value_to_attr(value: serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

/// Parses the entities sidecar (line-delimited JSON).
pub fn parse_entities<R: Read>(reader: R) -> Result<BTreeMap<EntityId, Entity>, IngestError> {
    let mut entities = BTreeMap::new();
    for (line_no, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = line_no + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: format!("<entities line {line_no}>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntity = serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let entity = Entity {
            entity_id: EntityId(raw.entity_id),
            kind: raw.kind,
            path: raw.path,
            remote_ip: raw.rip,
            remote_port: raw.rport,
            local_ip: raw.lip,
            local_port: raw.lport,
        };
        if entity.entity_id.as_str().is_empty() {
            return Err(IngestError::InvalidEntity {
                id: entity.entity_id,
                message: "empty entity id".into(),
            });
        }
        entity
            .validate()
            .map_err(|message| IngestError::InvalidEntity {
                id: entity.entity_id.clone(),
                message,
            })?;
        if entities
            .insert(entity.entity_id.clone(), entity.clone())
            .is_some()
        {
            return Err(IngestError::DuplicateEntity(entity.entity_id));
        }
    }
    Ok(entities)
}

/// Parses canonical events against an entity table into a validated,
/// sorted [`EventLog`].
pub fn parse_events<R: Read>(
    reader: R,
    entities: BTreeMap<EntityId, Entity>,
    dataset_name: &str,
) -> Result<EventLog, IngestError> {
    let mut events = Vec::new();
    let mut seen_ids = BTreeSet::new();
    let mut missing: BTreeSet<EntityId> = BTreeSet::new();
    for (line_no, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = line_no + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: format!("<events line {line_no}>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEvent = serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut extra: BTreeMap<String, String> = raw
            .extra
            .into_iter()
            .map(|(k, v)| (k, value_to_attr(v)))
            .collect();
        for (k, v) in raw.unknown {
            extra.entry(k).or_insert_with(|| value_to_attr(v));
        }
        let event = Event {
            event_id: EventId(raw.event_id),
            timestamp_ns: raw.ts_ns,
            event_type: raw.event_type,
            subject_id: EntityId(raw.subject),
            object_id: raw.object.map(EntityId),
            cmdline: raw.cmdline,
            extra,
        };
        if event.event_id.as_str().is_empty() {
            return Err(IngestError::InvalidEvent {
                id: event.event_id,
                message: "empty event id".into(),
            });
        }
        if event.timestamp_ns < 0 {
            return Err(IngestError::InvalidEvent {
                id: event.event_id,
                message: format!("negative timestamp {}", event.timestamp_ns),
            });
        }
        if event.subject_id.as_str().is_empty() {
            return Err(IngestError::InvalidEvent {
                id: event.event_id,
                message: "empty subject id".into(),
            });
        }
        if event.event_type.is_empty() {
            return Err(IngestError::InvalidEvent {
                id: event.event_id,
                message: "empty event type".into(),
            });
        }
        if !seen_ids.insert(event.event_id.clone()) {
            return Err(IngestError::DuplicateEvent(event.event_id));
        }
        if !entities.contains_key(&event.subject_id) {
            missing.insert(event.subject_id.clone());
        }
        if let Some(obj) = &event.object_id {
            if !entities.contains_key(obj) {
                missing.insert(obj.clone());
            }
        }
        events.push(event);
    }
    if !missing.is_empty() {
        return Err(IngestError::DanglingEntityRefs(
            missing.into_iter().collect(),
        ));
    }
    events.sort_by(|a, b| {
        a.timestamp_ns
            .cmp(&b.timestamp_ns)
            .then_with(|| a.event_id.cmp(&b.event_id))
    });
    Ok(EventLog {
        dataset_name: dataset_name.to_string(),
        events,
        entities,
    })
}

/// Loads an event log from the canonical events file and entities sidecar.
pub fn load_event_log(
    events_path: &Path,
    entities_path: &Path,
    dataset_name: &str,
) -> Result<EventLog, IngestError> {
    let entities_file = File::open(entities_path).map_err(|source| IngestError::Io {
        path: entities_path.display().to_string(),
        source,
    })?;
    let entities = parse_entities(entities_file)?;
    let events_file = File::open(events_path).map_err(|source| IngestError::Io {
        path: events_path.display().to_string(),
        source,
    })?;
    parse_events(events_file, entities, dataset_name)
}

/// Collapses redundant events: among events sharing the dedup key
/// `(subject, object, type, cmdline, object path)` only the earliest is
/// retained. Relative order of retained events is unchanged.
pub fn dedup_events(log: EventLog) -> EventLog {
    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    struct Key(
        EntityId,
        Option<EntityId>,
        String,
        Option<String>,
        Option<String>,
    );

    let mut seen: BTreeSet<Key> = BTreeSet::new();
    let object_path = |id: &Option<EntityId>| -> Option<String> {
        id.as_ref()
            .and_then(|id| log.entities.get(id))
            .and_then(|e| e.path.clone())
    };
    let mut events = Vec::with_capacity(log.events.len());
    for event in &log.events {
        let key = Key(
            event.subject_id.clone(),
            event.object_id.clone(),
            event.event_type.clone(),
            event.cmdline.clone(),
            object_path(&event.object_id),
        );
        if seen.insert(key) {
            events.push(event.clone());
        }
    }
    EventLog {
        dataset_name: log.dataset_name,
        events,
        entities: log.entities,
    }
}

/// Loads and validates ground-truth labels against a log.
pub fn load_ground_truth<R: Read>(reader: R, log: &EventLog) -> Result<GroundTruth, IngestError> {
    let mut text = String::new();
    let mut reader = BufReader::new(reader);
    reader
        .read_to_string(&mut text)
        .map_err(|source| IngestError::Io {
            path: "<labels>".into(),
            source,
        })?;
    let raw: RawLabels = serde_json::from_str(&text).map_err(|e| IngestError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    if raw.t_s >= raw.t_e {
        return Err(IngestError::InvalidInterval {
            t_s: raw.t_s,
            t_e: raw.t_e,
        });
    }
    let by_id: BTreeMap<&str, &Event> = log
        .events
        .iter()
        .map(|e| (e.event_id.as_str(), e))
        .collect();
    let mut malicious = BTreeSet::new();
    let mut unknown = Vec::new();
    for id in raw.malicious_event_ids {
        let id = EventId(id);
        match by_id.get(id.as_str()) {
            Some(event) => {
                if event.timestamp_ns < raw.t_s || event.timestamp_ns > raw.t_e {
                    return Err(IngestError::LabelOutsideInterval {
                        id,
                        ts: event.timestamp_ns,
                        t_s: raw.t_s,
                        t_e: raw.t_e,
                    });
                }
                malicious.insert(id);
            }
            None => unknown.push(id),
        }
    }
    if !unknown.is_empty() {
        return Err(IngestError::UnknownLabelIds(unknown));
    }
    Ok(GroundTruth {
        malicious_event_ids: malicious,
        t_s: raw.t_s,
        t_e: raw.t_e,
        source_note: raw.note,
    })
}

/// Loads ground truth from a label file path.
pub fn load_ground_truth_file(path: &Path, log: &EventLog) -> Result<GroundTruth, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_ground_truth(file, log)
}

/// Renders an event as one line of the canonical wire format — the inverse
/// of [`parse_events`] for round-trippable artifacts.
pub fn event_to_json_line(event: &Event) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("event_id".into(), event.event_id.as_str().into());
    obj.insert("ts_ns".into(), event.timestamp_ns.into());
    obj.insert("type".into(), event.event_type.as_str().into());
    obj.insert("subject".into(), event.subject_id.as_str().into());
    if let Some(object) = &event.object_id {
        obj.insert("object".into(), object.as_str().into());
    }
    if let Some(cmdline) = &event.cmdline {
        obj.insert("cmdline".into(), cmdline.as_str().into());
    }
    if !event.extra.is_empty() {
        let extra: serde_json::Map<String, serde_json::Value> = event
            .extra
            .iter()
            .map(|(k, v)| (k.clone(), v.as_str().into()))
            .collect();
        obj.insert("extra".into(), extra.into());
    }
    serde_json::Value::Object(obj).to_string()
}

/// Renders an entity as one line of the sidecar wire format — the inverse
/// of [`parse_entities`].
pub fn entity_to_json_line(entity: &Entity) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("entity_id".into(), entity.entity_id.as_str().into());
    obj.insert("kind".into(), entity.kind.as_str().into());
    if let Some(path) = &entity.path {
        obj.insert("path".into(), path.as_str().into());
    }
    if let Some(rip) = &entity.remote_ip {
        obj.insert("rip".into(), rip.as_str().into());
    }
    if let Some(rport) = entity.remote_port {
        obj.insert("rport".into(), rport.into());
    }
    if let Some(lip) = &entity.local_ip {
        obj.insert("lip".into(), lip.as_str().into());
    }
    if let Some(lport) = entity.local_port {
        obj.insert("lport".into(), lport.into());
    }
    serde_json::Value::Object(obj).to_string()
}

/// Renders ground truth in the label-file wire format — the inverse of
/// [`load_ground_truth`].
pub fn ground_truth_to_json(truth: &GroundTruth) -> String {
    let ids: Vec<&str> = truth
        .malicious_event_ids
        .iter()
        .map(|id| id.as_str())
        .collect();
    serde_json::json!({
        "malicious_event_ids": ids,
        "t_s": truth.t_s,
        "t_e": truth.t_e,
        "note": truth.source_note,
    })
    .to_string()
}
