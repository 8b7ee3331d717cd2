//! Attack-centric windowing.
//!
//! Given a labeled attack interval `[t_s, t_e]` with duration Δt = t_e − t_s,
//! the window carves three temporally aligned segments out of the log:
//!
//! * `pre`    — events in `[t_s − Δt, t_s)`, clipped at 0,
//! * `attack` — events in `[t_s, t_e]` (both bounds inclusive),
//! * `post`   — events in `(t_e, t_e + Δt]`.
//!
//! The flanking segments give the model equal-duration benign context on
//! both sides of the attack. Token estimation and the context-budget check
//! live here too, since the window is the unit that must fit a model's
//! context limit.

use crate::ingest::{Event, GroundTruth};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};

/// The labeled attack span. Construction validates `t_s < t_e`, so the
/// duration is always positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "IntervalRepr", into = "IntervalRepr")]
pub struct AttackInterval {
    t_s: i64,
    t_e: i64,
}

#[derive(Serialize, Deserialize)]
struct IntervalRepr {
    t_s: i64,
    t_e: i64,
}

impl TryFrom<IntervalRepr> for AttackInterval {
    type Error = SegmentError;
    fn try_from(repr: IntervalRepr) -> Result<Self, Self::Error> {
        AttackInterval::new(repr.t_s, repr.t_e)
    }
}

impl From<AttackInterval> for IntervalRepr {
    fn from(i: AttackInterval) -> Self {
        IntervalRepr {
            t_s: i.t_s,
            t_e: i.t_e,
        }
    }
}

impl AttackInterval {
    pub fn new(t_s: i64, t_e: i64) -> Result<Self, SegmentError> {
        if t_s >= t_e {
            return Err(SegmentError::InvalidInterval { t_s, t_e });
        }
        Ok(AttackInterval { t_s, t_e })
    }

    pub fn from_ground_truth(truth: &GroundTruth) -> Result<Self, SegmentError> {
        Self::new(truth.t_s, truth.t_e)
    }

    pub fn t_s(&self) -> i64 {
        self.t_s
    }

    pub fn t_e(&self) -> i64 {
        self.t_e
    }

    /// Attack duration Δt = t_e − t_s; always > 0.
    pub fn delta_t(&self) -> i64 {
        self.t_e - self.t_s
    }

    /// Start of the pre segment, clipped at timestamp 0.
    pub fn pre_start(&self) -> i64 {
        (self.t_s - self.delta_t()).max(0)
    }

    /// End of the post segment (inclusive).
    pub fn post_end(&self) -> i64 {
        self.t_e.saturating_add(self.delta_t())
    }
}

/// Which of the three window segments an event belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Pre,
    Attack,
    Post,
}

impl Segment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Segment::Pre => "pre",
            Segment::Attack => "attack",
            Segment::Post => "post",
        }
    }
}

/// Classifies a timestamp against the window ranges; `None` means the event
/// falls outside the window entirely.
pub fn segment_of(ts: i64, interval: &AttackInterval) -> Option<Segment> {
    if ts >= interval.pre_start() && ts < interval.t_s() {
        Some(Segment::Pre)
    } else if ts >= interval.t_s() && ts <= interval.t_e() {
        Some(Segment::Attack)
    } else if ts > interval.t_e() && ts <= interval.post_end() {
        Some(Segment::Post)
    } else {
        None
    }
}

/// The attack-centric slice of a log: benign context, the attack span, and
/// benign aftermath, each timestamp-sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackWindow {
    pub interval: AttackInterval,
    pub pre: Vec<Event>,
    pub attack: Vec<Event>,
    pub post: Vec<Event>,
    /// Estimate under the default heuristic at build time; refreshed by
    /// [`trim_to_budget`].
    pub token_estimate: u64,
}

impl AttackWindow {
    /// All window events in timestamp order (pre ‖ attack ‖ post).
    pub fn iter_events(&self) -> impl Iterator<Item = &Event> {
        self.pre
            .iter()
            .chain(self.attack.iter())
            .chain(self.post.iter())
    }

    pub fn event_count(&self) -> usize {
        self.pre.len() + self.attack.len() + self.post.len()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SegmentError {
    #[error("invalid attack interval: t_s {t_s} must be earlier than t_e {t_e}")]
    InvalidInterval { t_s: i64, t_e: i64 },
    #[error("window estimate of {estimate} tokens exceeds the context budget of {budget}")]
    BudgetExceeded { estimate: u64, budget: u64 },
    #[error(
        "attack segment alone estimates {estimate} tokens, over the context budget of {budget}; \
         trimming benign context cannot help"
    )]
    AttackOverBudget { estimate: u64, budget: u64 },
    #[error("window dump line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(
        "window dump line {line}: event at t={ts} is tagged `{found}` but the interval places it in `{expected}`"
    )]
    SegmentMismatch {
        line: usize,
        ts: i64,
        found: String,
        expected: String,
    },
    #[error("io error reading window dump: {0}")]
    Io(#[from] std::io::Error),
}

/// Estimates how many tokens a piece of text costs a model.
///
/// The endpoint's own usage counts are authoritative; estimators exist only
/// for pre-flight budget checks, so a cheap heuristic is fine.
pub trait TokenEstimator {
    fn estimate(&self, text: &str) -> u64;
}

/// Default heuristic: ⌈characters / 4⌉.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharsPerFour;

impl TokenEstimator for CharsPerFour {
    fn estimate(&self, text: &str) -> u64 {
        (text.chars().count() as u64).div_ceil(4)
    }
}

/// Builds the three-segment window from a sorted log. Events outside
/// `[pre_start, post_end]` are dropped; empty segments are legal.
pub fn build_attack_window(events: &[Event], interval: AttackInterval) -> AttackWindow {
    let mut pre = Vec::new();
    let mut attack = Vec::new();
    let mut post = Vec::new();
    for event in events {
        match segment_of(event.timestamp_ns, &interval) {
            Some(Segment::Pre) => pre.push(event.clone()),
            Some(Segment::Attack) => attack.push(event.clone()),
            Some(Segment::Post) => post.push(event.clone()),
            None => {}
        }
    }
    let mut window = AttackWindow {
        interval,
        pre,
        attack,
        post,
        token_estimate: 0,
    };
    window.token_estimate = estimate_tokens(&window, &CharsPerFour);
    window
}

/// Token estimate for the window's dump serialization under `estimator`.
pub fn estimate_tokens(window: &AttackWindow, estimator: &dyn TokenEstimator) -> u64 {
    estimator.estimate(&write_window_dump(window))
}

/// Pre-flight context check: returns the estimate, or a structured
/// violation if it exceeds `budget`. Never truncates silently.
pub fn check_token_budget(
    window: &AttackWindow,
    budget: u64,
    estimator: &dyn TokenEstimator,
) -> Result<u64, SegmentError> {
    let estimate = estimate_tokens(window, estimator);
    if estimate > budget {
        Err(SegmentError::BudgetExceeded { estimate, budget })
    } else {
        Ok(estimate)
    }
}

/// Tail-trim mode for over-budget windows: benign events are removed from
/// the outer ends of the window — earliest pre, latest post, alternating —
/// so the context closest to the attack survives longest. Attack events are
/// never removed; if the attack segment alone is over budget the trim fails.
pub fn trim_to_budget(
    window: &AttackWindow,
    budget: u64,
    estimator: &dyn TokenEstimator,
) -> Result<AttackWindow, SegmentError> {
    let mut trimmed = window.clone();
    let mut take_pre = true;
    loop {
        let estimate = estimate_tokens(&trimmed, estimator);
        if estimate <= budget {
            trimmed.token_estimate = estimate;
            return Ok(trimmed);
        }
        if trimmed.pre.is_empty() && trimmed.post.is_empty() {
            return Err(SegmentError::AttackOverBudget { estimate, budget });
        }
        // Alternate sides; fall through to the other side when one is spent.
        if take_pre && !trimmed.pre.is_empty() {
            trimmed.pre.remove(0);
        } else if !trimmed.post.is_empty() {
            trimmed.post.pop();
        } else {
            trimmed.pre.remove(0);
        }
        take_pre = !take_pre;
    }
}

#[derive(Serialize, Deserialize)]
struct DumpLine {
    segment: Segment,
    event_id: String,
    ts_ns: i64,
    #[serde(rename = "type")]
    event_type: String,
    subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cmdline: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    extra: BTreeMap<String, String>,
}

fn dump_line(segment: Segment, event: &Event) -> DumpLine {
    DumpLine {
        segment,
        event_id: event.event_id.0.clone(),
        ts_ns: event.timestamp_ns,
        event_type: event.event_type.clone(),
        subject: event.subject_id.0.clone(),
        object: event.object_id.as_ref().map(|o| o.0.clone()),
        cmdline: event.cmdline.clone(),
        extra: event.extra.clone(),
    }
}

/// Serializes the window in the dump format: line-delimited canonical events
/// with a `"segment"` tag of `pre`, `attack`, or `post`, in window order.
pub fn write_window_dump(window: &AttackWindow) -> String {
    let mut out = String::new();
    let sections = [
        (Segment::Pre, &window.pre),
        (Segment::Attack, &window.attack),
        (Segment::Post, &window.post),
    ];
    for (segment, events) in sections {
        for event in events {
            let line =
                serde_json::to_string(&dump_line(segment, event)).expect("window events serialize");
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

/// Reads a window dump back, validating every line's segment tag against
/// the interval's ranges.
pub fn read_window_dump<R: Read>(
    reader: R,
    interval: AttackInterval,
) -> Result<AttackWindow, SegmentError> {
    let mut pre = Vec::new();
    let mut attack = Vec::new();
    let mut post = Vec::new();
    for (line_no, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: DumpLine = serde_json::from_str(&line).map_err(|e| SegmentError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let expected = segment_of(raw.ts_ns, &interval);
        if expected != Some(raw.segment) {
            return Err(SegmentError::SegmentMismatch {
                line: line_no,
                ts: raw.ts_ns,
                found: raw.segment.as_str().to_string(),
                expected: expected.map_or("outside window".to_string(), |s| s.as_str().to_string()),
            });
        }
        let event = Event {
            event_id: raw.event_id.into(),
            timestamp_ns: raw.ts_ns,
            event_type: raw.event_type,
            subject_id: raw.subject.into(),
            object_id: raw.object.map(Into::into),
            cmdline: raw.cmdline,
            extra: raw.extra,
        };
        match raw.segment {
            Segment::Pre => pre.push(event),
            Segment::Attack => attack.push(event),
            Segment::Post => post.push(event),
        }
    }
    let mut window = AttackWindow {
        interval,
        pre,
        attack,
        post,
        token_estimate: 0,
    };
    window.token_estimate = estimate_tokens(&window, &CharsPerFour);
    Ok(window)
}
