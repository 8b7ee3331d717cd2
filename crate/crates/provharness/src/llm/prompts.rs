//! Prompt rendering.
//!
//! Two fixed templates drive the whole detection flow: the evidence prompt
//! (suspicious command-line triage) and the investigation prompt (attack
//! reconstruction over a serialized provenance graph). A third,
//! harness-authored refinement prompt supports the self-reflection modes.
//!
//! Templates are rendered as plain text with three substitution points: the
//! command list, the environment description, and the graph payload. The
//! leading `Required:` line states each template's input contract; the
//! payload itself is substituted once, in the body, so large inputs are not
//! duplicated.
//!
//! Rendered prompts must never leak evaluation context — dataset names,
//! label file paths, ground-truth identifiers. [`scan_forbidden`] enforces
//! that with a configurable token scan applied before any completion call.

use std::fmt::Write as _;

/// Which template a prompt was rendered from. The mock backend sniffs this
/// from prompt text to pick fallback fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    /// Malicious-evidence identification over command lines.
    Mei,
    /// Attack-chain reconstruction over a serialized graph.
    Acr,
    /// Self-reflection refinement of a prior report.
    Reflect,
}

impl PromptKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::Mei => "mei",
            PromptKind::Acr => "acr",
            PromptKind::Reflect => "reflect",
        }
    }
}

/// Guesses the template a rendered prompt came from by its opening line.
pub fn sniff_prompt_kind(prompt: &str) -> Option<PromptKind> {
    if prompt.starts_with("Required: Command lines") {
        Some(PromptKind::Mei)
    } else if prompt.starts_with("Required: Provenance graph.") {
        Some(PromptKind::Acr)
    } else if prompt.starts_with("You previously produced the investigation report") {
        Some(PromptKind::Reflect)
    } else {
        None
    }
}

/// Renders a command list as a bracketed, double-quoted sequence, so
/// commands containing commas stay unambiguous: `["ls", "rm -rf /tmp/x"]`.
fn render_command_list(commands: &[String]) -> String {
    let mut out = String::from("[");
    for (i, command) in commands.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('"');
        out.push_str(&command.replace('\\', "\\\\").replace('"', "\\\""));
        out.push('"');
    }
    out.push(']');
    out
}

/// Renders the evidence-identification prompt over the window's distinct
/// command lines.
pub fn render_mei_prompt(commands: &[String], env: &str) -> String {
    let mut p = String::new();
    p.push_str("Required: Command lines in truncated events.\n");
    p.push('\n');
    p.push_str(
        "Analyze the command lines and identify all commands related to attacks or highly \
         suspicious malware activity without internet search.\n",
    );
    p.push('\n');
    let _ = writeln!(p, "- Command Lines: {}.", render_command_list(commands));
    let _ = writeln!(
        p,
        "- Environment: The command lines are collected on {env}."
    );
    p.push_str(
        "- Output Format:\n\
         \x20 - Command line 1: [The command line]\n\
         \x20   Reason: [Brief description]\n\
         \x20 - Command line 2: [The command line]\n\
         \x20   Reason: [Brief description]\n\
         \x20 - ...\n\
         - Summarize All Highly Suspicious Commands:\n\
         \x20 - 1. [Command line].\n\
         \x20 - 2. [Command line].\n\
         \x20 - ...\n",
    );
    p
}

/// The investigation prompt's guideline and output-format scaffold, shared
/// with the refinement prompt so refined responses keep the same shape.
fn acr_output_scaffold(p: &mut String) {
    p.push_str(
        "- Output Format:\n\
         \x20 - Attack Narrative: A concise paragraph summarizing the attack flow.\n\
         \x20 - Key Steps:\n\
         \x20   1) [Tactic name]: description of the attack step\n\
         \x20   2) [Tactic name]: description of the attack step\n\
         \x20   ...\n\
         \x20 - IoCs:\n\
         \x20   - IPs: [Suspicious IPs]\n\
         \x20   - Processes: [Suspicious process names]\n\
         \x20   - Files: [Suspicious file modifications or deletions]\n",
    );
}

/// Renders the attack-investigation prompt around a serialized graph.
/// `graph_text` is substituted verbatim (it already ends in a newline).
pub fn render_acr_prompt(graph_text: &str, env: &str) -> String {
    let mut p = String::new();
    p.push_str("Required: Provenance graph.\n");
    p.push('\n');
    p.push_str(
        "Inspect the provided provenance graph. Analyze the graph to determine whether it \
         indicates malicious activity. Use only the given information (no external lookup).\n",
    );
    p.push('\n');
    p.push_str("- Logs (Graph):\n");
    p.push_str(graph_text);
    if !graph_text.ends_with('\n') {
        p.push('\n');
    }
    let _ = writeln!(p, "- Environment: The logs are collected on {env}");
    p.push_str(
        "- Guidelines:\n\
         \x20 - Provenance: Use knowledge of attack patterns, tools, and techniques to identify \
         IoCs from graph interactions.\n\
         \x20 - Attack Narrative: Summarize the attack flow using a kill chain perspective.\n\
         \x20 - Tools: Pay attention to specific tools (e.g., Metasploit, Meterpreter, \
         PowerShell).\n\
         \x20 - Timeline: Construct a chronological step-by-step description based on graph \
         structure and temporal signals (if available).\n\
         \x20 - IoCs: Identify suspicious IPs, domains, processes, and files.\n",
    );
    acr_output_scaffold(&mut p);
    p
}

/// Renders the self-reflection prompt: the model re-examines a prior report
/// against the same graph, drops unsupported indicators, and answers in the
/// investigation output format.
pub fn render_reflect_prompt(report_text: &str, graph_text: &str, env: &str) -> String {
    let mut p = String::new();
    p.push_str(
        "You previously produced the investigation report below from the provenance graph \
         that follows. Re-examine the graph and verify every indicator of compromise in the \
         report: remove any IP, process, or file the graph does not support, and add any \
         clearly supported indicator that was missed. Use only the given information (no \
         external lookup).\n",
    );
    p.push('\n');
    p.push_str("- Report:\n");
    p.push_str(report_text);
    if !report_text.ends_with('\n') {
        p.push('\n');
    }
    p.push_str("- Logs (Graph):\n");
    p.push_str(graph_text);
    if !graph_text.ends_with('\n') {
        p.push('\n');
    }
    let _ = writeln!(p, "- Environment: The logs are collected on {env}");
    acr_output_scaffold(&mut p);
    p
}

/// Case-insensitive scan for forbidden tokens (dataset names, label file
/// identifiers). Returns every configured token found in the text.
pub fn scan_forbidden(text: &str, forbidden: &[String]) -> Vec<String> {
    let haystack = text.to_lowercase();
    forbidden
        .iter()
        .filter(|token| !token.is_empty() && haystack.contains(&token.to_lowercase()))
        .cloned()
        .collect()
}

/// Fails with the offending tokens when a rendered prompt leaks any
/// forbidden token.
pub fn guard_contamination(prompt: &str, forbidden: &[String]) -> Result<(), super::LlmError> {
    let hits = scan_forbidden(prompt, forbidden);
    if hits.is_empty() {
        Ok(())
    } else {
        Err(super::LlmError::Contaminated(hits))
    }
}
