//! Render the three prompt templates and run the contamination guard.
//!
//! Every model call uses one of these fixed templates: command triage,
//! graph investigation, or report refinement. The guard rejects any
//! rendered prompt containing a configured forbidden token, keeping
//! evaluation context (label files, dataset identifiers) out of model
//! inputs.
//!
//! ```sh
//! cargo run --example prompt_rendering
//! ```

use std::error::Error;

use provharness::llm::prompts::{
    guard_contamination, render_acr_prompt, render_mei_prompt, render_reflect_prompt,
    scan_forbidden,
};

fn main() -> Result<(), Box<dyn Error>> {
    let env = "a FreeBSD web server running nginx";

    let commands = vec![
        "/usr/sbin/cron -s".to_string(),
        "/bin/sh -c /tmp/vUgefal".to_string(),
    ];
    let mei = render_mei_prompt(&commands, env);
    println!("=== command triage prompt ===\n{mei}");

    let graph_text = "NODES 2\nvugefal process path=\"/tmp/vUgefal\"\n\
                      c2 netflow rip=146.153.68.151 rport=443\n\
                      EDGES 1\ne033 vugefal c2 CONNECT t=1100000\n";
    let acr = render_acr_prompt(graph_text, env);
    println!("=== investigation prompt ===\n{acr}");

    let report_text = "- Attack Narrative: A dropped binary beaconed out.\n";
    let reflect = render_reflect_prompt(report_text, graph_text, env);
    println!("=== refinement prompt (first lines) ===");
    for line in reflect.lines().take(4) {
        println!("{line}");
    }

    // The guard: prompts carrying evaluation context are refused before
    // any completion call.
    let forbidden = vec!["labels.json".to_string(), "ground truth".to_string()];
    guard_contamination(&acr, &forbidden)?;
    println!("\ninvestigation prompt is clean under {forbidden:?}");

    let leaky = render_mei_prompt(&["cat labels.json".to_string()], env);
    let hits = scan_forbidden(&leaky, &forbidden);
    println!("a leaky prompt would be blocked; scan found {hits:?}");
    assert!(guard_contamination(&leaky, &forbidden).is_err());
    Ok(())
}
