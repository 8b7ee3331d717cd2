//! Aggregate sampled investigation reports by strict-majority voting.
//!
//! An indicator survives only when it appears in more than half of the
//! samples (after normalization, so quoting and backticks don't split
//! votes). The narrative and key steps come from the sample closest to the
//! voted indicator sets. Voting is invariant to sample order.
//!
//! ```sh
//! cargo run --example majority_voting
//! ```

use std::error::Error;

use provharness::detect::majority_vote;
use provharness::llm::report::InvestigationReport;

fn report(ips: &[&str], procs: &[&str], files: &[&str], narrative: &str) -> InvestigationReport {
    InvestigationReport {
        narrative: narrative.to_string(),
        key_steps: Vec::new(),
        ioc_ips: ips.iter().map(|s| s.to_string()).collect(),
        ioc_processes: procs.iter().map(|s| s.to_string()).collect(),
        ioc_files: files.iter().map(|s| s.to_string()).collect(),
    }
}

fn main() -> Result<(), Box<dyn Error>> {
    // Three samples disagree on the flaky indicators; an indicator needs
    // 2 of 3 votes to survive.
    let samples = vec![
        report(
            &["146.153.68.151"],
            &["vUgefal"],
            &["/tmp/vUgefal", "/etc/passwd"],
            "dropper plus credential read",
        ),
        report(&[], &["vUgefal"], &["/tmp/vUgefal"], "dropper only"),
        report(
            &["146.153.68.151"],
            &["`vUgefal`"],
            &[],
            "dropper beaconing out",
        ),
    ];

    let voted = majority_vote(&samples);
    println!("voted report:\n{}", voted.to_response_text());
    assert!(voted.ioc_ips.contains("146.153.68.151"), "2 of 3 votes");
    assert!(
        voted.ioc_processes.contains("vUgefal"),
        "backticked spelling still counts as a vote"
    );
    assert!(
        !voted.ioc_files.contains("/etc/passwd"),
        "1 of 3 votes is not a majority"
    );
    assert_eq!(
        voted.narrative, "dropper plus credential read",
        "narrative comes from the sample closest to the voted sets"
    );

    // Sample order never matters. (Only an exact tie in closeness falls
    // back to input order; here the first sample is strictly closest.)
    let reversed: Vec<_> = samples.iter().rev().cloned().collect();
    assert_eq!(majority_vote(&reversed), voted);
    println!("voting is order-invariant");

    // A single sample is passed through unchanged (vote_k = 1).
    let single = majority_vote(&samples[..1]);
    assert_eq!(single, samples[0]);
    println!("singleton vote is the identity");
    Ok(())
}
