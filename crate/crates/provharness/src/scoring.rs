//! Event-level evaluation of investigation reports: confusion counts from
//! indicator matching, the derived metrics (precision, false-positive rate,
//! Matthews correlation), per-model aggregation, alert-regime
//! classification, and token-cost accounting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ingest::{Entity, EntityId, EntityKind, Event, EventId, GroundTruth};
use crate::llm::report::InvestigationReport;
use crate::llm::{token_cost, Currency, LedgerEntry, PriceTable};
use crate::segment::AttackWindow;

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("cannot aggregate over an empty collection of {what}")]
    EmptyInput { what: &'static str },
    #[error("ledger references model `{model}` missing from the price table")]
    UnknownModel { model: String },
}

/// Event-level confusion counts for one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }
}

/// Derived metrics for one window. Degenerate denominators resolve to 0.0
/// rather than NaN; `no_alerts` distinguishes "precision 0 because nothing
/// was alerted" from "precision 0 because every alert was wrong".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub precision: f64,
    pub fpr: f64,
    pub mcc: f64,
    pub no_alerts: bool,
}

/// Does `ioc` name this file path? Exact match, or a suffix aligned on a
/// path-component boundary: `vUgefal` and `tmp/vUgefal` both match
/// `/tmp/vUgefal`, but the misaligned `p/vUgefal` does not.
pub fn file_ioc_matches(ioc: &str, path: &str) -> bool {
    if ioc.is_empty() {
        return false;
    }
    path == ioc || path.ends_with(&format!("/{}", ioc.trim_start_matches('/')))
}

/// Does `ioc` name this process? Match against the image path (exact or
/// basename) and against whole whitespace-separated command-line tokens —
/// reports say `gtcache` or `./gtcache` at least as often as the full path.
pub fn process_ioc_matches(ioc: &str, image_path: Option<&str>, cmdline: Option<&str>) -> bool {
    if ioc.is_empty() {
        return false;
    }
    if let Some(path) = image_path {
        if path == ioc || path.rsplit('/').next() == Some(ioc) {
            return true;
        }
    }
    if let Some(cmdline) = cmdline {
        if cmdline.split_whitespace().any(|token| token == ioc) {
            return true;
        }
    }
    false
}

/// Does any report indicator implicate this event? An event is implicated
/// through the entities it touches: file indicators against file-entity
/// paths, process indicators against process images and the event's command
/// line, IP indicators against netflow remote addresses. Adding indicators
/// can only ever implicate more events, never fewer.
pub fn event_matches_report(
    event: &Event,
    report: &InvestigationReport,
    entities: &BTreeMap<EntityId, Entity>,
) -> bool {
    let endpoints = [Some(&event.subject_id), event.object_id.as_ref()];
    for entity in endpoints
        .into_iter()
        .flatten()
        .filter_map(|id| entities.get(id))
    {
        match entity.kind {
            EntityKind::File => {
                if let Some(path) = &entity.path {
                    if report
                        .ioc_files
                        .iter()
                        .any(|ioc| file_ioc_matches(ioc, path))
                    {
                        return true;
                    }
                }
            }
            EntityKind::Process => {
                if report.ioc_processes.iter().any(|ioc| {
                    process_ioc_matches(ioc, entity.path.as_deref(), event.cmdline.as_deref())
                }) {
                    return true;
                }
            }
            EntityKind::Netflow => {
                if let Some(remote_ip) = &entity.remote_ip {
                    if report.ioc_ips.iter().any(|ioc| ioc == remote_ip) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// The window events the report's indicators implicate — the predicted
/// positives for scoring.
pub fn match_iocs(
    report: &InvestigationReport,
    window: &AttackWindow,
    entities: &BTreeMap<EntityId, Entity>,
) -> BTreeSet<EventId> {
    window
        .iter_events()
        .filter(|event| event_matches_report(event, report, entities))
        .map(|event| event.event_id.clone())
        .collect()
}

/// Tallies confusion counts for a predicted-positive set over every window
/// event. The window is the whole universe — events outside it don't count,
/// and predicted ids not in the window are ignored.
pub fn compute_confusion(
    predicted: &BTreeSet<EventId>,
    truth: &GroundTruth,
    window: &AttackWindow,
) -> ConfusionCounts {
    let mut counts = ConfusionCounts::default();
    for event in window.iter_events() {
        let alerted = predicted.contains(&event.event_id);
        let malicious = truth.malicious_event_ids.contains(&event.event_id);
        match (alerted, malicious) {
            (true, true) => counts.true_positives += 1,
            (true, false) => counts.false_positives += 1,
            (false, false) => counts.true_negatives += 1,
            (false, true) => counts.false_negatives += 1,
        }
    }
    counts
}

/// Matthews correlation from exact integer products. The numerator is an
/// `i128`, the denominator product a `u128` (counts up to 10^6 push it past
/// `u64`); only the final division happens in floating point. Any zero
/// denominator factor yields 0.0 by convention.
pub fn matthews_correlation(counts: &ConfusionCounts) -> f64 {
    let tp = counts.true_positives as i128;
    let fp = counts.false_positives as i128;
    let tn = counts.true_negatives as i128;
    let fn_ = counts.false_negatives as i128;
    let numerator = tp * tn - fp * fn_;
    let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if factors.contains(&0) {
        return 0.0;
    }
    let denominator: u128 = factors.iter().map(|&f| f as u128).product();
    numerator as f64 / (denominator as f64).sqrt()
}

/// Precision, false-positive rate, and Matthews correlation for one
/// window's confusion counts.
pub fn compute_metrics(counts: &ConfusionCounts) -> MetricSet {
    let tp = counts.true_positives as f64;
    let fp = counts.false_positives as f64;
    let tn = counts.true_negatives as f64;
    let alerted = counts.true_positives + counts.false_positives;
    let precision = if alerted == 0 {
        0.0
    } else {
        tp / alerted as f64
    };
    let benign = counts.false_positives + counts.true_negatives;
    let fpr = if benign == 0 { 0.0 } else { fp / (fp + tn) };
    MetricSet {
        precision,
        fpr,
        mcc: matthews_correlation(counts),
        no_alerts: alerted == 0,
    }
}

/// Unweighted per-metric means across datasets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub precision: f64,
    pub fpr: f64,
    pub mcc: f64,
    pub datasets: usize,
}

/// Averages each metric over the given per-dataset results.
pub fn aggregate_metrics(sets: &[MetricSet]) -> Result<MetricMeans, ScoreError> {
    if sets.is_empty() {
        return Err(ScoreError::EmptyInput {
            what: "per-dataset metrics",
        });
    }
    let n = sets.len() as f64;
    Ok(MetricMeans {
        precision: sets.iter().map(|m| m.precision).sum::<f64>() / n,
        fpr: sets.iter().map(|m| m.fpr).sum::<f64>() / n,
        mcc: sets.iter().map(|m| m.mcc).sum::<f64>() / n,
        datasets: sets.len(),
    })
}

/// Alerting temperament of a model across datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Conservative,
    Balanced,
    OverSensitive,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Conservative => "conservative",
            Regime::Balanced => "balanced",
            Regime::OverSensitive => "over_sensitive",
        }
    }
}

/// A regime verdict with the statistics it was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeAssignment {
    pub regime: Regime,
    pub fpr_avg: f64,
    pub fpr_max: f64,
}

/// Classifies a model from its per-dataset false-positive rates, given in
/// percentage points (0.5 means 0.5%). Over-sensitivity is tested first:
/// an average of at least 0.5 or any single dataset at 2.0 or above marks
/// the model over-sensitive even if most datasets look quiet. Conservative
/// requires both a low average (under 0.25) and no dataset at 1.0 or
/// above; everything else is balanced.
pub fn classify_regime(fpr_percentages: &[f64]) -> Result<RegimeAssignment, ScoreError> {
    if fpr_percentages.is_empty() {
        return Err(ScoreError::EmptyInput {
            what: "false-positive rates",
        });
    }
    let fpr_avg = fpr_percentages.iter().sum::<f64>() / fpr_percentages.len() as f64;
    let fpr_max = fpr_percentages.iter().copied().fold(f64::MIN, f64::max);
    let regime = if fpr_avg >= 0.50 || fpr_max >= 2.0 {
        Regime::OverSensitive
    } else if fpr_avg < 0.25 && fpr_max < 1.0 {
        Regime::Conservative
    } else {
        Regime::Balanced
    };
    Ok(RegimeAssignment {
        regime,
        fpr_avg,
        fpr_max,
    })
}

/// Aggregated spend and latency for one model on one dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostSummary {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub cost: Currency,
    pub wall_time_s: f64,
}

/// Per model, per dataset cost summaries.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub by_model: BTreeMap<String, BTreeMap<String, CostSummary>>,
    pub total: Currency,
}

/// Rolls a usage ledger up into per-model, per-dataset summaries, repricing
/// each entry from the price table so a price revision reprices history
/// consistently. Costs stay in exact micro-dollars throughout; the grand
/// total equals the sum of every entry's individual cost. A ledger entry
/// whose model is missing from the table is a configuration error.
pub fn account_costs(
    ledger: &[LedgerEntry],
    prices: &PriceTable,
) -> Result<CostReport, ScoreError> {
    let mut report = CostReport::default();
    for entry in ledger {
        let price = prices
            .get(&entry.model)
            .ok_or_else(|| ScoreError::UnknownModel {
                model: entry.model.clone(),
            })?;
        let cost = token_cost(entry.usage.prompt_tokens, price.prompt_per_1k)
            + token_cost(entry.usage.completion_tokens, price.completion_per_1k);
        let summary = report
            .by_model
            .entry(entry.model.clone())
            .or_default()
            .entry(entry.dataset.clone())
            .or_default();
        summary.calls += 1;
        summary.prompt_tokens += entry.usage.prompt_tokens;
        summary.completion_tokens += entry.usage.completion_tokens;
        summary.total_tokens += entry.usage.total_tokens;
        summary.cost = summary.cost + cost;
        summary.wall_time_s += entry.usage.wall_time_s;
        report.total = report.total + cost;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::GroundTruth;
    use crate::llm::UsageRecord;
    use crate::segment::{build_attack_window, AttackInterval};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts {
            true_positives: tp,
            false_positives: fp,
            true_negatives: tn,
            false_negatives: fn_,
        }
    }

    #[test]
    fn perfect_detection_scores_one_across_the_board() {
        let m = compute_metrics(&counts(5, 0, 10, 0));
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.fpr, 0.0);
        assert_eq!(m.mcc, 1.0);
        assert!(!m.no_alerts);
    }

    #[test]
    fn uniform_confusion_is_chance_level() {
        let m = compute_metrics(&counts(1, 1, 1, 1));
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.fpr, 0.5);
        assert_eq!(m.mcc, 0.0);
    }

    #[test]
    fn no_alerts_is_flagged_not_conflated_with_bad_precision() {
        let m = compute_metrics(&counts(0, 0, 10, 3));
        assert_eq!(m.precision, 0.0);
        assert!(m.no_alerts);
        assert_eq!(m.mcc, 0.0, "tp+fp factor is zero");

        let bad = compute_metrics(&counts(0, 4, 10, 3));
        assert_eq!(bad.precision, 0.0);
        assert!(!bad.no_alerts);
    }

    #[test]
    fn any_zero_denominator_factor_zeroes_mcc() {
        for c in [
            counts(0, 0, 5, 5), // tp+fp = 0
            counts(0, 5, 5, 0), // tp+fn = 0
            counts(5, 0, 0, 5), // tn+fp = 0
            counts(5, 5, 0, 0), // tn+fn = 0
        ] {
            assert_eq!(matthews_correlation(&c), 0.0, "{c:?}");
        }
    }

    /// Independent formulation: same exact integer numerator, denominator
    /// as a product of four separately rooted factors instead of the root
    /// of one big product.
    fn mcc_oracle(c: &ConfusionCounts) -> f64 {
        let tp = c.true_positives as f64;
        let fp = c.false_positives as f64;
        let tn = c.true_negatives as f64;
        let fn_ = c.false_negatives as f64;
        let num = (c.true_positives as i128 * c.true_negatives as i128
            - c.false_positives as i128 * c.false_negatives as i128) as f64;
        let den = (tp + fp).sqrt() * (tp + fn_).sqrt() * (tn + fp).sqrt() * (tn + fn_).sqrt();
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    #[test]
    fn mcc_agrees_with_factored_oracle_on_random_tables() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..300 {
            let c = counts(
                rng.gen_range(0..=1_000_000),
                rng.gen_range(0..=1_000_000),
                rng.gen_range(0..=1_000_000),
                rng.gen_range(0..=1_000_000),
            );
            let got = matthews_correlation(&c);
            let want = mcc_oracle(&c);
            assert!((got - want).abs() <= 1e-12, "{c:?}: {got} vs {want}");
            assert!((-1.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn mcc_at_the_million_scale_does_not_overflow() {
        // All four factors near 2e6: the denominator product is ~1.6e25,
        // which only fits integer arithmetic at 128 bits.
        let c = counts(1_000_000, 1_000_000, 1_000_000, 999_999);
        let got = matthews_correlation(&c);
        assert!((got - mcc_oracle(&c)).abs() <= 1e-12);
    }

    #[test]
    fn file_indicators_need_component_aligned_suffixes() {
        assert!(file_ioc_matches("/tmp/vUgefal", "/tmp/vUgefal"));
        assert!(file_ioc_matches("vUgefal", "/tmp/vUgefal"));
        assert!(file_ioc_matches("tmp/vUgefal", "/tmp/vUgefal"));
        assert!(file_ioc_matches(
            "index.php",
            "/usr/local/www/nginx-dist/index.php"
        ));
        assert!(!file_ioc_matches("p/vUgefal", "/tmp/vUgefal"));
        assert!(!file_ioc_matches("gefal", "/tmp/vUgefal"));
        assert!(!file_ioc_matches("", "/tmp/vUgefal"));
        assert!(!file_ioc_matches("/tmp/vUgefal", "/tmp/vUgefal.bak"));
    }

    #[test]
    fn process_indicators_match_image_or_command_tokens() {
        assert!(process_ioc_matches("gtcache", Some("/tmp/gtcache"), None));
        assert!(process_ioc_matches(
            "/tmp/gtcache",
            Some("/tmp/gtcache"),
            None
        ));
        assert!(process_ioc_matches(
            "./gtcache",
            None,
            Some("/bin/sh -c ./gtcache")
        ));
        assert!(!process_ioc_matches("cache", Some("/tmp/gtcache"), None));
        assert!(!process_ioc_matches(
            "gtcache",
            Some("/usr/bin/unrelated"),
            Some("run gtcache-loader")
        ));
    }

    fn entity(id: &str, kind: EntityKind, path: Option<&str>, remote_ip: Option<&str>) -> Entity {
        Entity {
            entity_id: id.into(),
            kind,
            path: path.map(Into::into),
            remote_ip: remote_ip.map(Into::into),
            remote_port: None,
            local_ip: None,
            local_port: None,
        }
    }

    fn event(
        id: &str,
        ts: i64,
        subject: &str,
        object: Option<&str>,
        cmdline: Option<&str>,
    ) -> Event {
        Event {
            event_id: id.into(),
            timestamp_ns: ts,
            event_type: "EVENT".into(),
            subject_id: subject.into(),
            object_id: object.map(Into::into),
            cmdline: cmdline.map(Into::into),
            extra: BTreeMap::new(),
        }
    }

    /// Thirty events over three processes, three files, and two flows; the
    /// report names one indicator of each kind.
    fn matching_fixture() -> (
        AttackWindow,
        BTreeMap<EntityId, Entity>,
        InvestigationReport,
    ) {
        let mut entities = BTreeMap::new();
        for (id, kind, path, ip) in [
            ("web", EntityKind::Process, Some("/usr/sbin/nginx"), None),
            ("mal", EntityKind::Process, Some("/tmp/gtcache"), None),
            ("cron", EntityKind::Process, Some("/usr/sbin/cron"), None),
            ("drop", EntityKind::File, Some("/tmp/vUgefal"), None),
            (
                "conf",
                EntityKind::File,
                Some("/etc/nginx/nginx.conf"),
                None,
            ),
            ("log", EntityKind::File, Some("/var/log/syslog"), None),
            ("c2", EntityKind::Netflow, None, Some("146.153.68.151")),
            ("cdn", EntityKind::Netflow, None, Some("93.184.216.34")),
        ] {
            entities.insert(EntityId::from(id), entity(id, kind, path, ip));
        }
        let subjects = ["web", "mal", "cron"];
        let objects = [
            Some("drop"),
            Some("conf"),
            Some("log"),
            Some("c2"),
            Some("cdn"),
            None,
        ];
        let mut events = Vec::new();
        for i in 0..30 {
            let subject = subjects[i % 3];
            let object = objects[i % 6];
            let cmdline = if i % 7 == 0 {
                Some("/bin/sh -c ./gtcache")
            } else {
                None
            };
            events.push(event(
                &format!("e{i:02}"),
                1_000 + i as i64,
                subject,
                object,
                cmdline,
            ));
        }
        let window = build_attack_window(&events, AttackInterval::new(990, 1_040).unwrap());
        let report = InvestigationReport {
            narrative: String::new(),
            key_steps: Vec::new(),
            ioc_ips: ["146.153.68.151".to_string()].into_iter().collect(),
            ioc_processes: ["gtcache".to_string()].into_iter().collect(),
            ioc_files: ["/tmp/vUgefal".to_string()].into_iter().collect(),
        };
        (window, entities, report)
    }

    fn truth_of(ids: &[&str]) -> GroundTruth {
        GroundTruth {
            malicious_event_ids: ids.iter().map(|s| EventId::from(*s)).collect(),
            t_s: 990,
            t_e: 1_040,
            source_note: String::new(),
        }
    }

    #[test]
    fn confusion_counts_match_a_per_event_oracle() {
        let (window, entities, report) = matching_fixture();
        let truth = truth_of(&["e01", "e04", "e07", "e13"]);
        let malicious = truth.malicious_event_ids.clone();
        let predicted = match_iocs(&report, &window, &entities);
        let got = compute_confusion(&predicted, &truth, &window);

        // Oracle: re-derive the alert decision per event from first
        // principles, one rule at a time.
        let mut want = ConfusionCounts::default();
        for ev in window.iter_events() {
            let mut alerted = false;
            for id in [Some(&ev.subject_id), ev.object_id.as_ref()]
                .into_iter()
                .flatten()
            {
                let ent = &entities[id];
                alerted |= match ent.kind {
                    EntityKind::File => ent.path.as_deref() == Some("/tmp/vUgefal"),
                    EntityKind::Netflow => ent.remote_ip.as_deref() == Some("146.153.68.151"),
                    EntityKind::Process => {
                        ent.path.as_deref() == Some("/tmp/gtcache")
                            || ev
                                .cmdline
                                .as_deref()
                                .is_some_and(|c| c.split_whitespace().any(|t| t == "gtcache"))
                    }
                };
            }
            match (alerted, malicious.contains(&ev.event_id)) {
                (true, true) => want.true_positives += 1,
                (true, false) => want.false_positives += 1,
                (false, false) => want.true_negatives += 1,
                (false, true) => want.false_negatives += 1,
            }
        }
        assert_eq!(got, want);
        assert_eq!(got.total(), 30);
        assert!(got.true_positives > 0 && got.true_negatives > 0);
    }

    #[test]
    fn empty_prediction_forces_the_negative_column() {
        let (window, entities, _) = matching_fixture();
        let empty = InvestigationReport::default();
        let predicted = match_iocs(&empty, &window, &entities);
        assert!(predicted.is_empty(), "no indicators, no positives");
        let truth = truth_of(&["e01", "e04", "e07", "e13", "e22"]);
        let got = compute_confusion(&predicted, &truth, &window);
        assert_eq!(got.true_positives, 0);
        assert_eq!(got.false_positives, 0);
        assert_eq!(got.false_negatives, 5);
        assert_eq!(got.true_negatives, 25);
        assert!(compute_metrics(&got).no_alerts);
    }

    #[test]
    fn confusion_matches_set_algebra_on_random_subsets() {
        let (window, _, _) = matching_fixture();
        let all_ids: Vec<EventId> = window.iter_events().map(|e| e.event_id.clone()).collect();
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..50 {
            let predicted: BTreeSet<EventId> = all_ids
                .iter()
                .filter(|_| rng.gen_bool(0.4))
                .cloned()
                .collect();
            let malicious: BTreeSet<EventId> = all_ids
                .iter()
                .filter(|_| rng.gen_bool(0.2))
                .cloned()
                .collect();
            let truth = GroundTruth {
                malicious_event_ids: malicious.clone(),
                t_s: 990,
                t_e: 1_040,
                source_note: String::new(),
            };
            let got = compute_confusion(&predicted, &truth, &window);
            assert_eq!(
                got.true_positives as usize,
                predicted.intersection(&malicious).count()
            );
            assert_eq!(
                got.false_positives as usize,
                predicted.difference(&malicious).count()
            );
            assert_eq!(
                got.false_negatives as usize,
                malicious.difference(&predicted).count()
            );
            assert_eq!(got.total() as usize, all_ids.len());
        }
    }

    #[test]
    fn adding_indicators_never_unalerts_an_event() {
        let (window, entities, mut report) = matching_fixture();
        let before: Vec<bool> = window
            .iter_events()
            .map(|e| event_matches_report(e, &report, &entities))
            .collect();
        report.ioc_files.insert("/var/log/syslog".into());
        report.ioc_processes.insert("nginx".into());
        let after: Vec<bool> = window
            .iter_events()
            .map(|e| event_matches_report(e, &report, &entities))
            .collect();
        for (b, a) in before.iter().zip(&after) {
            assert!(
                !b || *a,
                "an alerted event went quiet after adding indicators"
            );
        }
        assert!(after.iter().filter(|&&x| x).count() > before.iter().filter(|&&x| x).count());
    }

    #[test]
    fn aggregation_averages_each_metric() {
        let sets = [
            MetricSet {
                precision: 1.0,
                fpr: 0.0,
                mcc: 1.0,
                no_alerts: false,
            },
            MetricSet {
                precision: 0.5,
                fpr: 0.2,
                mcc: 0.4,
                no_alerts: false,
            },
            MetricSet {
                precision: 0.0,
                fpr: 0.1,
                mcc: 0.1,
                no_alerts: true,
            },
        ];
        let means = aggregate_metrics(&sets).unwrap();
        assert!((means.precision - 0.5).abs() < 1e-12);
        assert!((means.fpr - 0.1).abs() < 1e-12);
        assert!((means.mcc - 0.5).abs() < 1e-12);
        assert_eq!(means.datasets, 3);

        assert!(matches!(
            aggregate_metrics(&[]),
            Err(ScoreError::EmptyInput { .. })
        ));
    }

    #[test]
    fn low_and_capped_rates_classify_as_conservative() {
        // A model that stays under a quarter point on average and never
        // crosses a full point on any dataset.
        let fprs = [0.04, 0.001, 0.0, 0.074, 0.013, 0.005, 0.645, 0.852, 0.176];
        let got = classify_regime(&fprs).unwrap();
        assert_eq!(got.regime, Regime::Conservative);
        assert!(got.fpr_avg < 0.25);
        assert!(got.fpr_max < 1.0);
    }

    #[test]
    fn one_noisy_dataset_is_enough_for_over_sensitive() {
        // Average well under half a point, but one dataset above two.
        let fprs = [0.01, 0.02, 0.03, 2.151, 0.0, 0.0, 0.1, 0.05, 0.02];
        assert_eq!(
            classify_regime(&fprs).unwrap().regime,
            Regime::OverSensitive
        );
    }

    #[test]
    fn middling_rates_classify_as_balanced() {
        // Too high an average for conservative, too low for over-sensitive.
        let fprs = [0.3, 0.3, 0.3];
        assert_eq!(classify_regime(&fprs).unwrap().regime, Regime::Balanced);
        // Low average, but one dataset at or past a full point.
        let fprs = [0.05, 0.06, 1.2];
        assert_eq!(classify_regime(&fprs).unwrap().regime, Regime::Balanced);
    }

    #[test]
    fn regime_boundaries_are_half_open() {
        assert_eq!(
            classify_regime(&[0.5, 0.5]).unwrap().regime,
            Regime::OverSensitive,
            "average exactly 0.5 tips over-sensitive"
        );
        assert_eq!(
            classify_regime(&[0.0, 2.0]).unwrap().regime,
            Regime::OverSensitive,
            "a single dataset at exactly 2.0 tips over-sensitive"
        );
        assert_eq!(
            classify_regime(&[0.25]).unwrap().regime,
            Regime::Balanced,
            "average exactly 0.25 is no longer conservative"
        );
        assert_eq!(
            classify_regime(&[0.0, 0.0, 1.0]).unwrap().regime,
            Regime::Balanced,
            "a dataset at exactly 1.0 is no longer conservative"
        );
        assert_eq!(
            classify_regime(&[0.249]).unwrap().regime,
            Regime::Conservative
        );
        assert!(matches!(
            classify_regime(&[]),
            Err(ScoreError::EmptyInput { .. })
        ));
    }

    fn ledger_entry(
        model: &str,
        dataset: &str,
        prompt_tokens: u64,
        completion_tokens: u64,
    ) -> LedgerEntry {
        LedgerEntry {
            model: model.into(),
            dataset: dataset.into(),
            call: "acr".into(),
            usage: UsageRecord {
                prompt_tokens,
                completion_tokens,
                total_tokens: prompt_tokens + completion_tokens,
                wall_time_s: 1.5,
                cost: Currency::ZERO,
            },
        }
    }

    fn price_table() -> PriceTable {
        let mut prices = PriceTable::default();
        prices.insert(
            "frontier-a",
            Currency::from_dollars(0.005),
            Currency::from_dollars(0.025),
        );
        prices
    }

    #[test]
    fn recorded_investigation_cost_reprices_exactly() {
        let ledger = [ledger_entry("frontier-a", "cadets", 24_901, 1_309)];
        let report = account_costs(&ledger, &price_table()).unwrap();
        let summary = &report.by_model["frontier-a"]["cadets"];
        assert_eq!(summary.cost.micros(), 157_230);
        assert_eq!(summary.cost.to_string(), "0.15723");
        assert_eq!(summary.total_tokens, 26_210);
        assert_eq!(report.total, summary.cost);
    }

    #[test]
    fn grand_total_is_the_exact_sum_of_entry_costs() {
        let mut rng = StdRng::seed_from_u64(5);
        let ledger: Vec<LedgerEntry> = (0..200)
            .map(|i| {
                ledger_entry(
                    "frontier-a",
                    ["cadets", "theia", "trace"][i % 3],
                    rng.gen_range(0..100_000),
                    rng.gen_range(0..10_000),
                )
            })
            .collect();
        let prices = price_table();
        let report = account_costs(&ledger, &prices).unwrap();
        let want: Currency = ledger
            .iter()
            .map(|e| {
                token_cost(
                    e.usage.prompt_tokens,
                    prices.get("frontier-a").unwrap().prompt_per_1k,
                ) + token_cost(
                    e.usage.completion_tokens,
                    prices.get("frontier-a").unwrap().completion_per_1k,
                )
            })
            .sum();
        assert_eq!(report.total, want);
        let per_group: Currency = report.by_model["frontier-a"].values().map(|s| s.cost).sum();
        assert_eq!(per_group, want);
        let calls: u64 = report.by_model["frontier-a"]
            .values()
            .map(|s| s.calls)
            .sum();
        assert_eq!(calls, 200);
    }

    #[test]
    fn unpriced_model_in_the_ledger_is_a_config_error() {
        let ledger = [ledger_entry("mystery-model", "cadets", 100, 10)];
        let err = account_costs(&ledger, &price_table()).unwrap_err();
        assert!(matches!(err, ScoreError::UnknownModel { model } if model == "mystery-model"));
    }
}
