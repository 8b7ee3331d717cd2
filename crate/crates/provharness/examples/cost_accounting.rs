//! Account model spend from a usage ledger with exact integer arithmetic.
//!
//! Costs are recomputed from token counts against a per-model price table
//! in micro-dollars, so totals never drift with float rounding and two
//! runs always agree to the last digit.
//!
//! ```sh
//! cargo run --example cost_accounting
//! ```

use std::error::Error;

use provharness::llm::{Currency, LedgerEntry, PriceTable, UsageRecord};
use provharness::scoring::account_costs;

fn entry(model: &str, dataset: &str, call: &str, pt: u64, ct: u64) -> LedgerEntry {
    LedgerEntry {
        model: model.to_string(),
        dataset: dataset.to_string(),
        call: call.to_string(),
        usage: UsageRecord {
            prompt_tokens: pt,
            completion_tokens: ct,
            total_tokens: pt + ct,
            wall_time_s: 1.5,
            // Deliberately zero: accounting reprices from the table.
            cost: Currency::from_micros(0),
        },
    }
}

fn main() -> Result<(), Box<dyn Error>> {
    let mut prices = PriceTable::default();
    prices.insert(
        "frontier-a",
        Currency::from_dollars(0.005),
        Currency::from_dollars(0.025),
    );
    prices.insert(
        "frontier-b",
        Currency::from_dollars(0.001),
        Currency::from_dollars(0.004),
    );

    // 24,901 prompt tokens at $0.005/1k plus 1,309 completion tokens at
    // $0.025/1k is exactly $0.157230 — no float in sight.
    let ledger = vec![
        entry("frontier-a", "mini", "mei", 4_901, 209),
        entry("frontier-a", "mini", "acr", 20_000, 1_100),
        entry("frontier-b", "mini", "acr", 18_000, 2_500),
    ];
    let report = account_costs(&ledger, &prices)?;

    for (model, datasets) in &report.by_model {
        for (dataset, summary) in datasets {
            println!(
                "{model} on {dataset}: {} calls, {} prompt + {} completion tokens, cost ${}, {:.1}s",
                summary.calls,
                summary.prompt_tokens,
                summary.completion_tokens,
                summary.cost,
                summary.wall_time_s
            );
        }
    }
    println!("total: ${}", report.total);

    let a = &report.by_model["frontier-a"]["mini"];
    assert_eq!(a.cost.to_string(), "0.15723");
    assert_eq!(a.prompt_tokens, 24_901);
    assert_eq!(a.completion_tokens, 1_309);

    // Unpriced models are an error, not a silent zero.
    let unknown = vec![entry("mystery-model", "mini", "acr", 10, 10)];
    let err = account_costs(&unknown, &prices).unwrap_err();
    println!("unpriced model is rejected: {err}");
    Ok(())
}
