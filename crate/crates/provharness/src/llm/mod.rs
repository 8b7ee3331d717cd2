//! Model-agnostic endpoint layer.
//!
//! Everything a detection run needs from a model goes through this module:
//! prompt rendering ([`prompts`]), completion backends ([`client`]), and
//! response parsing ([`report`]). Adding a model means adding an endpoint
//! entry to the config — the pipeline itself never changes.
//!
//! Money is held in integer micro-dollars so cost arithmetic is exact; the
//! published per-1k-token price schedule and reported token counts must
//! reproduce recorded costs to the last digit.

pub mod client;
pub mod prompts;
pub mod report;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// An amount of money in integer micro-dollars (10⁻⁶ $).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Currency {
    micros: i64,
}

impl Currency {
    pub const ZERO: Currency = Currency { micros: 0 };

    pub fn from_micros(micros: i64) -> Self {
        Currency { micros }
    }

    /// Converts a dollar amount to micros, rounding to the nearest micro.
    /// Config files carry prices as decimals like `0.005`; anything finer
    /// than a micro-dollar is beyond the precision of published prices.
    pub fn from_dollars(dollars: f64) -> Self {
        Currency {
            micros: (dollars * 1_000_000.0).round() as i64,
        }
    }

    pub fn micros(self) -> i64 {
        self.micros
    }

    pub fn is_negative(self) -> bool {
        self.micros < 0
    }

    pub fn checked_add(self, other: Currency) -> Option<Currency> {
        self.micros
            .checked_add(other.micros)
            .map(Currency::from_micros)
    }
}

impl std::ops::Add for Currency {
    type Output = Currency;
    fn add(self, other: Currency) -> Currency {
        Currency::from_micros(self.micros + other.micros)
    }
}

impl std::iter::Sum for Currency {
    fn sum<I: Iterator<Item = Currency>>(iter: I) -> Currency {
        iter.fold(Currency::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Currency {
    /// Plain decimal dollars: trailing zeros trimmed, at least two decimal
    /// places kept. 157230 micros → `0.15723`; 3000000 → `3.00`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.micros < 0 { "-" } else { "" };
        let abs = self.micros.unsigned_abs();
        let whole = abs / 1_000_000;
        let mut frac = format!("{:06}", abs % 1_000_000);
        while frac.len() > 2 && frac.ends_with('0') {
            frac.pop();
        }
        write!(f, "{sign}{whole}.{frac}")
    }
}

/// Sampling controls sent with each completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_output_tokens: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        // 0.7 gives the sample diversity that voting relies on; single-shot
        // runs override to 0 for determinism.
        SamplingParams {
            temperature: 0.7,
            max_output_tokens: 4096,
        }
    }
}

/// One configured model endpoint: where to reach it, how to authenticate,
/// its context limit, and its price schedule per 1k tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub name: String,
    pub base_url: String,
    /// Name of the environment variable holding the API key. Secrets never
    /// live in config files.
    pub auth_env_var: String,
    pub max_context_tokens: u64,
    pub price_per_1k_prompt: Currency,
    pub price_per_1k_completion: Currency,
    pub sampling: SamplingParams,
}

impl ModelEndpoint {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_context_tokens == 0 {
            return Err(LlmError::InvalidEndpoint {
                name: self.name.clone(),
                message: "max_context_tokens must be positive".into(),
            });
        }
        if self.price_per_1k_prompt.is_negative() || self.price_per_1k_completion.is_negative() {
            return Err(LlmError::InvalidEndpoint {
                name: self.name.clone(),
                message: "prices must be non-negative".into(),
            });
        }
        if self.sampling.temperature < 0.0 {
            return Err(LlmError::InvalidEndpoint {
                name: self.name.clone(),
                message: "temperature must be non-negative".into(),
            });
        }
        Ok(())
    }
}

/// Cost of `tokens` at `price` per 1k tokens, in exact integer micros
/// (rounded to the nearest micro, ties away from zero).
pub fn token_cost(tokens: u64, price_per_1k: Currency) -> Currency {
    let product = tokens as i128 * price_per_1k.micros() as i128;
    let halfway = if product >= 0 { 500 } else { -500 };
    Currency::from_micros(((product + halfway) / 1000) as i64)
}

/// Token usage and cost of one completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub wall_time_s: f64,
    pub cost: Currency,
}

impl UsageRecord {
    pub fn new(
        prompt_tokens: u64,
        completion_tokens: u64,
        wall_time_s: f64,
        endpoint: &ModelEndpoint,
    ) -> UsageRecord {
        let cost = token_cost(prompt_tokens, endpoint.price_per_1k_prompt)
            + token_cost(completion_tokens, endpoint.price_per_1k_completion);
        UsageRecord {
            prompt_tokens,
            completion_tokens,
            total_tokens: prompt_tokens + completion_tokens,
            wall_time_s,
            cost,
        }
    }
}

/// One usage ledger line: which model did what work for which dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub model: String,
    pub dataset: String,
    /// Which pipeline call produced the usage (`mei`, `acr`, `reflect`).
    pub call: String,
    pub usage: UsageRecord,
}

/// Per-1k-token price schedule by model name, for cost accounting over a
/// ledger whose entries may span several endpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub models: BTreeMap<String, ModelPrice>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub prompt_per_1k: Currency,
    pub completion_per_1k: Currency,
}

impl PriceTable {
    pub fn insert(&mut self, model: &str, prompt_per_1k: Currency, completion_per_1k: Currency) {
        self.models.insert(
            model.to_string(),
            ModelPrice {
                prompt_per_1k,
                completion_per_1k,
            },
        );
    }

    pub fn get(&self, model: &str) -> Option<ModelPrice> {
        self.models.get(model).copied()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("endpoint `{name}` misconfigured: {message}")]
    InvalidEndpoint { name: String, message: String },
    #[error(
        "prompt estimates {estimate} tokens, over the context limit of {limit} for `{endpoint}`"
    )]
    PromptOverBudget {
        endpoint: String,
        estimate: u64,
        limit: u64,
    },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication failed for `{endpoint}`: {message}")]
    Auth { endpoint: String, message: String },
    #[error("endpoint rejected the request as over budget: {message}")]
    EndpointBudget { message: String },
    #[error("malformed endpoint response: {message}")]
    Protocol { message: String },
    #[error("mock fixture problem at {path}: {message}")]
    Fixture { path: String, message: String },
    #[error("rendered prompt contains forbidden tokens: {}", .0.join(", "))]
    Contaminated(Vec<String>),
    #[error("investigation response had no recognizable sections; raw text retained for audit")]
    UnparseableReport { raw: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn endpoint() -> ModelEndpoint {
        ModelEndpoint {
            name: "claude-opus-4-6".into(),
            base_url: "http://localhost:0/v1/chat/completions".into(),
            auth_env_var: "PROVHARNESS_API_KEY".into(),
            max_context_tokens: 200_000,
            price_per_1k_prompt: Currency::from_dollars(0.005),
            price_per_1k_completion: Currency::from_dollars(0.025),
            sampling: SamplingParams::default(),
        }
    }

    #[test]
    fn recorded_run_cost_reproduces_exactly() {
        // 24,901 prompt + 1,309 completion tokens at $0.005/$0.025 per 1k
        // must come out to $0.15723 with no floating-point drift.
        let usage = UsageRecord::new(24_901, 1_309, 27.54, &endpoint());
        assert_eq!(usage.total_tokens, 26_210);
        assert_eq!(usage.cost.micros(), 157_230);
        assert_eq!(usage.cost.to_string(), "0.15723");
    }

    #[test]
    fn currency_display_trims_to_at_least_two_decimals() {
        assert_eq!(Currency::from_micros(157_230).to_string(), "0.15723");
        assert_eq!(Currency::from_micros(3_000_000).to_string(), "3.00");
        assert_eq!(Currency::from_micros(12_000).to_string(), "0.012");
        assert_eq!(Currency::from_micros(0).to_string(), "0.00");
        assert_eq!(Currency::from_micros(-50_000).to_string(), "-0.05");
        assert_eq!(Currency::from_micros(1).to_string(), "0.000001");
    }

    #[test]
    fn dollars_round_trip_through_micros() {
        assert_eq!(Currency::from_dollars(0.005).micros(), 5_000);
        assert_eq!(Currency::from_dollars(0.025).micros(), 25_000);
        assert_eq!(Currency::from_dollars(2.94).micros(), 2_940_000);
    }

    #[test]
    fn token_cost_rounds_to_nearest_micro() {
        let price = Currency::from_micros(5_000);
        assert_eq!(token_cost(1_000, price).micros(), 5_000);
        assert_eq!(token_cost(100, price).micros(), 500);
        // 1 token at 5000 micros/1k = 5 micros exactly.
        assert_eq!(token_cost(1, price).micros(), 5);
        // 1 token at 1 micro/1k = 0.001 micros → rounds to 0.
        assert_eq!(token_cost(1, Currency::from_micros(1)).micros(), 0);
        // 1 token at 999 micros/1k = 0.999 → rounds to 1.
        assert_eq!(token_cost(1, Currency::from_micros(999)).micros(), 1);
    }

    #[test]
    fn usage_totals_are_enforced_by_construction() {
        let usage = UsageRecord::new(10, 7, 0.0, &endpoint());
        assert_eq!(usage.total_tokens, 17);
        assert!(usage.cost.micros() >= 0);
    }

    #[test]
    fn endpoint_validation_rejects_bad_fields() {
        let mut e = endpoint();
        e.max_context_tokens = 0;
        assert!(e.validate().is_err());
        let mut e = endpoint();
        e.price_per_1k_prompt = Currency::from_micros(-1);
        assert!(e.validate().is_err());
        let mut e = endpoint();
        e.sampling.temperature = -0.1;
        assert!(e.validate().is_err());
        assert!(endpoint().validate().is_ok());
    }

    #[test]
    fn currency_sums_like_integers() {
        let parts = [157_230, 12_000, 830_000].map(Currency::from_micros);
        let total: Currency = parts.into_iter().sum();
        assert_eq!(total.micros(), 999_230);
    }
}
