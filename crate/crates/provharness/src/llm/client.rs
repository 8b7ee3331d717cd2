//! Completion backends and the client that fronts them.
//!
//! The harness talks to any chat-completions-style HTTP endpoint (messages
//! in, text plus token usage out) and to a deterministic mock used by the
//! test suites and replay runs. Both sit behind [`CompletionBackend`], so
//! the detection flow never knows which one it is driving.
//!
//! ## Mock fixture store
//!
//! A fixture directory maps prompts to canned responses. For each prompt
//! the mock looks up `<key>.json`, where `<key>` is the first 16 hex chars
//! of the prompt's SHA-256; failing that it falls back to a per-template
//! default (`default_mei.json`, `default_acr.json`, `default_reflect.json`)
//! chosen by sniffing the prompt's opening line. Fixture files hold:
//!
//! ```json
//! {"responses": [{"text": "...", "prompt_tokens": 100,
//!                 "completion_tokens": 20, "wall_time_s": 0.0}]}
//! ```
//!
//! Sample `i` receives `responses[i % len]`, so one file can script an
//! entire voting round. Token counts default to the ⌈chars/4⌉ estimate and
//! wall time to zero, keeping replays byte-identical.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use super::prompts::sniff_prompt_kind;
use super::{LlmError, ModelEndpoint, UsageRecord};
use crate::segment::{CharsPerFour, TokenEstimator};

/// One completion as a backend returns it, before cost accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_s: f64,
}

/// Anything that can turn a prompt into a completion.
pub trait CompletionBackend {
    fn complete(
        &self,
        endpoint: &ModelEndpoint,
        prompt: &str,
        sample_index: usize,
    ) -> Result<Completion, LlmError>;
}

/// The fixture lookup key for a prompt: first 16 hex chars of its SHA-256.
pub fn prompt_fixture_key(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    hex::encode(digest)[..16].to_string()
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureFile {
    responses: Vec<FixtureResponse>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureResponse {
    text: String,
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
    #[serde(default)]
    wall_time_s: Option<f64>,
}

/// Deterministic offline backend reading canned responses from a fixture
/// directory. Identical prompt → identical completion, every run.
pub struct MockBackend {
    dir: PathBuf,
}

impl MockBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        MockBackend { dir: dir.into() }
    }

    fn fixture_path(&self, prompt: &str) -> Result<PathBuf, LlmError> {
        let keyed = self
            .dir
            .join(format!("{}.json", prompt_fixture_key(prompt)));
        if keyed.is_file() {
            return Ok(keyed);
        }
        if let Some(kind) = sniff_prompt_kind(prompt) {
            let fallback = self.dir.join(format!("default_{}.json", kind.as_str()));
            if fallback.is_file() {
                return Ok(fallback);
            }
        }
        Err(LlmError::Fixture {
            path: keyed.display().to_string(),
            message: "no fixture for this prompt hash and no default for its template".into(),
        })
    }

    fn load(path: &Path) -> Result<FixtureFile, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Fixture {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let fixture: FixtureFile = serde_json::from_str(&text).map_err(|e| LlmError::Fixture {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if fixture.responses.is_empty() {
            return Err(LlmError::Fixture {
                path: path.display().to_string(),
                message: "fixture has no responses".into(),
            });
        }
        Ok(fixture)
    }
}

impl CompletionBackend for MockBackend {
    fn complete(
        &self,
        _endpoint: &ModelEndpoint,
        prompt: &str,
        sample_index: usize,
    ) -> Result<Completion, LlmError> {
        let path = self.fixture_path(prompt)?;
        let fixture = Self::load(&path)?;
        let response = &fixture.responses[sample_index % fixture.responses.len()];
        let estimator = CharsPerFour;
        Ok(Completion {
            text: response.text.clone(),
            prompt_tokens: response
                .prompt_tokens
                .unwrap_or_else(|| estimator.estimate(prompt)),
            completion_tokens: response
                .completion_tokens
                .unwrap_or_else(|| estimator.estimate(&response.text)),
            wall_time_s: response.wall_time_s.unwrap_or(0.0),
        })
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Live HTTP backend speaking the canonical chat-completions shape, with
/// bounded retries and linear backoff on transient failures. The API key
/// comes from the environment variable the endpoint names — never from
/// config files.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    max_attempts: u32,
    backoff: Duration,
}

impl Default for HttpBackend {
    fn default() -> Self {
        HttpBackend {
            client: reqwest::blocking::Client::new(),
            max_attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

impl HttpBackend {
    pub fn new(max_attempts: u32, backoff: Duration) -> Self {
        HttpBackend {
            client: reqwest::blocking::Client::new(),
            max_attempts: max_attempts.max(1),
            backoff,
        }
    }

    fn request_once(
        &self,
        endpoint: &ModelEndpoint,
        api_key: &str,
        prompt: &str,
    ) -> Result<Completion, RequestFailure> {
        let body = ChatRequest {
            model: &endpoint.name,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: endpoint.sampling.temperature,
            max_tokens: endpoint.sampling.max_output_tokens,
        };
        let started = Instant::now();
        let response = self
            .client
            .post(&endpoint.base_url)
            .bearer_auth(api_key)
            .json(&body)
            .send()
            .map_err(|e| RequestFailure::Transient(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| RequestFailure::Transient(e.to_string()))?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(RequestFailure::Auth(format!("{status}: {text}")));
        }
        if status.as_u16() == 413
            || (status.as_u16() == 400 && (text.contains("context") || text.contains("token")))
        {
            return Err(RequestFailure::Budget(format!("{status}: {text}")));
        }
        if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
            return Err(RequestFailure::Transient(format!("{status}: {text}")));
        }
        if !status.is_success() {
            return Err(RequestFailure::Fatal(format!("{status}: {text}")));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| RequestFailure::Fatal(format!("bad response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| RequestFailure::Fatal("response had no choices".into()))?;
        let estimator = CharsPerFour;
        let (prompt_tokens, completion_tokens) = match parsed.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            // Endpoint counts are authoritative when present; estimate as a
            // last resort so accounting still functions.
            None => (
                estimator.estimate(prompt),
                estimator.estimate(&choice.message.content),
            ),
        };
        Ok(Completion {
            text: choice.message.content,
            prompt_tokens,
            completion_tokens,
            wall_time_s: started.elapsed().as_secs_f64(),
        })
    }
}

enum RequestFailure {
    Transient(String),
    Auth(String),
    Budget(String),
    Fatal(String),
}

impl CompletionBackend for HttpBackend {
    fn complete(
        &self,
        endpoint: &ModelEndpoint,
        prompt: &str,
        _sample_index: usize,
    ) -> Result<Completion, LlmError> {
        let api_key = std::env::var(&endpoint.auth_env_var).map_err(|_| LlmError::Auth {
            endpoint: endpoint.name.clone(),
            message: format!(
                "environment variable `{}` is not set",
                endpoint.auth_env_var
            ),
        })?;
        let mut last_transient = String::new();
        for attempt in 1..=self.max_attempts {
            match self.request_once(endpoint, &api_key, prompt) {
                Ok(completion) => return Ok(completion),
                Err(RequestFailure::Transient(message)) => {
                    last_transient = message;
                    if attempt < self.max_attempts {
                        std::thread::sleep(self.backoff * attempt);
                    }
                }
                Err(RequestFailure::Auth(message)) => {
                    return Err(LlmError::Auth {
                        endpoint: endpoint.name.clone(),
                        message,
                    })
                }
                Err(RequestFailure::Budget(message)) => {
                    return Err(LlmError::EndpointBudget { message })
                }
                Err(RequestFailure::Fatal(message)) => return Err(LlmError::Protocol { message }),
            }
        }
        Err(LlmError::Transport {
            attempts: self.max_attempts,
            message: last_transient,
        })
    }
}

/// Endpoint + backend + pre-flight budget check. Samples are drawn
/// sequentially so replays are order-stable.
pub struct LlmClient {
    endpoint: ModelEndpoint,
    backend: Box<dyn CompletionBackend>,
    estimator: Box<dyn TokenEstimator>,
}

impl LlmClient {
    pub fn new(
        endpoint: ModelEndpoint,
        backend: Box<dyn CompletionBackend>,
    ) -> Result<Self, LlmError> {
        endpoint.validate()?;
        Ok(LlmClient {
            endpoint,
            backend,
            estimator: Box::new(CharsPerFour),
        })
    }

    pub fn with_estimator(mut self, estimator: Box<dyn TokenEstimator>) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    /// Estimated token footprint of a prompt under this client's estimator.
    pub fn estimate_prompt(&self, prompt: &str) -> u64 {
        self.estimator.estimate(prompt)
    }

    /// Draws one completion at an explicit sample index. Detection uses this
    /// when each sample carries a differently shuffled payload: the prompts
    /// differ, but fixture backends still rotate responses by index.
    pub fn complete_indexed(
        &self,
        prompt: &str,
        sample_index: usize,
    ) -> Result<(String, UsageRecord), LlmError> {
        let estimate = self.estimator.estimate(prompt);
        if estimate > self.endpoint.max_context_tokens {
            return Err(LlmError::PromptOverBudget {
                endpoint: self.endpoint.name.clone(),
                estimate,
                limit: self.endpoint.max_context_tokens,
            });
        }
        let completion = self
            .backend
            .complete(&self.endpoint, prompt, sample_index)?;
        let usage = UsageRecord::new(
            completion.prompt_tokens,
            completion.completion_tokens,
            completion.wall_time_s,
            &self.endpoint,
        );
        Ok((completion.text, usage))
    }

    /// Draws `n_samples` independent completions for one prompt. Fails up
    /// front when the prompt estimate exceeds the endpoint's context limit.
    pub fn complete(
        &self,
        prompt: &str,
        n_samples: usize,
    ) -> Result<Vec<(String, UsageRecord)>, LlmError> {
        if n_samples == 0 {
            return Err(LlmError::Protocol {
                message: "n_samples must be at least 1".into(),
            });
        }
        let mut out = Vec::with_capacity(n_samples);
        for i in 0..n_samples {
            out.push(self.complete_indexed(prompt, i)?);
        }
        Ok(out)
    }
}
