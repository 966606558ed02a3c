//! Chat-completion gateway: prompt rendering, a deterministic offline stub,
//! an HTTP provider with retry/backoff, response parsing, and an exchange
//! log that doubles as a replay cache.

pub mod parse;
pub mod prompt;
pub mod stub;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::NewsId;

pub use parse::{parse_narrative_response, parse_profile_response, parse_theme_response};
pub use prompt::{render_fusion_prompt, render_profile_prompt, render_theme_prompt};
pub use stub::StubTransport;

/// Connection settings for a chat-completion provider.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// Base URL; requests POST to `<endpoint>/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub credential_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_parallel: usize,
    pub temperature: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "https://api.openai.com".to_string(),
            model: "gpt-3.5-turbo".to_string(),
            credential_env: "GNR_API_KEY".to_string(),
            timeout_secs: 30.0,
            max_retries: 3,
            max_parallel: 4,
            temperature: 0.0,
        }
    }
}

impl ProviderConfig {
    fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_secs <= 0.0 {
            return Err(GatewayError::Config("timeout must be positive".into()));
        }
        if self.max_parallel < 1 {
            return Err(GatewayError::Config("max_parallel must be at least 1".into()));
        }
        Ok(())
    }
}

/// Who actually produced a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderTag {
    Real,
    Stub,
}

/// System/user message pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn full_text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }

    /// Hex SHA-256 of the full prompt text; the cache and log key.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.full_text().as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// One completed request/response round trip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system: String,
    pub user: String,
    pub response: String,
    pub usage: Option<serde_json::Value>,
    pub provider: ProviderTag,
    pub prompt_hash: String,
}

/// 1-3 short phrases for one article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeAnnotation {
    pub news_id: NewsId,
    pub topics: Vec<String>,
}

impl ThemeAnnotation {
    pub fn new(news_id: NewsId, topics: Vec<String>) -> Result<Self, GatewayError> {
        if topics.is_empty() || topics.len() > 3 {
            return Err(GatewayError::ResponseParse {
                expected: "1-3 theme topics".into(),
                response: topics.join("|"),
            });
        }
        Ok(ThemeAnnotation { news_id, topics })
    }
}

/// Interest summary for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserInterestProfile {
    pub user_key: String,
    pub categories: Vec<String>,
    pub topics: Vec<String>,
    pub supporting: Vec<String>,
}

/// Raw parsed narrative fields before provenance is attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeDraft {
    pub title: String,
    pub category: String,
    pub topics: Vec<String>,
    pub abstract_text: String,
    pub raw: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway configuration invalid: {0}")]
    Config(String),
    #[error("credential variable {0} is not set")]
    Credential(String),
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("provider returned status {status}: {message}")]
    Provider { status: u16, message: String },
    #[error("provider response malformed: {0}")]
    MalformedResponse(String),
    #[error("could not parse response, expected {expected}")]
    ResponseParse { expected: String, response: String },
    #[error("article {0} has no theme annotation; annotate before profiling")]
    MissingThemes(NewsId),
    #[error("history is empty")]
    EmptyHistory,
    #[error("exchange log i/o error on {path}: {source}")]
    LogIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// What a transport is asked to deliver.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub system: String,
    pub user: String,
}

/// Successful transport result.
#[derive(Debug, Clone)]
pub struct TransportReply {
    pub content: String,
    pub usage: Option<serde_json::Value>,
}

/// Transport-level failure, classified for the retry policy.
#[derive(Debug, Clone)]
pub enum TransportFailure {
    /// Connection-level problem; retryable.
    Connect(String),
    /// Deadline exceeded; retryable.
    Timeout,
    /// Non-2xx status. 429 and 5xx are retryable, the rest are not.
    Http { status: u16, body: String },
    /// 2xx but undecodable body; not retryable.
    Malformed(String),
}

impl TransportFailure {
    fn retryable(&self) -> bool {
        match self {
            TransportFailure::Connect(_) | TransportFailure::Timeout => true,
            TransportFailure::Http { status, .. } => *status == 429 || *status >= 500,
            TransportFailure::Malformed(_) => false,
        }
    }
}

/// A way to deliver one chat request.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<TransportReply, TransportFailure>;
    fn tag(&self) -> ProviderTag;
}

/// Counting semaphore bounding in-flight requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn new(count: usize) -> Self {
        Slots {
            free: Mutex::new(count),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock poisoned");
        }
        *free -= 1;
        SlotGuard { slots: self }
    }
}

struct SlotGuard<'a> {
    slots: &'a Slots,
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.slots.free.lock().expect("slot lock poisoned");
        *free += 1;
        self.slots.cv.notify_one();
    }
}

/// One line of the exchange log.
#[derive(Debug, Serialize, Deserialize)]
struct LogRecord {
    timestamp: u64,
    prompt_hash: String,
    provider: ProviderTag,
    prompt: String,
    response: String,
}

/// Shareable completion gateway. Holds the provider transport, bounds
/// parallelism, retries transient failures with exponential backoff and
/// jitter, optionally logs every exchange, and can replay logged responses
/// by prompt hash.
pub struct Gateway {
    transport: Box<dyn Transport>,
    cfg: ProviderConfig,
    slots: Slots,
    backoff_base: Duration,
    log: Option<(PathBuf, Mutex<File>)>,
    replay: Option<RwLock<HashMap<String, (ProviderTag, String)>>>,
}

impl Gateway {
    /// Deterministic offline gateway.
    pub fn stub(seed: u64) -> Gateway {
        Gateway::with_transport(Box::new(StubTransport::new(seed)), ProviderConfig::default())
            .expect("default stub config is valid")
    }

    /// HTTP gateway; resolves the bearer token from the configured
    /// environment variable immediately.
    pub fn http(cfg: ProviderConfig) -> Result<Gateway, GatewayError> {
        cfg.validate()?;
        let token = std::env::var(&cfg.credential_env)
            .map_err(|_| GatewayError::Credential(cfg.credential_env.clone()))?;
        let transport = HttpTransport::new(&cfg, token)?;
        Gateway::with_transport(Box::new(transport), cfg)
    }

    /// Gateway over an arbitrary transport (tests inject fakes here).
    pub fn with_transport(
        transport: Box<dyn Transport>,
        cfg: ProviderConfig,
    ) -> Result<Gateway, GatewayError> {
        cfg.validate()?;
        Ok(Gateway {
            slots: Slots::new(cfg.max_parallel),
            transport,
            cfg,
            backoff_base: Duration::from_secs(1),
            log: None,
            replay: None,
        })
    }

    /// Overrides the first-retry delay (tests shrink it).
    pub fn with_backoff_base(mut self, base: Duration) -> Gateway {
        self.backoff_base = base;
        self
    }

    /// Appends every completed exchange to `path` as JSON lines.
    pub fn with_exchange_log(mut self, path: &Path) -> Result<Gateway, GatewayError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| GatewayError::LogIo {
                path: path.display().to_string(),
                source,
            })?;
        self.log = Some((path.to_path_buf(), Mutex::new(file)));
        Ok(self)
    }

    /// Replays responses recorded in an exchange log, keyed by prompt hash;
    /// misses fall through to the live transport.
    pub fn with_replay_from(mut self, log_path: &Path) -> Result<Gateway, GatewayError> {
        let file = File::open(log_path).map_err(|source| GatewayError::LogIo {
            path: log_path.display().to_string(),
            source,
        })?;
        let mut map = HashMap::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|source| GatewayError::LogIo {
                path: log_path.display().to_string(),
                source,
            })?;
            if line.is_empty() {
                continue;
            }
            let record: LogRecord = serde_json::from_str(&line)
                .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
            map.insert(record.prompt_hash, (record.provider, record.response));
        }
        self.replay = Some(RwLock::new(map));
        Ok(self)
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    pub fn provider_tag(&self) -> ProviderTag {
        self.transport.tag()
    }

    /// Sends `prompt`, honoring the replay cache, the parallelism bound, and
    /// the retry policy.
    pub fn complete(&self, prompt: &Prompt) -> Result<ChatExchange, GatewayError> {
        let hash = prompt.hash();
        if let Some(replay) = &self.replay {
            let cached = replay
                .read()
                .expect("replay lock poisoned")
                .get(&hash)
                .cloned();
            if let Some((provider, response)) = cached {
                return Ok(ChatExchange {
                    system: prompt.system.clone(),
                    user: prompt.user.clone(),
                    response,
                    usage: None,
                    provider,
                    prompt_hash: hash,
                });
            }
        }

        let request = ChatRequest {
            model: self.cfg.model.clone(),
            temperature: self.cfg.temperature,
            system: prompt.system.clone(),
            user: prompt.user.clone(),
        };

        let reply = {
            let _slot = self.slots.acquire();
            self.send_with_retries(&request)?
        };
        if reply.content.is_empty() {
            return Err(GatewayError::MalformedResponse(
                "provider returned an empty message".into(),
            ));
        }

        let exchange = ChatExchange {
            system: prompt.system.clone(),
            user: prompt.user.clone(),
            response: reply.content,
            usage: reply.usage,
            provider: self.transport.tag(),
            prompt_hash: hash.clone(),
        };
        self.append_log(&exchange)?;
        if let Some(replay) = &self.replay {
            replay
                .write()
                .expect("replay lock poisoned")
                .insert(hash, (exchange.provider, exchange.response.clone()));
        }
        Ok(exchange)
    }

    fn send_with_retries(&self, request: &ChatRequest) -> Result<TransportReply, GatewayError> {
        let mut attempt: u32 = 0;
        loop {
            attempt += 1;
            match self.transport.send(request) {
                Ok(reply) => return Ok(reply),
                Err(failure) => {
                    if !failure.retryable() {
                        return Err(match failure {
                            TransportFailure::Http { status, body } => GatewayError::Provider {
                                status,
                                message: provider_message(&body),
                            },
                            TransportFailure::Malformed(m) => GatewayError::MalformedResponse(m),
                            _ => unreachable!("connect/timeout are retryable"),
                        });
                    }
                    if attempt > self.cfg.max_retries {
                        return Err(match failure {
                            TransportFailure::Timeout => GatewayError::Timeout { attempts: attempt },
                            TransportFailure::Connect(m) => GatewayError::Transport {
                                attempts: attempt,
                                message: m,
                            },
                            TransportFailure::Http { status, body } => GatewayError::Transport {
                                attempts: attempt,
                                message: format!("status {status}: {}", provider_message(&body)),
                            },
                            TransportFailure::Malformed(m) => GatewayError::MalformedResponse(m),
                        });
                    }
                    // base * 2^(attempt-1), scaled by jitter in [0.5, 1.5)
                    let exp = self.backoff_base.as_secs_f64() * 2f64.powi(attempt as i32 - 1);
                    let jitter = 0.5 + rand::thread_rng().gen::<f64>();
                    std::thread::sleep(Duration::from_secs_f64(exp * jitter));
                }
            }
        }
    }

    fn append_log(&self, exchange: &ChatExchange) -> Result<(), GatewayError> {
        let Some((path, file)) = &self.log else {
            return Ok(());
        };
        // Stub exchanges log a fixed timestamp so offline artifacts stay
        // byte-identical across runs.
        let timestamp = match exchange.provider {
            ProviderTag::Stub => 0,
            ProviderTag::Real => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let record = LogRecord {
            timestamp,
            prompt_hash: exchange.prompt_hash.clone(),
            provider: exchange.provider,
            prompt: format!("{}\n\n{}", exchange.system, exchange.user),
            response: exchange.response.clone(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
        let mut file = file.lock().expect("log lock poisoned");
        writeln!(file, "{line}").map_err(|source| GatewayError::LogIo {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Pulls a human-readable message out of a provider error body when it is
/// JSON shaped like `{"error": {"message": ...}}`.
fn provider_message(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/error/message")
                .and_then(|m| m.as_str())
                .map(str::to_string)
        })
        .unwrap_or_else(|| body.chars().take(200).collect())
}

/// Blocking HTTP transport speaking the common chat-completions protocol.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    token: String,
}

impl HttpTransport {
    pub fn new(cfg: &ProviderConfig, token: String) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpTransport {
            client,
            url: format!("{}/v1/chat/completions", cfg.endpoint.trim_end_matches('/')),
            token,
        })
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: Vec<WireMessage<'a>>,
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<TransportReply, TransportFailure> {
        let body = WireRequest {
            model: &request.model,
            temperature: request.temperature,
            messages: vec![
                WireMessage { role: "system", content: &request.system },
                WireMessage { role: "user", content: &request.user },
            ],
        };
        let response = self
            .client
            .post(&self.url)
            .bearer_auth(&self.token)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportFailure::Timeout
                } else {
                    TransportFailure::Connect(e.to_string())
                }
            })?;

        let status = response.status().as_u16();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                TransportFailure::Timeout
            } else {
                TransportFailure::Connect(e.to_string())
            }
        })?;
        if !(200..300).contains(&status) {
            return Err(TransportFailure::Http { status, body: text });
        }

        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| TransportFailure::Malformed(e.to_string()))?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .ok_or_else(|| {
                TransportFailure::Malformed("missing choices[0].message.content".into())
            })?;
        Ok(TransportReply {
            content: content.to_string(),
            usage: value.get("usage").cloned(),
        })
    }

    fn tag(&self) -> ProviderTag {
        ProviderTag::Real
    }
}
