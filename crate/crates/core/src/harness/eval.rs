//! Evaluation against a chat-completions endpoint.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::answer::{extract_answer, score, Extracted};
use super::chat::{ChatMessage, Role};
use crate::error::{Error, Result};
use crate::qa::QASample;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_concurrent: usize,
    pub timeout_secs: u64,
    pub retries: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(skip)]
    pub api_key: Option<String>,
    /// Stop after this many new results (the rest is left for a resumed run).
    #[serde(skip)]
    pub stop_after: Option<usize>,
}

impl EvalConfig {
    pub fn new(endpoint: &str, model: &str) -> Self {
        EvalConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.7,
            max_concurrent: 4,
            timeout_secs: 600,
            retries: 3,
            backoff_ms: 500,
            max_tokens: None,
            api_key: None,
            stop_after: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointMeta {
    pub url: String,
    pub model: String,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub sample_id: String,
    pub raw_response: String,
    pub extracted: Extracted,
    pub correct: bool,
    pub latency_ms: u64,
    pub endpoint: EndpointMeta,
    pub attempts: u32,
    /// Transport or protocol failure that survived every retry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub resumed: usize,
    pub completed: usize,
    pub failed: usize,
    pub remaining: usize,
}

/// Request body: the sample's messages followed by the question as a final
/// user message.
pub fn request_body(sample: &QASample, cfg: &EvalConfig) -> Value {
    let mut messages: Vec<ChatMessage> = sample.messages.iter().map(ChatMessage::stringified).collect();
    messages.push(ChatMessage::text(Role::User, sample.question_text.clone()));
    let mut body = json!({
        "model": cfg.model,
        "messages": messages,
        "temperature": cfg.temperature,
    });
    if let Some(n) = cfg.max_tokens {
        body["max_tokens"] = json!(n);
    }
    body
}

fn response_text(v: &Value) -> Option<String> {
    let content = &v.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Null => Some(String::new()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(String),
}

async fn call_once(client: &reqwest::Client, cfg: &EvalConfig, body: &Value) -> Attempt {
    let mut req = client.post(&cfg.endpoint).json(body);
    if let Some(key) = &cfg.api_key {
        req = req.bearer_auth(key);
    }
    let resp = match req.send().await {
        Ok(r) => r,
        Err(e) => return Attempt::Retry(format!("transport: {e}")),
    };
    let status = resp.status();
    let text = match resp.text().await {
        Ok(t) => t,
        Err(e) => return Attempt::Retry(format!("reading body: {e}")),
    };
    if status.as_u16() == 429 || status.is_server_error() {
        return Attempt::Retry(format!("HTTP {status}"));
    }
    if !status.is_success() {
        return Attempt::Fatal(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()));
    }
    match serde_json::from_str::<Value>(&text).ok().as_ref().and_then(response_text) {
        Some(s) => Attempt::Done(s),
        None => Attempt::Fatal("malformed chat-completions response".into()),
    }
}

async fn evaluate_one(client: &reqwest::Client, cfg: &EvalConfig, sample: &QASample) -> EvalResult {
    let body = request_body(sample, cfg);
    let started = Instant::now();
    let mut attempts = 0;
    let outcome = loop {
        attempts += 1;
        match call_once(client, cfg, &body).await {
            Attempt::Done(s) => break Ok(s),
            Attempt::Fatal(e) => break Err(e),
            Attempt::Retry(e) if attempts > cfg.retries => break Err(e),
            Attempt::Retry(_) => {
                let delay = cfg.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
                tokio::time::sleep(Duration::from_millis(delay)).await;
            }
        }
    };
    let latency_ms = started.elapsed().as_millis() as u64;
    let endpoint = EndpointMeta {
        url: cfg.endpoint.clone(),
        model: cfg.model.clone(),
        temperature: cfg.temperature,
    };
    match outcome {
        Ok(raw) => {
            let extracted = extract_answer(&raw, sample.gold.kind());
            EvalResult {
                sample_id: sample.sample_id.clone(),
                correct: score(&sample.gold, &extracted),
                raw_response: raw,
                extracted,
                latency_ms,
                endpoint,
                attempts,
                error: None,
            }
        }
        Err(e) => EvalResult {
            sample_id: sample.sample_id.clone(),
            raw_response: String::new(),
            extracted: Extracted::Failure {
                reason: "no response".into(),
            },
            correct: false,
            latency_ms,
            endpoint,
            attempts,
            error: Some(e),
        },
    }
}

/// Reads a results file. A malformed final line (an interrupted write) is
/// dropped; malformed lines elsewhere are an error.
pub fn load_results(path: &Path) -> Result<Vec<EvalResult>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => {
                return Err(Error::Parse {
                    row: i + 1,
                    column: "line".into(),
                    message: format!("{}: {e}", path.display()),
                })
            }
        }
    }
    Ok(out)
}

fn rewrite(path: &Path, results: &[EvalResult]) -> Result<()> {
    let mut buf = String::new();
    for r in results {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Sends every sample not yet in `out` to the endpoint, at most
/// `max_concurrent` at a time, appending each result as it arrives.
pub async fn run_eval(dataset: &[QASample], cfg: &EvalConfig, out: &Path) -> Result<EvalSummary> {
    if cfg.max_concurrent == 0 {
        return Err(Error::Config("max_concurrent must be at least 1".into()));
    }
    let done = load_results(out)?;
    // Drop any torn trailing line before appending.
    rewrite(out, &done)?;
    let done_ids: HashSet<&str> = done.iter().map(|r| r.sample_id.as_str()).collect();
    let pending: Vec<&QASample> = dataset.iter().filter(|s| !done_ids.contains(s.sample_id.as_str())).collect();
    let budget = cfg.stop_after.unwrap_or(usize::MAX).min(pending.len());

    let client = reqwest::Client::builder()
        .timeout(Duration::from_secs(cfg.timeout_secs))
        .build()
        .map_err(|e| Error::Endpoint(e.to_string()))?;
    let client = Arc::new(client);
    let mut file = std::fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(out)
        .map_err(|e| Error::io(out, e))?;

    let mut summary = EvalSummary {
        resumed: done.len(),
        ..Default::default()
    };
    let mut results = stream::iter(pending.iter().take(budget).copied())
        .map(|s| {
            let client = Arc::clone(&client);
            async move { evaluate_one(&client, cfg, s).await }
        })
        .buffer_unordered(cfg.max_concurrent);
    while let Some(r) = results.next().await {
        if r.error.is_some() {
            summary.failed += 1;
        }
        summary.completed += 1;
        let mut line = serde_json::to_string(&r)?;
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(|e| Error::io(out, e))?;
        file.flush().map_err(|e| Error::io(out, e))?;
    }
    summary.remaining = pending.len() - summary.completed;
    Ok(summary)
}
