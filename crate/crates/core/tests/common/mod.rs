#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use trajbench::corpus::simulate_corpus;
use trajbench::harness::eval::{request_body, EvalConfig};
use trajbench::postprocess::{bucket_trajectory, ApproxCounter, BucketSpec};
use trajbench::qa::{build_dataset, DatasetOptions, Prefix, QASample, QuotaConfig};
use trajbench::rollout::RolloutConfig;
use trajbench::universe::{generate_synthetic_universe, NameStyle, SyntheticSpec};

/// How the scripted endpoint answers.
pub enum Behaviour {
    /// The sample's gold answer inside answer tags.
    Echo,
    /// The same reply for every request.
    Constant(String),
    /// Echo, after failing the first request for each sample with a 503.
    FlakyEcho,
    /// Always this status.
    Fail(StatusCode),
}

pub struct Mock {
    behaviour: Behaviour,
    answers: HashMap<String, String>,
    failed_once: Mutex<HashSet<String>>,
    pub requests: Mutex<usize>,
}

/// Requests are matched to samples by a hash of their message list.
fn key(messages: &Value) -> String {
    let digest = Sha256::digest(serde_json::to_string(messages).unwrap().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn reply(text: &str) -> Json<Value> {
    Json(json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}))
}

async fn handle(State(mock): State<Arc<Mock>>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    *mock.requests.lock().unwrap() += 1;
    let k = key(&body["messages"]);
    let echo = || match mock.answers.get(&k) {
        Some(a) => (StatusCode::OK, reply(&format!("Let me check.\n<answer>{a}</answer>"))),
        None => (StatusCode::BAD_REQUEST, Json(json!({"error": "unknown sample"}))),
    };
    match &mock.behaviour {
        Behaviour::Echo => echo(),
        Behaviour::Constant(text) => (StatusCode::OK, reply(text)),
        Behaviour::FlakyEcho => {
            if mock.failed_once.lock().unwrap().insert(k.clone()) {
                (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "busy"})))
            } else {
                echo()
            }
        }
        Behaviour::Fail(status) => (*status, Json(json!({"error": "down"}))),
    }
}

/// Starts a scripted chat-completions server on a free local port and
/// returns its URL.
pub async fn spawn_mock(dataset: &[QASample], behaviour: Behaviour) -> (String, Arc<Mock>) {
    let probe = EvalConfig::new("http://unused", "mock");
    let answers = dataset
        .iter()
        .map(|s| (key(&request_body(s, &probe)["messages"]), s.gold.answer_text()))
        .collect();
    let mock = Arc::new(Mock {
        behaviour,
        answers,
        failed_once: Mutex::new(HashSet::new()),
        requests: Mutex::new(0),
    });
    let app = Router::new()
        .route("/v1/chat/completions", post(handle))
        .with_state(Arc::clone(&mock));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1/chat/completions"), mock)
}

pub fn fast_config(url: &str) -> EvalConfig {
    EvalConfig {
        backoff_ms: 5,
        timeout_secs: 30,
        ..EvalConfig::new(url, "mock")
    }
}

/// A small concise dataset with two samples per question type in each of
/// two short buckets.
pub fn small_dataset(seed: u64) -> Vec<QASample> {
    let u = generate_synthetic_universe(&SyntheticSpec::canonical(200).with_names(NameStyle::Pronounceable), seed).unwrap();
    let corpus = simulate_corpus(&u, &RolloutConfig::concise(seed), 60).unwrap();
    let counter = ApproxCounter;
    let spec = BucketSpec::new(vec![4096, 8192], 0.9).unwrap();
    let prefixes: Vec<Prefix> = corpus
        .iter()
        .flat_map(|r| {
            bucket_trajectory(&counter, &spec, &r.id, &r.trajectory)
                .into_iter()
                .map(|e| Prefix::new(&e.id, e.bucket_limit, &r.trajectory, e.rounds, &counter))
        })
        .collect();
    let quota = QuotaConfig::uniform(&spec.limits, 2);
    build_dataset(&prefixes, &quota, seed, &DatasetOptions::default(), &counter).unwrap()
}
