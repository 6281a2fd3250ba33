mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use hspace_core::ingest::textgen::{request_generation, GenerationTemplate, HttpTextGen, RetryPolicy, ServiceConfig};
use hspace_core::ingest::TextGenService;
use hspace_core::sampling::Role;
use hspace_core::Error;
use serde_json::{json, Value};

#[derive(Clone)]
struct Mock {
    hits: Arc<AtomicUsize>,
    /// Requests answered with 503 before the first success.
    failures: usize,
    delay: Duration,
}

async fn chat(State(mock): State<Mock>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let n = mock.hits.fetch_add(1, Ordering::SeqCst);
    tokio::time::sleep(mock.delay).await;
    if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some("Bearer k3y") {
        return (StatusCode::UNAUTHORIZED, Json(json!({"error": "bad key"})));
    }
    if n < mock.failures {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "busy"})));
    }
    assert_eq!(body["model"], "writer-1");
    let content = "1. a photo of a nurse\n2. a photo of a pilot\n3. a photo of a chef\n4. a photo of a judge\n5. a photo of a baker";
    (StatusCode::OK, Json(json!({"choices": [{"message": {"role": "assistant", "content": content}}]})))
}

fn start(failures: usize, delay: Duration) -> (String, Arc<AtomicUsize>) {
    let hits = Arc::new(AtomicUsize::new(0));
    let mock = Mock { hits: hits.clone(), failures, delay };
    let url = common::serve(Router::new().route("/v1/chat/completions", post(chat)).with_state(mock));
    (format!("{url}/v1"), hits)
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        attempts: 3,
        base_delay: Duration::from_millis(5),
    }
}

fn template() -> GenerationTemplate {
    GenerationTemplate {
        prompt: "Write five short photo captions of professionals.".into(),
        role: Role::Concept,
        group: None,
        concept: None,
        expected_count: Some(5),
    }
}

#[test]
fn generation_with_audit_trail() {
    let (url, hits) = start(1, Duration::ZERO);
    let audit = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig::new(url, "writer-1");
    config.audit_dir = Some(audit.path().join("requests"));
    let mut svc = HttpTextGen::with_key(config, "k3y").unwrap().with_retry(fast_retry());
    let out_dir = audit.path().join("corpus");
    let records = request_generation(&template(), &mut svc, Some(&out_dir)).unwrap();
    assert_eq!(records.len(), 5);
    assert_eq!(records[4].text, "a photo of a baker");
    assert_eq!(hits.load(Ordering::SeqCst), 2);
    assert_eq!(std::fs::read_dir(audit.path().join("requests")).unwrap().count(), 1);
    let saved: Vec<_> = std::fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(saved.len(), 2);
}

#[test]
fn timeouts_exhaust_three_attempts() {
    let (url, hits) = start(0, Duration::from_millis(400));
    let mut config = ServiceConfig::new(url, "writer-1");
    config.timeout_secs = 0.05;
    let mut svc = HttpTextGen::with_key(config, "k3y").unwrap().with_retry(fast_retry());
    let err = svc.complete("anything").unwrap_err();
    assert!(matches!(err, Error::Service(_)), "{err}");
    std::thread::sleep(Duration::from_millis(100));
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn rejected_key_is_not_retried() {
    let (url, hits) = start(0, Duration::ZERO);
    let mut svc = HttpTextGen::with_key(ServiceConfig::new(url, "writer-1"), "wrong")
        .unwrap()
        .with_retry(fast_retry());
    assert!(matches!(svc.complete("x"), Err(Error::Config(_))));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}
