//! Client side of the external text-generation service.
//!
//! Used to draft prompt corpora and to summarise cluster rosters. The protocol
//! is the OpenAI-compatible chat-completions shape; any server speaking it
//! works. The API key always comes from an environment variable.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::ids::{caption_id, sha256_hex};
use crate::sampling::{PromptRecord, Role};

pub const DEFAULT_KEY_ENV: &str = "HSPACE_TEXTGEN_API_KEY";

pub trait TextGenService: Send {
    fn name(&self) -> &str;

    /// One prompt in, one completion out. Failures worth retrying are
    /// reported as [`Error::Service`]; everything else is final.
    fn complete(&mut self, prompt: &str) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Run `op` until it succeeds, fails with a non-service error, or the
    /// attempts are exhausted. Delays double after every failure.
    pub fn run<T>(&self, mut op: impl FnMut(u32) -> Result<T>) -> Result<T> {
        let attempts = self.attempts.max(1);
        let mut delay = self.base_delay;
        let mut last = None;
        for attempt in 1..=attempts {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(Error::Service(msg)) => {
                    log::warn!("text service attempt {attempt}/{attempts} failed: {msg}");
                    last = Some(msg);
                    if attempt < attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::Service(format!(
            "giving up after {attempts} attempts: {}",
            last.unwrap_or_default()
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_kind")]
    pub kind: String,
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Minimum spacing between requests.
    #[serde(default)]
    pub min_interval_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_dir: Option<PathBuf>,
}

fn default_kind() -> String {
    "openai".into()
}

fn default_key_env() -> String {
    DEFAULT_KEY_ENV.into()
}

fn default_timeout() -> f64 {
    60.0
}

impl ServiceConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            kind: default_kind(),
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            timeout_secs: default_timeout(),
            min_interval_ms: 0,
            audit_dir: None,
        }
    }
}

/// Writes numbered request/response pairs into a directory.
#[derive(Debug, Clone)]
pub struct AuditLog {
    dir: PathBuf,
}

impl AuditLog {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record(&self, service: &str, request: &str, response: &Result<String>) -> Result<PathBuf> {
        let n = std::fs::read_dir(&self.dir)
            .map_err(|e| Error::io(&self.dir, e))?
            .count();
        let path = self.dir.join(format!("{n:05}-{}.json", &sha256_hex(request.as_bytes())[..8]));
        let body = match response {
            Ok(text) => json!({"service": service, "request": request, "response": text}),
            Err(e) => json!({"service": service, "request": request, "error": e.to_string()}),
        };
        std::fs::write(&path, serde_json::to_vec_pretty(&body)?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Chat-completions client with retries, rate limiting and auditing.
pub struct HttpTextGen {
    config: ServiceConfig,
    key: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
    audit: Option<AuditLog>,
    last_request: Option<Instant>,
}

impl std::fmt::Debug for HttpTextGen {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTextGen")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

impl HttpTextGen {
    pub fn new(config: ServiceConfig) -> Result<Self> {
        let key = std::env::var(&config.api_key_env).map_err(|_| {
            Error::Config(format!(
                "api_key_env: environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: ServiceConfig, key: impl Into<String>) -> Result<Self> {
        if !(config.timeout_secs > 0.0 && config.timeout_secs.is_finite()) {
            return Err(Error::Config(format!(
                "timeout_secs: must be positive, got {}",
                config.timeout_secs
            )));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("endpoint: {e}")))?;
        let audit = config.audit_dir.clone().map(AuditLog::new).transpose()?;
        Ok(Self {
            config,
            key: key.into(),
            client,
            retry: RetryPolicy::default(),
            audit,
            last_request: None,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn pace(&mut self) {
        let gap = Duration::from_millis(self.config.min_interval_ms);
        if let Some(last) = self.last_request {
            let elapsed = last.elapsed();
            if elapsed < gap {
                std::thread::sleep(gap - elapsed);
            }
        }
        self.last_request = Some(Instant::now());
    }

    fn send_once(&mut self, prompt: &str) -> Result<String> {
        self.pace();
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp = self
            .client
            .post(self.url())
            .bearer_auth(&self.key)
            .json(&body)
            .send()
            .map_err(|e| Error::Service(format!("request to {} failed: {e}", self.config.endpoint)))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Error::Service(format!("reading response: {e}")))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Error::Service(format!("status {status}: {text}")));
        }
        if !status.is_success() {
            return Err(Error::Config(format!(
                "text service rejected the request with status {status}: {text}"
            )));
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            message: format!("response is not JSON: {e}"),
            raw: text.clone(),
        })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Parse {
                message: "response has no choices[0].message.content".into(),
                raw: text,
            })
    }
}

impl TextGenService for HttpTextGen {
    fn name(&self) -> &str {
        "openai"
    }

    fn complete(&mut self, prompt: &str) -> Result<String> {
        let retry = self.retry;
        let result = retry.run(|_| self.send_once(prompt));
        if let Some(audit) = &self.audit {
            audit.record(&self.config.model, prompt, &result)?;
        }
        result
    }
}

/// Replays canned responses in order; `Err` entries simulate outages.
#[derive(Debug, Default)]
pub struct ScriptedTextGen {
    responses: VecDeque<std::result::Result<String, String>>,
    pub prompts: Vec<String>,
}

impl ScriptedTextGen {
    pub fn new(responses: impl IntoIterator<Item = std::result::Result<String, String>>) -> Self {
        Self {
            responses: responses.into_iter().collect(),
            prompts: Vec::new(),
        }
    }

    pub fn always(text: impl Into<String>, times: usize) -> Self {
        let text = text.into();
        Self::new(std::iter::repeat_n(Ok(text), times))
    }
}

impl TextGenService for ScriptedTextGen {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&mut self, prompt: &str) -> Result<String> {
        self.prompts.push(prompt.to_string());
        match self.responses.pop_front() {
            Some(Ok(text)) => Ok(text),
            Some(Err(msg)) => Err(Error::Service(msg)),
            None => Err(Error::Service("scripted service has no responses left".into())),
        }
    }
}

pub type TextGenFactory = Arc<dyn Fn(&ServiceConfig) -> Result<Box<dyn TextGenService>> + Send + Sync>;

#[derive(Clone)]
pub struct TextGenRegistry {
    factories: BTreeMap<String, TextGenFactory>,
}

impl Default for TextGenRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl TextGenRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut registry = Self::empty();
        registry.register("openai", Arc::new(|c| Ok(Box::new(HttpTextGen::new(c.clone())?))));
        registry
    }

    pub fn register(&mut self, kind: impl Into<String>, factory: TextGenFactory) {
        self.factories.insert(kind.into(), factory);
    }

    pub fn connect(&self, config: &ServiceConfig) -> Result<Box<dyn TextGenService>> {
        let factory = self
            .factories
            .get(&config.kind)
            .ok_or_else(|| Error::Config(format!("kind: unknown text service '{}'", config.kind)))?;
        factory(config)
    }
}

/// What to ask the service for when drafting a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationTemplate {
    pub prompt: String,
    #[serde(default = "default_role")]
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
    /// Reject responses that do not hold exactly this many captions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_count: Option<usize>,
}

fn default_role() -> Role {
    Role::Corpus
}

/// Captions from a numbered-list response (`1. ...`, `2) ...`).
pub fn parse_numbered_list(raw: &str) -> Result<Vec<String>> {
    let line = Regex::new(r"^\s*\d+\s*[.):]\s*(.*\S)\s*$").expect("valid pattern");
    let captions: Vec<String> = raw
        .lines()
        .filter_map(|l| line.captures(l))
        .map(|c| c[1].trim_matches('"').trim().to_string())
        .filter(|c| !c.is_empty())
        .collect();
    if captions.is_empty() {
        return Err(Error::Parse {
            message: "response holds no numbered caption lines".into(),
            raw: raw.to_string(),
        });
    }
    Ok(captions)
}

/// Ask `service` for captions and parse them into prompt records. When
/// `audit_dir` is given the raw response is stored there next to the parsed
/// records.
pub fn request_generation(
    template: &GenerationTemplate,
    service: &mut dyn TextGenService,
    audit_dir: Option<&Path>,
) -> Result<Vec<PromptRecord>> {
    let raw = service.complete(&template.prompt)?;
    let stem = format!("generation-{}", &sha256_hex(raw.as_bytes())[..12]);
    if let Some(dir) = audit_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{stem}.raw.txt"));
        std::fs::write(&path, &raw).map_err(|e| Error::io(&path, e))?;
    }
    let captions = parse_numbered_list(&raw)?;
    if let Some(n) = template.expected_count {
        if captions.len() != n {
            return Err(Error::Parse {
                message: format!("expected {n} captions, response holds {}", captions.len()),
                raw,
            });
        }
    }
    let records: Vec<PromptRecord> = captions
        .into_iter()
        .map(|text| {
            let mut r = PromptRecord::new(caption_id(&text), text, template.role);
            r.group = template.group.clone();
            r.concept = template.concept.clone();
            r
        })
        .collect();
    if let Some(dir) = audit_dir {
        let path = dir.join(format!("{stem}.records.json"));
        std::fs::write(&path, serde_json::to_vec_pretty(&records)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_captions() {
        let mut svc = ScriptedTextGen::always(
            "Here you go:\n1. a nurse\n2. a pilot\n3) a chef\n4. \"a judge\"\n5. a baker\n",
            1,
        );
        let template = GenerationTemplate {
            prompt: "five professions".into(),
            role: Role::Concept,
            group: Some("jobs".into()),
            concept: None,
            expected_count: Some(5),
        };
        let records = request_generation(&template, &mut svc, None).unwrap();
        assert_eq!(records.len(), 5);
        assert_eq!(records[3].text, "a judge");
        assert_eq!(records[0].group.as_deref(), Some("jobs"));
        assert_eq!(records[0].id, caption_id("a nurse"));
    }

    #[test]
    fn missing_delimiter_keeps_raw() {
        let mut svc = ScriptedTextGen::always("a nurse, a pilot", 1);
        let template = GenerationTemplate {
            prompt: "p".into(),
            role: Role::Corpus,
            group: None,
            concept: None,
            expected_count: None,
        };
        match request_generation(&template, &mut svc, None) {
            Err(Error::Parse { raw, .. }) => assert_eq!(raw, "a nurse, a pilot"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn retry_gives_up_after_three() {
        let policy = RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        };
        let mut calls = 0;
        let out: Result<()> = policy.run(|_| {
            calls += 1;
            Err(Error::Service("timeout".into()))
        });
        assert!(matches!(out, Err(Error::Service(_))));
        assert_eq!(calls, 3);
    }

    #[test]
    fn retry_stops_on_final_error() {
        let policy = RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        };
        let mut calls = 0;
        let out: Result<()> = policy.run(|_| {
            calls += 1;
            Err(Error::Config("bad key".into()))
        });
        assert!(matches!(out, Err(Error::Config(_))));
        assert_eq!(calls, 1);
    }

    #[test]
    fn missing_key_is_config_error() {
        let mut config = ServiceConfig::new("http://127.0.0.1:9", "m");
        config.api_key_env = "HSPACE_TEST_KEY_THAT_IS_NOT_SET".into();
        assert!(matches!(HttpTextGen::new(config), Err(Error::Config(_))));
    }
}
