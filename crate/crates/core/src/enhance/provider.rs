use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};

pub const SYSTEM_PROMPT: &str =
    "You are a helpful assistant designed to give a comprehensive introduction about people. Who is this one?";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

pub fn build_prompt(entity_name: &str) -> Result<Prompt> {
    if entity_name.trim().is_empty() {
        return Err(Error::Input("entity name is empty".into()));
    }
    Ok(Prompt {
        system: SYSTEM_PROMPT.to_string(),
        user: entity_name.to_string(),
    })
}

/// Something that answers a prompt for an entity.
///
/// [`Error::Provider`] is treated as transient and retried; any other error
/// is final for that entity.
pub trait Provider: Sync {
    fn complete(&self, entity_id: &str, prompt: &Prompt) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub max_retries: u32,
    pub concurrency: usize,
    pub timeout: Duration,
    /// First retry delay; doubles on each further attempt, with jitter.
    pub backoff_base: Duration,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            endpoint: None,
            model: "gpt-3.5-turbo".into(),
            max_retries: 3,
            concurrency: 4,
            timeout: Duration::from_secs(60),
            backoff_base: Duration::from_secs(1),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == ProviderKind::Http && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(Error::Configuration("http provider requires an endpoint".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::Configuration("concurrency must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    id: String,
    response: Option<String>,
    #[serde(default)]
    failures: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    /// `None` simulates a malformed reply.
    pub response: Option<String>,
    /// Transient failures to return before answering.
    pub failures: u32,
}

/// Replays scripted responses by entity id. Unscripted ids get an empty reply.
#[derive(Debug, Default)]
pub struct MockProvider {
    script: HashMap<String, ScriptEntry>,
    attempts: Mutex<HashMap<String, u32>>,
}

impl MockProvider {
    pub fn new(script: HashMap<String, ScriptEntry>) -> Self {
        MockProvider {
            script,
            attempts: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_responses<I, K, V>(responses: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self::new(
            responses
                .into_iter()
                .map(|(k, v)| {
                    (
                        k.into(),
                        ScriptEntry {
                            response: Some(v.into()),
                            failures: 0,
                        },
                    )
                })
                .collect(),
        )
    }

    /// Script file: one `{"id", "response", "failures"?}` object per line.
    pub fn from_script_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut script = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let parsed: ScriptLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            let entry = ScriptEntry {
                response: parsed.response,
                failures: parsed.failures,
            };
            if script.insert(parsed.id.clone(), entry).is_some() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("duplicate script id {}", parsed.id),
                });
            }
        }
        Ok(Self::new(script))
    }
}

impl Provider for MockProvider {
    fn complete(&self, entity_id: &str, _prompt: &Prompt) -> Result<String> {
        let Some(entry) = self.script.get(entity_id) else {
            return Ok(String::new());
        };
        if entry.failures > 0 {
            let mut attempts = self.attempts.lock().expect("attempt counter poisoned");
            let n = attempts.entry(entity_id.to_string()).or_insert(0);
            if *n < entry.failures {
                *n += 1;
                return Err(Error::Provider(format!(
                    "scripted failure {} of {} for {entity_id}",
                    n, entry.failures
                )));
            }
        }
        entry
            .response
            .clone()
            .ok_or_else(|| Error::Protocol(format!("malformed reply for {entity_id}")))
    }
}

/// Chat-completion client: posts system and user messages, reads
/// `choices[0].message.content`.
pub struct HttpProvider {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpProvider {
    pub fn new(cfg: &ProviderConfig, api_key: Option<String>) -> Result<Self> {
        cfg.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(HttpProvider {
            agent,
            endpoint: cfg.endpoint.clone().unwrap_or_default(),
            model: cfg.model.clone(),
            api_key,
        })
    }
}

pub fn request_body(model: &str, prompt: &Prompt) -> serde_json::Value {
    json!({
        "model": model,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": prompt.user},
        ],
    })
}

pub fn parse_reply(body: &serde_json::Value) -> Result<String> {
    body.pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Protocol("reply lacks choices[0].message.content".into()))
}

impl Provider for HttpProvider {
    fn complete(&self, entity_id: &str, prompt: &Prompt) -> Result<String> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request_body(&self.model, prompt))
            .map_err(|e| Error::Provider(format!("{entity_id}: {e}")))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Error::Provider(format!("{entity_id}: HTTP {status}")));
        }
        if status >= 400 {
            return Err(Error::Protocol(format!("{entity_id}: HTTP {status}")));
        }
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Protocol(format!("{entity_id}: {e}")))?;
        parse_reply(&body)
    }
}
