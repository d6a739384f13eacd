use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{LlmError, TemplateName};

/// One model call as seen by a backend.
#[derive(Debug, Clone, Copy)]
pub struct BackendRequest<'a> {
    pub template: TemplateName,
    pub fingerprint: &'a str,
    pub prompt: &'a str,
    /// Slot values the prompt was rendered from.
    pub slots: &'a [String],
    /// Zero for the first try, incremented on each malformed-output retry.
    pub attempt: u32,
}

pub trait Backend: Send + Sync {
    fn respond(&self, request: &BackendRequest<'_>) -> Result<String, LlmError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn respond(&self, request: &BackendRequest<'_>) -> Result<String, LlmError> {
        (**self).respond(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn respond(&self, request: &BackendRequest<'_>) -> Result<String, LlmError> {
        (**self).respond(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub template: TemplateName,
    pub fingerprint: String,
    /// Responses by attempt; later attempts reuse the last one.
    pub responses: Vec<String>,
}

/// Canned responses keyed by (template, fingerprint).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptTable {
    entries: BTreeMap<(TemplateName, String), Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct ScriptFile {
    entries: Vec<ScriptEntry>,
}

impl ScriptTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, template: TemplateName, fingerprint: &str, responses: Vec<String>) {
        self.entries
            .insert((template, fingerprint.to_string()), responses);
    }

    pub fn get(&self, template: TemplateName, fingerprint: &str) -> Option<&[String]> {
        self.entries
            .get(&(template, fingerprint.to_string()))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn merge(&mut self, other: ScriptTable) {
        self.entries.extend(other.entries);
    }

    pub fn to_json(&self) -> String {
        let file = ScriptFile {
            entries: self
                .entries
                .iter()
                .map(|((t, f), r)| ScriptEntry {
                    template: *t,
                    fingerprint: f.clone(),
                    responses: r.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("script table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let file: ScriptFile = serde_json::from_str(text)
            .map_err(|e| LlmError::Config(format!("script table: {e}")))?;
        let mut table = ScriptTable::new();
        for e in file.entries {
            if e.responses.is_empty() {
                return Err(LlmError::Config(format!(
                    "script entry {}:{} has no responses",
                    e.template, e.fingerprint
                )));
            }
            table.insert(e.template, &e.fingerprint, e.responses);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Replays a [`ScriptTable`]. Stateless, so concurrent use is deterministic.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    table: ScriptTable,
}

impl ScriptedBackend {
    pub fn new(table: ScriptTable) -> Self {
        ScriptedBackend { table }
    }

    pub fn table(&self) -> &ScriptTable {
        &self.table
    }
}

impl Backend for ScriptedBackend {
    fn respond(&self, req: &BackendRequest<'_>) -> Result<String, LlmError> {
        let responses = self
            .table
            .get(req.template, req.fingerprint)
            .ok_or_else(|| LlmError::ScriptMiss {
                template: req.template,
                fingerprint: req.fingerprint.to_string(),
            })?;
        let i = (req.attempt as usize).min(responses.len() - 1);
        Ok(responses[i].clone())
    }
}

/// Wraps a backend and records every response into a script table.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<ScriptTable>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            recorded: Mutex::new(ScriptTable::new()),
        }
    }

    pub fn table(&self) -> ScriptTable {
        self.recorded.lock().expect("recorder lock").clone()
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn respond(&self, req: &BackendRequest<'_>) -> Result<String, LlmError> {
        let out = self.inner.respond(req)?;
        let mut table = self.recorded.lock().expect("recorder lock");
        let key = (req.template, req.fingerprint.to_string());
        let slot = table.entries.entry(key).or_default();
        let at = req.attempt as usize;
        if slot.len() <= at {
            slot.resize(at + 1, out.clone());
        }
        slot[at] = out.clone();
        Ok(out)
    }
}

/// Chat-completion style HTTP endpoint.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    credential: String,
}

impl HttpBackend {
    /// Reads the credential from the environment variable named
    /// `credential_env`.
    pub fn new(
        endpoint: &str,
        credential_env: &str,
        model: &str,
        timeout: Duration,
    ) -> Result<Self, LlmError> {
        let credential = std::env::var(credential_env).map_err(|_| {
            LlmError::AuthFailure(format!("environment variable {credential_env} is not set"))
        })?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            agent,
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            credential,
        })
    }
}

impl Backend for HttpBackend {
    fn respond(&self, req: &BackendRequest<'_>) -> Result<String, LlmError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": req.prompt}],
        });
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.credential))
            .send_json(&body)
            .map_err(map_transport)?;
        let status = resp.status().as_u16();
        if status == 401 || status == 403 {
            return Err(LlmError::AuthFailure(format!("endpoint returned {status}")));
        }
        if status == 408 || status == 504 {
            return Err(LlmError::Timeout);
        }
        if !(200..300).contains(&status) {
            return Err(LlmError::Transport(format!("endpoint returned {status}")));
        }
        let value: Value = resp.body_mut().read_json().map_err(map_transport)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::Transport("response has no choices[0].message.content".into()))
    }
}

fn map_transport(e: ureq::Error) -> LlmError {
    match e {
        ureq::Error::Timeout(_) => LlmError::Timeout,
        ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => LlmError::Timeout,
        other => LlmError::Transport(other.to_string()),
    }
}
