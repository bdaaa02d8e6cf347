//! Client for an Ollama-compatible `/api/generate` endpoint.

use std::io;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, TutorBackend, TutorReply, TutorRequest};

/// Environment variable overriding the configured base URL.
pub const URL_ENV_VAR: &str = "TUTOR_RL_LLM_URL";
pub const DEFAULT_BASE_URL: &str = "http://127.0.0.1:11434";

#[derive(Debug, Serialize)]
pub struct GenerateRequest<'a> {
    pub model: &'a str,
    pub system: &'a str,
    pub prompt: &'a str,
    pub stream: bool,
}

#[derive(Debug, Deserialize)]
pub struct GenerateResponse {
    pub response: String,
    #[serde(default)]
    pub total_duration: Option<u64>,
    #[serde(default)]
    pub eval_count: Option<u64>,
}

pub struct HttpLlmBackend {
    agent: ureq::Agent,
    base_url: String,
    model: String,
}

/// Base URL from the environment variable, else `configured`, else the local default.
pub fn resolve_base_url(configured: Option<&str>) -> String {
    std::env::var(URL_ENV_VAR)
        .ok()
        .filter(|s| !s.trim().is_empty())
        .or_else(|| configured.map(str::to_string))
        .unwrap_or_else(|| DEFAULT_BASE_URL.to_string())
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io_err) = e.downcast_ref::<io::Error>() {
            if matches!(io_err.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = e.source();
    }
    err.to_string().contains("timed out")
}

impl HttpLlmBackend {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { agent, base_url: base_url.into().trim_end_matches('/').to_string(), model: model.into() }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/api/generate", self.base_url)
    }

    pub fn generate(&self, system: &str, prompt: &str) -> Result<GenerateResponse, BackendError> {
        let body = GenerateRequest { model: &self.model, system, prompt, stream: false };
        let response = self.agent.post(&self.endpoint()).send_json(&body).map_err(|e| match e {
            ureq::Error::Status(code, resp) => {
                let text = resp.into_string().unwrap_or_default();
                BackendError::Transport(format!("status {code}: {}", text.chars().take(200).collect::<String>()))
            }
            ureq::Error::Transport(t) if is_timeout(&t) => BackendError::Timeout,
            ureq::Error::Transport(t) => BackendError::Transport(t.to_string()),
        })?;
        let text = response.into_string().map_err(|e| {
            if matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        serde_json::from_str(&text).map_err(|e| BackendError::Transport(format!("malformed response body: {e}")))
    }
}

impl TutorBackend for HttpLlmBackend {
    fn query(&mut self, request: &TutorRequest<'_>) -> Result<TutorReply, BackendError> {
        let start = Instant::now();
        let reply = self.generate(request.system, request.prompt)?;
        Ok(TutorReply { text: reply.response, latency_seconds: start.elapsed().as_secs_f64() })
    }

    fn describe(&self) -> String {
        format!("http:{}", self.model)
    }
}
