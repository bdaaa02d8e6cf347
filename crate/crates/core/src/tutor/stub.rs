//! Local canned-response server speaking the `/api/generate` protocol.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

#[derive(Clone, Debug)]
pub struct StubConfig {
    /// Replies served in rotation.
    pub replies: Vec<String>,
    /// Probability of serving `malformed_reply` instead.
    pub malformed_rate: f64,
    pub malformed_reply: String,
    pub delay: Duration,
    pub seed: u64,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            replies: vec!["<action>0</action>".to_string()],
            malformed_rate: 0.0,
            malformed_reply: "I would rather not say.".to_string(),
            delay: Duration::ZERO,
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[allow(dead_code)]
struct GenerateBody {
    model: String,
    #[serde(default)]
    system: String,
    prompt: String,
    #[serde(default)]
    stream: Option<bool>,
}

#[derive(Debug, thiserror::Error)]
#[error("failed to start stub server: {0}")]
pub struct StubError(String);

/// Running stub; shuts down when dropped.
pub struct StubServer {
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
    requests: Arc<AtomicUsize>,
    port: u16,
}

impl StubServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves on a background thread.
    pub fn start(addr: &str, config: StubConfig) -> Result<Self, StubError> {
        let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| StubError(e.to_string()))?);
        let port = server.server_addr().to_ip().map(|a| a.port()).ok_or_else(|| StubError("not an IP listener".into()))?;
        let requests = Arc::new(AtomicUsize::new(0));
        let state = Arc::new(Mutex::new((ChaCha8Rng::seed_from_u64(config.seed), 0usize)));
        let handle = {
            let server = Arc::clone(&server);
            let requests = Arc::clone(&requests);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle_request(request, &config, &state, &requests);
                }
            })
        };
        Ok(Self { server, handle: Some(handle), requests, port })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Blocks the calling thread until the server stops.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn respond(request: tiny_http::Request, status: u16, body: String) {
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    let response = tiny_http::Response::from_string(body).with_status_code(status).with_header(header);
    let _ = request.respond(response);
}

fn handle_request(mut request: tiny_http::Request, config: &StubConfig, state: &Mutex<(ChaCha8Rng, usize)>, requests: &AtomicUsize) {
    if request.method() != &tiny_http::Method::Post || request.url() != "/api/generate" {
        respond(request, 404, json!({"error": "not found"}).to_string());
        return;
    }
    let mut raw = String::new();
    if request.as_reader().read_to_string(&mut raw).is_err() {
        respond(request, 400, json!({"error": "unreadable body"}).to_string());
        return;
    }
    let body: GenerateBody = match serde_json::from_str(&raw) {
        Ok(b) => b,
        Err(e) => {
            respond(request, 400, json!({"error": e.to_string()}).to_string());
            return;
        }
    };
    if body.stream == Some(true) {
        respond(request, 400, json!({"error": "streaming not supported"}).to_string());
        return;
    }
    requests.fetch_add(1, Ordering::SeqCst);
    let text = {
        let mut guard = state.lock().expect("stub state");
        let (rng, cursor) = &mut *guard;
        let malformed = config.malformed_rate > 0.0 && rng.gen::<f64>() < config.malformed_rate;
        let reply = if malformed || config.replies.is_empty() {
            config.malformed_reply.clone()
        } else {
            config.replies[*cursor % config.replies.len()].clone()
        };
        *cursor += 1;
        reply
    };
    if !config.delay.is_zero() {
        std::thread::sleep(config.delay);
    }
    let payload = json!({
        "model": body.model,
        "created_at": "1970-01-01T00:00:00Z",
        "response": text,
        "done": true,
        "done_reason": "stop",
        "total_duration": config.delay.as_nanos() as u64,
        "eval_count": text.len(),
    });
    respond(request, 200, payload.to_string());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tutor::http::HttpLlmBackend;
    use crate::tutor::{parse_action, BackendError};

    #[test]
    fn canned_round_trip() {
        let stub = StubServer::start("127.0.0.1:0", StubConfig { replies: vec!["ok <action>2</action>".into()], ..StubConfig::default() }).unwrap();
        let backend = HttpLlmBackend::new(stub.base_url(), "stub-model", Duration::from_secs(5));
        let reply = backend.generate("sys", "prompt").unwrap();
        assert_eq!(parse_action(&reply.response, 4).unwrap().0, 2);
        assert_eq!(stub.request_count(), 1);
    }

    #[test]
    fn non_2xx_is_transport_error() {
        let stub = StubServer::start("127.0.0.1:0", StubConfig::default()).unwrap();
        let backend = HttpLlmBackend::new(format!("{}/missing", stub.base_url()), "m", Duration::from_secs(5));
        assert!(matches!(backend.generate("s", "p"), Err(BackendError::Transport(_))));
    }

    #[test]
    fn slow_server_times_out() {
        let stub = StubServer::start("127.0.0.1:0", StubConfig { delay: Duration::from_millis(600), ..StubConfig::default() }).unwrap();
        let backend = HttpLlmBackend::new(stub.base_url(), "m", Duration::from_millis(150));
        assert_eq!(backend.generate("s", "p").unwrap_err(), BackendError::Timeout);
    }

    #[test]
    fn unreachable_server_is_transport_error() {
        let backend = HttpLlmBackend::new("http://127.0.0.1:9", "m", Duration::from_millis(500));
        assert!(backend.generate("s", "p").is_err());
    }
}
