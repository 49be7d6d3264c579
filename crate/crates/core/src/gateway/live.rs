//! OpenAI-compatible chat-completions backend with bounded exponential backoff.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, GatewayErrorKind};

/// Environment variable holding the bearer token for the live backend.
pub const API_KEY_ENV: &str = "HALO_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_secs(1), factor: 2.0 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(retry.saturating_sub(1) as i32))
    }

    /// Runs `attempt` until it succeeds, fails with a non-retryable error, or
    /// the retry limit is spent. The returned error carries the attempt count.
    pub fn run<T>(
        &self,
        sleep: &dyn Fn(Duration),
        mut attempt: impl FnMut(u32) -> Result<T, (GatewayError, bool)>,
    ) -> Result<(T, u32), GatewayError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match attempt(attempts) {
                Ok(v) => return Ok((v, attempts)),
                Err((mut err, retryable)) => {
                    if !retryable || attempts > self.max_retries {
                        err.attempts = attempts;
                        return Err(err);
                    }
                    let delay = self.delay(attempts);
                    log::warn!("attempt {attempts} failed ({}), retrying in {delay:?}", err.kind);
                    sleep(delay);
                }
            }
        }
    }
}

/// Raw HTTP reply: status code and body text.
#[derive(Debug, Clone)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// One HTTP POST attempt. Connection-level failures are reported as
/// `Transport` or `Timeout` errors; any HTTP status is a successful reply here.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<HttpReply, GatewayError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::new(GatewayErrorKind::Transport, e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<HttpReply, GatewayError> {
        let mut req = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(token) = bearer.filter(|t| !t.is_empty()) {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(classify_reqwest)?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(classify_reqwest)?;
        Ok(HttpReply { status, body })
    }
}

fn classify_reqwest(e: reqwest::Error) -> GatewayError {
    let kind = if e.is_timeout() { GatewayErrorKind::Timeout } else { GatewayErrorKind::Transport };
    GatewayError::new(kind, e.to_string())
}

type Sleeper = Box<dyn Fn(Duration) + Send + Sync>;

pub struct OpenAiBackend {
    transport: Box<dyn Transport>,
    base_url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    sleep: Sleeper,
}

impl OpenAiBackend {
    pub fn new(transport: Box<dyn Transport>, base_url: &str, model: &str, api_key: Option<String>) -> Self {
        Self {
            transport,
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            retry: RetryPolicy::default(),
            sleep: Box::new(std::thread::sleep),
        }
    }

    /// HTTP backend reading the bearer token from `HALO_API_KEY`.
    pub fn from_env(base_url: &str, model: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let transport = HttpTransport::new(timeout)?;
        Ok(Self::new(Box::new(transport), base_url, model, std::env::var(API_KEY_ENV).ok()))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url)
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        messages.extend(request.user_messages.iter().map(|m| json!({"role": "user", "content": m})));
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "seed": request.seed,
        })
    }
}

fn status_error(reply: &HttpReply) -> (GatewayError, bool) {
    let detail = format!("HTTP {}: {}", reply.status, reply.body.chars().take(300).collect::<String>());
    match reply.status {
        429 => (GatewayError::new(GatewayErrorKind::RateLimited, detail), true),
        408 | 504 => (GatewayError::new(GatewayErrorKind::Timeout, detail), true),
        500..=599 => (GatewayError::new(GatewayErrorKind::Transport, detail), true),
        _ => (GatewayError::new(GatewayErrorKind::Transport, detail), false),
    }
}

/// Pulls the assistant text and token usage out of a chat-completions reply body.
pub fn parse_completion(body: &str) -> Result<(String, u64, u64), GatewayError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| GatewayError::malformed(format!("response is not JSON: {e}")))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::malformed("response has no choices[0].message.content"))?;
    let usage = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok((text.to_string(), usage("prompt_tokens"), usage("completion_tokens")))
}

impl ChatBackend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.model
    }

    fn complete(&self, _routing_key: &str, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let url = self.endpoint();
        let body = self.request_body(request).to_string();
        let ((text, prompt_tokens, completion_tokens), attempts) = self.retry.run(&*self.sleep, |_| {
            let reply = self
                .transport
                .post_json(&url, self.api_key.as_deref(), &body)
                .map_err(|e| {
                    let retryable = e.kind.is_retryable();
                    (e, retryable)
                })?;
            if !(200..300).contains(&reply.status) {
                return Err(status_error(&reply));
            }
            parse_completion(&reply.body).map_err(|e| (e, false))
        })?;
        Ok(ChatResponse { text, prompt_tokens, completion_tokens, backend_id: self.model.clone(), attempts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Fails with the queued errors first, then returns a canned completion.
    struct FaultyTransport {
        failures: Mutex<Vec<Result<HttpReply, GatewayError>>>,
        calls: Arc<Mutex<u32>>,
    }

    impl Transport for FaultyTransport {
        fn post_json(&self, _url: &str, _bearer: Option<&str>, _body: &str) -> Result<HttpReply, GatewayError> {
            *self.calls.lock().unwrap() += 1;
            let mut f = self.failures.lock().unwrap();
            if f.is_empty() {
                Ok(HttpReply { status: 200, body: completion_body("OK") })
            } else {
                f.remove(0)
            }
        }
    }

    fn completion_body(text: &str) -> String {
        json!({
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 2}
        })
        .to_string()
    }

    type Probe = (OpenAiBackend, Arc<Mutex<u32>>, Arc<Mutex<Vec<Duration>>>);

    fn backend(failures: Vec<Result<HttpReply, GatewayError>>) -> Probe {
        let calls = Arc::new(Mutex::new(0));
        let delays = Arc::new(Mutex::new(Vec::new()));
        let d = delays.clone();
        let b = OpenAiBackend::new(
            Box::new(FaultyTransport { failures: Mutex::new(failures), calls: calls.clone() }),
            "http://stub",
            "stub-model",
            None,
        )
        .with_sleeper(move |t| d.lock().unwrap().push(t));
        (b, calls, delays)
    }

    fn transport_err() -> Result<HttpReply, GatewayError> {
        Err(GatewayError::new(GatewayErrorKind::Transport, "connection reset"))
    }

    #[test]
    fn two_transport_failures_then_success() {
        let (b, calls, delays) = backend(vec![transport_err(), transport_err()]);
        let r = b.complete("planner", &ChatRequest::new("s", vec!["q".into()])).unwrap();
        assert_eq!(r.text, "OK");
        assert_eq!(r.attempts, 3);
        assert_eq!((r.prompt_tokens, r.completion_tokens), (11, 2));
        assert_eq!(*calls.lock().unwrap(), 3);
        assert_eq!(*delays.lock().unwrap(), vec![Duration::from_secs(1), Duration::from_secs(2)]);
    }

    #[test]
    fn retries_are_bounded_and_backoff_non_decreasing() {
        let failures = (0..10)
            .map(|_| Ok(HttpReply { status: 429, body: "slow down".into() }))
            .collect();
        let (b, calls, delays) = backend(failures);
        let err = b.complete("planner", &ChatRequest::new("s", vec![])).unwrap_err();
        assert_eq!(err.kind, GatewayErrorKind::RateLimited);
        assert_eq!(err.attempts, 4);
        assert_eq!(*calls.lock().unwrap(), 4);
        let d = delays.lock().unwrap().clone();
        assert_eq!(d, vec![Duration::from_secs(1), Duration::from_secs(2), Duration::from_secs(4)]);
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (b, calls, _) = backend(vec![Ok(HttpReply { status: 401, body: "unauthorized".into() })]);
        let err = b.complete("planner", &ChatRequest::new("s", vec![])).unwrap_err();
        assert_eq!(err.kind, GatewayErrorKind::Transport);
        assert_eq!(err.attempts, 1);
        assert_eq!(*calls.lock().unwrap(), 1);
    }

    #[test]
    fn malformed_body_surfaces() {
        let (b, _, _) = backend(vec![Ok(HttpReply { status: 200, body: "{\"choices\":[]}".into() })]);
        let err = b.complete("planner", &ChatRequest::new("s", vec![])).unwrap_err();
        assert_eq!(err.kind, GatewayErrorKind::MalformedResponse);
    }

    #[test]
    fn request_body_wire_format() {
        let (b, _, _) = backend(vec![]);
        let body = b.request_body(&ChatRequest::new("sys", vec!["u1".into(), "u2".into()]));
        assert_eq!(body["model"], "stub-model");
        assert_eq!(body["messages"][0], json!({"role": "system", "content": "sys"}));
        assert_eq!(body["messages"][2], json!({"role": "user", "content": "u2"}));
        assert_eq!(body["temperature"], 0.8);
        assert_eq!(body["max_tokens"], 2048);
        assert_eq!(body["seed"], 10);
        assert_eq!(b.endpoint(), "http://stub/v1/chat/completions");
    }

    #[test]
    fn http_round_trip_against_local_server() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = Vec::new();
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
                head.push(line);
            }
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body).unwrap();
            let payload = completion_body("pong");
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            )
            .unwrap();
            (head, String::from_utf8(body).unwrap())
        });

        let transport = HttpTransport::new(Duration::from_secs(10)).unwrap();
        let b = OpenAiBackend::new(Box::new(transport), &format!("http://{addr}/"), "m", Some("secret".into()));
        let r = b.complete("planner", &ChatRequest::new("sys", vec!["ping".into()])).unwrap();
        assert_eq!(r.text, "pong");
        assert_eq!(r.attempts, 1);

        let (head, body) = server.join().unwrap();
        assert!(head[0].starts_with("POST /v1/chat/completions "));
        assert!(head.iter().any(|h| h.to_ascii_lowercase().starts_with("authorization: bearer secret")));
        let sent: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(sent["messages"][1]["content"], "ping");
    }
}
