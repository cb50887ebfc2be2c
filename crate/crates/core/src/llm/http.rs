use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ChatRequest, ChatResponse, ChatTransport, FinishReason, LlmError, Usage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry);
        self.initial_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL (`.../v1`) or the full `.../chat/completions` URL.
    pub endpoint_url: String,
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
    pub request_timeout: Duration,
}

impl HttpConfig {
    pub fn new(endpoint_url: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            api_key: None,
            retry: RetryPolicy::default(),
            request_timeout: Duration::from_secs(120),
        }
    }

    fn completions_url(&self) -> String {
        let base = self.endpoint_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// OpenAI-compatible chat-completions client. One choice is requested and
/// consumed; transient failures (connection errors, 429, 5xx) are retried
/// with exponential backoff.
pub struct HttpTransport {
    config: HttpConfig,
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            url: config.completions_url(),
            config,
            client,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<ChatResponse, Attempt> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Transient(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Transient(format!("HTTP {status}: {}", snippet(&text))));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(format!("HTTP {status}: {}", snippet(&text))));
        }
        parse_completion(&text).map_err(Attempt::Fatal)
    }
}

enum Attempt {
    Transient(String),
    Fatal(String),
}

fn snippet(text: &str) -> &str {
    let mut end = text.len().min(300);
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    &text[..end]
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let body = json!({
            "model": request.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "n": 1,
            "stream": false,
        });
        let mut retry = 0;
        loop {
            match self.attempt(&body) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(msg)) => return Err(LlmError::Transport(msg)),
                Err(Attempt::Transient(msg)) if retry >= self.config.retry.max_retries => {
                    return Err(LlmError::Transport(format!("{msg} (gave up after {} retries)", retry)))
                }
                Err(Attempt::Transient(msg)) => {
                    let delay = self.config.retry.delay(retry);
                    tracing::warn!(%msg, ?delay, retry, "transient chat completion failure");
                    thread::sleep(delay);
                    retry += 1;
                }
            }
        }
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

fn parse_completion(text: &str) -> Result<ChatResponse, String> {
    let wire: WireResponse = serde_json::from_str(text).map_err(|e| format!("malformed completion body: {e}"))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| "completion has no choices".to_string())?;
    let finish_reason = match choice.finish_reason.as_deref() {
        None | Some("stop") | Some("eos") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    let content = choice.message.content.unwrap_or_default();
    let usage = wire
        .usage
        .map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        })
        .unwrap_or_default();
    Ok(ChatResponse {
        content,
        finish_reason,
        usage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::tests::request;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Serves the given (status, body) pairs in order, one per connection,
    /// recording each request body.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = seen.clone();
        thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen2.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), seen)
    }

    fn ok_body(content: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 7, "completion_tokens": 3}
        })
        .to_string()
    }

    fn transport(url: String) -> HttpTransport {
        let mut cfg = HttpConfig::new(url);
        cfg.api_key = Some("k".into());
        cfg.retry.initial_delay = Duration::from_millis(1);
        HttpTransport::new(cfg).unwrap()
    }

    #[test]
    fn retries_transient_failures() {
        let (url, seen) = serve(vec![(500, "{}".into()), (503, "{}".into()), (200, ok_body("hello"))]);
        let r = transport(url).send(&request("hi")).unwrap();
        assert_eq!(r.content, "hello");
        assert_eq!(r.usage.prompt_tokens, 7);
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        let body: serde_json::Value = serde_json::from_str(&seen[0]).unwrap();
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][1]["content"], "hi");
    }

    #[test]
    fn gives_up_after_bounded_retries() {
        let (url, seen) = serve(vec![(500, "{}".into()); 4]);
        let err = transport(url).send(&request("hi")).unwrap_err();
        assert!(matches!(err, LlmError::Transport(_)));
        assert_eq!(seen.lock().unwrap().len(), 4);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = serve(vec![(401, "{\"error\":\"no\"}".into())]);
        let err = transport(url).send(&request("hi")).unwrap_err();
        assert!(err.to_string().contains("401"));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn finish_reasons() {
        let body = |f: &str| format!(r#"{{"choices":[{{"message":{{"content":"x"}},"finish_reason":"{f}"}}]}}"#);
        assert_eq!(
            parse_completion(&body("length")).unwrap().finish_reason,
            FinishReason::Length
        );
        assert_eq!(
            parse_completion(&body("content_filter")).unwrap().finish_reason,
            FinishReason::Error
        );
        assert!(parse_completion(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(1), Duration::from_millis(1000));
        assert_eq!(p.delay(10), Duration::from_secs(8));
    }

    #[test]
    fn url_normalization() {
        assert_eq!(
            HttpConfig::new("http://h/v1/").completions_url(),
            "http://h/v1/chat/completions"
        );
        assert_eq!(
            HttpConfig::new("http://h/v1/chat/completions").completions_url(),
            "http://h/v1/chat/completions"
        );
    }
}
