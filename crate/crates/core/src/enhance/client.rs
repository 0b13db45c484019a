//! MLLM endpoint abstraction: a chat-completions-style HTTP client plus
//! deterministic test doubles.

use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::EnhanceError;

/// Generation settings recorded into every enhancement record's provenance.
#[derive(Debug, Clone)]
pub struct GenerationSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            model_id: "mock".into(),
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

/// Transport retry policy: `attempts` total tries with exponential backoff.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; for tests.
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay: Duration::ZERO,
        }
    }
}

/// One generation request. `image` and `meme_text` are message content
/// attachments; the prompt is always the final text part.
#[derive(Debug, Clone)]
pub struct MllmRequest {
    pub prompt: String,
    pub image: Option<Vec<u8>>,
    pub meme_text: Option<String>,
}

/// A chat-completions-style backend that turns one request into text.
pub trait MllmApi: Send + Sync {
    fn generate(&self, request: &MllmRequest) -> Result<String, EnhanceError>;
}

/// Client wrapper owning settings and retry behaviour.
pub struct MllmClient {
    api: Box<dyn MllmApi>,
    pub settings: GenerationSettings,
    pub retry: RetryPolicy,
    pub max_image_bytes: usize,
}

pub const DEFAULT_MAX_IMAGE_BYTES: usize = 8 * 1024 * 1024;

impl MllmClient {
    pub fn new(api: Box<dyn MllmApi>, settings: GenerationSettings, retry: RetryPolicy) -> Self {
        Self {
            api,
            settings,
            retry,
            max_image_bytes: DEFAULT_MAX_IMAGE_BYTES,
        }
    }

    /// Issue a request with transport retries; an empty response is retried
    /// once, then reported as a generation error.
    pub fn generate(&self, request: &MllmRequest) -> Result<String, EnhanceError> {
        if let Some(image) = &request.image {
            if image.len() > self.max_image_bytes {
                return Err(EnhanceError::Preprocess(format!(
                    "image is {} bytes, limit {}",
                    image.len(),
                    self.max_image_bytes
                )));
            }
        }
        let mut empty_retried = false;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.api.generate(request) {
                Ok(text) => {
                    let text = text.trim().to_string();
                    if !text.is_empty() {
                        return Ok(text);
                    }
                    if empty_retried {
                        return Err(EnhanceError::Generation(
                            "model returned an empty response after retry".into(),
                        ));
                    }
                    empty_retried = true;
                    // the empty-response retry does not consume a transport attempt
                    attempt -= 1;
                }
                Err(EnhanceError::Endpoint { message, .. }) => {
                    if attempt >= self.retry.attempts {
                        return Err(EnhanceError::Endpoint {
                            attempts: attempt,
                            message,
                        });
                    }
                    let backoff = self.retry.base_delay * 2u32.pow(attempt - 1);
                    if !backoff.is_zero() {
                        std::thread::sleep(backoff);
                    }
                }
                Err(other) => return Err(other),
            }
        }
    }
}

/// HTTP backend for any chat-completions-style API accepting interleaved
/// image/text content parts. The auth token comes from the environment.
pub struct HttpMllm {
    http: reqwest::blocking::Client,
    url: String,
    token: Option<String>,
    settings: GenerationSettings,
}

/// Environment variable holding the endpoint bearer token.
pub const TOKEN_ENV_VAR: &str = "MEMODETECTOR_TOKEN";

impl HttpMllm {
    /// `endpoint` is the API base (e.g. `http://host:1234/v1`); the client
    /// posts to `<endpoint>/chat/completions`.
    pub fn new(
        endpoint: &str,
        settings: GenerationSettings,
        timeout: Duration,
    ) -> Result<Self, EnhanceError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EnhanceError::Endpoint {
                attempts: 0,
                message: format!("cannot build http client: {e}"),
            })?;
        Ok(Self {
            http,
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            token: std::env::var(TOKEN_ENV_VAR).ok(),
            settings,
        })
    }

    fn body(&self, request: &MllmRequest) -> Value {
        let mut parts = Vec::new();
        if let Some(image) = &request.image {
            let mime = sniff_mime(image);
            let encoded = base64_encode(image);
            parts.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:{mime};base64,{encoded}")}
            }));
        }
        if let Some(text) = &request.meme_text {
            parts.push(json!({"type": "text", "text": text}));
        }
        parts.push(json!({"type": "text", "text": request.prompt}));
        json!({
            "model": self.settings.model_id,
            "temperature": self.settings.temperature,
            "max_tokens": self.settings.max_tokens,
            "messages": [{"role": "user", "content": parts}]
        })
    }
}

impl MllmApi for HttpMllm {
    fn generate(&self, request: &MllmRequest) -> Result<String, EnhanceError> {
        let endpoint_err = |message: String| EnhanceError::Endpoint {
            attempts: 1,
            message,
        };
        let mut req = self.http.post(&self.url).json(&self.body(request));
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| endpoint_err(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            let snippet: String = body.chars().take(300).collect();
            return Err(endpoint_err(format!("status {status}: {snippet}")));
        }
        let value: Value = resp
            .json()
            .map_err(|e| endpoint_err(format!("invalid JSON response: {e}")))?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                EnhanceError::Generation("response has no choices[0].message.content".into())
            })?;
        Ok(content.to_string())
    }
}

fn sniff_mime(bytes: &[u8]) -> &'static str {
    match image::guess_format(bytes) {
        Ok(image::ImageFormat::Png) => "image/png",
        Ok(image::ImageFormat::Jpeg) => "image/jpeg",
        _ => "application/octet-stream",
    }
}

fn base64_encode(bytes: &[u8]) -> String {
    const TABLE: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    let mut out = String::with_capacity(bytes.len().div_ceil(3) * 4);
    for chunk in bytes.chunks(3) {
        let b = [
            chunk[0],
            chunk.get(1).copied().unwrap_or(0),
            chunk.get(2).copied().unwrap_or(0),
        ];
        let n = u32::from(b[0]) << 16 | u32::from(b[1]) << 8 | u32::from(b[2]);
        out.push(TABLE[(n >> 18 & 63) as usize] as char);
        out.push(TABLE[(n >> 12 & 63) as usize] as char);
        out.push(if chunk.len() > 1 {
            TABLE[(n >> 6 & 63) as usize] as char
        } else {
            '='
        });
        out.push(if chunk.len() > 2 {
            TABLE[(n & 63) as usize] as char
        } else {
            '='
        });
    }
    out
}

/// Mock returning the prompt itself; the `--mock` CLI backend.
pub struct EchoMllm;

impl MllmApi for EchoMllm {
    fn generate(&self, request: &MllmRequest) -> Result<String, EnhanceError> {
        Ok(request.prompt.clone())
    }
}

/// Mock delegating to a closure; building block for failure-injection tests.
pub struct FnMllm<F>(pub F);

impl<F> MllmApi for FnMllm<F>
where
    F: Fn(&MllmRequest) -> Result<String, EnhanceError> + Send + Sync,
{
    fn generate(&self, request: &MllmRequest) -> Result<String, EnhanceError> {
        (self.0)(request)
    }
}

/// Mock that records every request before delegating; used to assert the
/// step-modality contract.
pub struct RecordingMllm<A> {
    inner: A,
    requests: Mutex<Vec<MllmRequest>>,
}

impl<A: MllmApi> RecordingMllm<A> {
    pub fn new(inner: A) -> Self {
        Self {
            inner,
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<MllmRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl<A: MllmApi> MllmApi for RecordingMllm<A> {
    fn generate(&self, request: &MllmRequest) -> Result<String, EnhanceError> {
        self.requests.lock().unwrap().push(request.clone());
        self.inner.generate(request)
    }
}

impl<A: MllmApi + ?Sized> MllmApi for std::sync::Arc<A> {
    fn generate(&self, request: &MllmRequest) -> Result<String, EnhanceError> {
        (**self).generate(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base64_matches_known_vectors() {
        assert_eq!(base64_encode(b""), "");
        assert_eq!(base64_encode(b"f"), "Zg==");
        assert_eq!(base64_encode(b"fo"), "Zm8=");
        assert_eq!(base64_encode(b"foo"), "Zm9v");
        assert_eq!(base64_encode(b"foobar"), "Zm9vYmFy");
    }

    #[test]
    fn empty_response_is_retried_once_then_fails() {
        use std::sync::atomic::{AtomicU32, Ordering};
        let calls = std::sync::Arc::new(AtomicU32::new(0));
        let calls2 = calls.clone();
        let api = FnMllm(move |_req: &MllmRequest| {
            calls2.fetch_add(1, Ordering::SeqCst);
            Ok(String::new())
        });
        let client = MllmClient::new(
            Box::new(api),
            GenerationSettings::default(),
            RetryPolicy::immediate(3),
        );
        let err = client
            .generate(&MllmRequest {
                prompt: "p".into(),
                image: None,
                meme_text: None,
            })
            .unwrap_err();
        assert!(matches!(err, EnhanceError::Generation(_)), "{err}");
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn transport_errors_exhaust_attempts() {
        use std::sync::atomic::{AtomicU32, Ordering};
        let calls = std::sync::Arc::new(AtomicU32::new(0));
        let calls2 = calls.clone();
        let api = FnMllm(move |_req: &MllmRequest| {
            calls2.fetch_add(1, Ordering::SeqCst);
            Err(EnhanceError::Endpoint {
                attempts: 1,
                message: "connection refused".into(),
            })
        });
        let client = MllmClient::new(
            Box::new(api),
            GenerationSettings::default(),
            RetryPolicy::immediate(3),
        );
        let err = client
            .generate(&MllmRequest {
                prompt: "p".into(),
                image: None,
                meme_text: None,
            })
            .unwrap_err();
        assert!(matches!(err, EnhanceError::Endpoint { attempts: 3, .. }), "{err}");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn oversize_image_is_a_preprocess_error() {
        let mut client = MllmClient::new(
            Box::new(EchoMllm),
            GenerationSettings::default(),
            RetryPolicy::immediate(1),
        );
        client.max_image_bytes = 4;
        let err = client
            .generate(&MllmRequest {
                prompt: "p".into(),
                image: Some(vec![0u8; 5]),
                meme_text: None,
            })
            .unwrap_err();
        assert!(matches!(err, EnhanceError::Preprocess(_)));
    }

    #[test]
    fn response_whitespace_is_stripped() {
        let api = FnMllm(|_req: &MllmRequest| Ok("  text \n".to_string()));
        let client = MllmClient::new(
            Box::new(api),
            GenerationSettings::default(),
            RetryPolicy::immediate(1),
        );
        let out = client
            .generate(&MllmRequest {
                prompt: "p".into(),
                image: None,
                meme_text: None,
            })
            .unwrap();
        assert_eq!(out, "text");
    }
}
