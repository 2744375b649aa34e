//! Single choke point for chat-style completion backends.
//!
//! Everything above this module builds a [`ModelRequest`] and calls
//! [`Gateway::complete`]; only backends see wire formats.

pub mod transport;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use transport::{HttpTransport, RetryPolicy, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { url: String },
    ImageData { mime: String, base64: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Message { role, parts: vec![ContentPart::Text { text: text.into() }] }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Message::text(Role::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Message::text(Role::User, text)
    }

    pub fn with_image(mut self, image: ContentPart) -> Self {
        self.parts.push(image);
        self
    }

    /// Concatenated text parts.
    pub fn text_content(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                _ => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Turns an image reference into a content part: references with a URL
/// scheme or a `data:` prefix pass through as URLs, anything else is read as
/// a local file and inlined as base64.
pub fn image_part(reference: &str) -> std::io::Result<ContentPart> {
    use base64::Engine;
    if reference.contains("://") || reference.starts_with("data:") {
        return Ok(ContentPart::ImageUrl { url: reference.to_string() });
    }
    let bytes = std::fs::read(reference)?;
    let mime = match Path::new(reference).extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    };
    Ok(ContentPart::ImageData {
        mime: mime.to_string(),
        base64: base64::engine::general_purpose::STANDARD.encode(bytes),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    FreeText,
    StrictJson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelAlias {
    OnlineInference,
    OfflineRefinement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub response_format: ResponseFormat,
    pub max_output_tokens: u32,
    pub model_alias: ModelAlias,
}

impl ModelRequest {
    pub fn new(messages: Vec<Message>, temperature: f64, format: ResponseFormat, alias: ModelAlias) -> Self {
        ModelRequest { messages, temperature, response_format: format, max_output_tokens: 2048, model_alias: alias }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("request has no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }

    /// Hex digest of the message list. Text is hashed verbatim; images are
    /// folded in as digests of their reference or payload.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.messages {
            h.update(m.role.as_str().as_bytes());
            h.update([0x1e]);
            for p in &m.parts {
                match p {
                    ContentPart::Text { text } => {
                        h.update(b"t");
                        h.update(text.as_bytes());
                    }
                    ContentPart::ImageUrl { url } => {
                        h.update(b"i");
                        h.update(Sha256::digest(url.as_bytes()));
                    }
                    ContentPart::ImageData { base64, .. } => {
                        h.update(b"i");
                        h.update(Sha256::digest(base64.as_bytes()));
                    }
                }
                h.update([0x1f]);
            }
        }
        hex::encode(&h.finalize()[..16])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub finish_reason: String,
    pub latency_ms: u64,
    pub backend: String,
}

/// What a backend hands back before gateway-level validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub finish_reason: String,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no backend configured for {0:?}")]
    NotConfigured(ModelAlias),
    #[error("authentication failed (HTTP {status})")]
    Auth { status: u16 },
    #[error("backend timed out")]
    Timeout,
    #[error("transport: {0}")]
    Transport(TransportError),
    #[error("backend reply was not understood: {0}")]
    Protocol(String),
    #[error("malformed JSON after repair attempt: {message}")]
    MalformedJson { text: String, message: String },
    #[error("unscripted request (fingerprint {fingerprint})")]
    Unscripted { fingerprint: String },
    #[error("mock script: {0}")]
    ScriptParse(String),
}

impl From<TransportError> for GatewayError {
    fn from(e: TransportError) -> Self {
        match e.root() {
            TransportError::Auth { status } => GatewayError::Auth { status: *status },
            TransportError::Timeout => GatewayError::Timeout,
            _ => GatewayError::Transport(e),
        }
    }
}

pub trait ModelBackend: Send + Sync {
    fn id(&self) -> String;

    fn call(&self, request: &ModelRequest) -> Result<Completion, GatewayError>;
}

/// Strips a surrounding markdown code fence, if any.
fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

fn check_json(text: &str) -> Result<String, String> {
    let body = strip_fence(text);
    serde_json::from_str::<serde_json::Value>(body).map(|_| body.to_string()).map_err(|e| e.to_string())
}

const REPAIR_INSTRUCTION: &str = "Your previous reply was not valid JSON. Reply again with only the corrected JSON object, no prose and no code fences.";

#[derive(Clone, Default)]
pub struct Gateway {
    backends: BTreeMap<ModelAlias, Arc<dyn ModelBackend>>,
}

impl Gateway {
    pub fn new() -> Self {
        Gateway::default()
    }

    /// Routes both aliases to one backend.
    pub fn single(backend: Arc<dyn ModelBackend>) -> Self {
        Gateway::new()
            .with_backend(ModelAlias::OnlineInference, backend.clone())
            .with_backend(ModelAlias::OfflineRefinement, backend)
    }

    pub fn with_backend(mut self, alias: ModelAlias, backend: Arc<dyn ModelBackend>) -> Self {
        self.backends.insert(alias, backend);
        self
    }

    pub fn backend_id(&self, alias: ModelAlias) -> Option<String> {
        self.backends.get(&alias).map(|b| b.id())
    }

    pub fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        request.validate()?;
        let backend = self.backends.get(&request.model_alias).ok_or(GatewayError::NotConfigured(request.model_alias))?;
        let start = Instant::now();
        let first = backend.call(request)?;
        let (text, finish_reason) = match request.response_format {
            ResponseFormat::FreeText => (first.text, first.finish_reason),
            ResponseFormat::StrictJson => match check_json(&first.text) {
                Ok(body) => (body, first.finish_reason),
                Err(_) => {
                    let mut repair = request.clone();
                    repair.messages.push(Message::text(Role::Assistant, first.text));
                    repair.messages.push(Message::user(REPAIR_INSTRUCTION));
                    let second = backend.call(&repair)?;
                    match check_json(&second.text) {
                        Ok(body) => (body, second.finish_reason),
                        Err(message) => return Err(GatewayError::MalformedJson { text: second.text, message }),
                    }
                }
            },
        };
        Ok(ModelResponse {
            text,
            finish_reason,
            latency_ms: start.elapsed().as_millis() as u64,
            backend: backend.id(),
        })
    }
}

/// Scripted reply: a string is returned verbatim, any other JSON value is
/// returned in its compact serialized form.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Json(serde_json::Value),
}

impl ScriptedReply {
    pub fn render(&self) -> String {
        match self {
            ScriptedReply::Text(t) => t.clone(),
            ScriptedReply::Json(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub by_fingerprint: BTreeMap<String, ScriptedReply>,
    #[serde(default)]
    pub ordinal: Vec<ScriptedReply>,
}

/// Deterministic backend. Fingerprint matches win; otherwise the next
/// ordinal reply is consumed; otherwise the call fails as unscripted.
pub struct MockBackend {
    name: String,
    by_fingerprint: BTreeMap<String, String>,
    ordinal: Mutex<(usize, Vec<String>)>,
    log: Mutex<Vec<ModelRequest>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend {
            name: "mock".into(),
            by_fingerprint: script.by_fingerprint.iter().map(|(k, v)| (k.clone(), v.render())).collect(),
            ordinal: Mutex::new((0, script.ordinal.iter().map(ScriptedReply::render).collect())),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn ordinal<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MockBackend::new(MockScript {
            by_fingerprint: BTreeMap::new(),
            ordinal: replies.into_iter().map(|r| ScriptedReply::Text(r.into())).collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let script: MockScript = serde_json::from_str(text).map_err(|e| GatewayError::ScriptParse(e.to_string()))?;
        Ok(MockBackend::new(script))
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::ScriptParse(format!("{}: {e}", path.display())))?;
        MockBackend::from_json(&text)
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Every request received so far, in call order.
    pub fn requests(&self) -> Vec<ModelRequest> {
        self.log.lock().expect("mock log poisoned").clone()
    }

    pub fn remaining(&self) -> usize {
        let guard = self.ordinal.lock().expect("mock cursor poisoned");
        guard.1.len() - guard.0
    }
}

impl ModelBackend for MockBackend {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn call(&self, request: &ModelRequest) -> Result<Completion, GatewayError> {
        self.log.lock().expect("mock log poisoned").push(request.clone());
        let fingerprint = request.fingerprint();
        if let Some(text) = self.by_fingerprint.get(&fingerprint) {
            return Ok(Completion { text: text.clone(), finish_reason: "stop".into() });
        }
        let mut guard = self.ordinal.lock().expect("mock cursor poisoned");
        let (cursor, replies) = &mut *guard;
        match replies.get(*cursor) {
            Some(text) => {
                *cursor += 1;
                Ok(Completion { text: text.clone(), finish_reason: "stop".into() })
            }
            None => Err(GatewayError::Unscripted { fingerprint }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpBackendConfig {
    pub url: String,
    pub model_name: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub requests_per_second: Option<f64>,
}

/// Chat-completions-style backend over HTTP(S).
pub struct HttpChatBackend {
    config: HttpBackendConfig,
    transport: HttpTransport,
}

impl HttpChatBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let retry = RetryPolicy { max_retries: config.max_retries, ..RetryPolicy::default() };
        let transport = HttpTransport::new(config.timeout, retry).with_rate_limit(config.requests_per_second);
        HttpChatBackend { config, transport }
    }

    pub fn with_transport(config: HttpBackendConfig, transport: HttpTransport) -> Self {
        HttpChatBackend { config, transport }
    }

    /// The JSON body sent for `request`.
    pub fn request_body(&self, request: &ModelRequest) -> serde_json::Value {
        use serde_json::json;
        let messages: Vec<_> = request
            .messages
            .iter()
            .map(|m| {
                let only_text = m.parts.iter().all(|p| matches!(p, ContentPart::Text { .. }));
                let content = if only_text {
                    json!(m.text_content())
                } else {
                    let parts: Vec<_> = m
                        .parts
                        .iter()
                        .map(|p| match p {
                            ContentPart::Text { text } => json!({"type": "text", "text": text}),
                            ContentPart::ImageUrl { url } => json!({"type": "image_url", "image_url": {"url": url}}),
                            ContentPart::ImageData { mime, base64 } => {
                                json!({"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{base64}")}})
                            }
                        })
                        .collect();
                    json!(parts)
                };
                json!({"role": m.role.as_str(), "content": content})
            })
            .collect();
        let format = match request.response_format {
            ResponseFormat::FreeText => "text",
            ResponseFormat::StrictJson => "json_object",
        };
        json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "response_format": {"type": format},
            "max_tokens": request.max_output_tokens,
        })
    }
}

impl ModelBackend for HttpChatBackend {
    fn id(&self) -> String {
        format!("http:{}", self.config.model_name)
    }

    fn call(&self, request: &ModelRequest) -> Result<Completion, GatewayError> {
        let body = self.request_body(request).to_string();
        let reply = self.transport.post_json(&self.config.url, &body)?;
        let v: serde_json::Value =
            serde_json::from_str(&reply).map_err(|e| GatewayError::Protocol(format!("reply is not JSON: {e}")))?;
        let choice = &v["choices"][0];
        let text = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::Protocol("missing choices[0].message.content".into()))?;
        let finish_reason = choice["finish_reason"].as_str().unwrap_or("unknown").to_string();
        Ok(Completion { text: text.to_string(), finish_reason })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str, format: ResponseFormat) -> ModelRequest {
        ModelRequest::new(vec![Message::user(text)], 0.2, format, ModelAlias::OnlineInference)
    }

    #[test]
    fn scripted_reply_is_returned_verbatim() {
        let gw = Gateway::single(Arc::new(MockBackend::ordinal(["hello there"])));
        let r = gw.complete(&req("hi", ResponseFormat::FreeText)).unwrap();
        assert_eq!(r.text, "hello there");
        assert_eq!(r.backend, "mock");
    }

    #[test]
    fn ordinal_replies_in_order_then_unscripted() {
        let mock = Arc::new(MockBackend::ordinal(["r1", "r2"]));
        let gw = Gateway::single(mock.clone());
        assert_eq!(gw.complete(&req("a", ResponseFormat::FreeText)).unwrap().text, "r1");
        assert_eq!(gw.complete(&req("a", ResponseFormat::FreeText)).unwrap().text, "r2");
        let err = gw.complete(&req("a", ResponseFormat::FreeText)).unwrap_err();
        let fp = req("a", ResponseFormat::FreeText).fingerprint();
        match err {
            GatewayError::Unscripted { fingerprint } => assert_eq!(fingerprint, fp),
            other => panic!("{other:?}"),
        }
        assert_eq!(mock.requests().len(), 3);
    }

    #[test]
    fn fingerprint_match_wins_over_ordinal() {
        let r = req("which country?", ResponseFormat::FreeText);
        let script = format!(r#"{{"by_fingerprint": {{"{}": "AD"}}, "ordinal": ["other"]}}"#, r.fingerprint());
        let gw = Gateway::single(Arc::new(MockBackend::from_json(&script).unwrap()));
        assert_eq!(gw.complete(&r).unwrap().text, "AD");
        assert_eq!(gw.complete(&req("else", ResponseFormat::FreeText)).unwrap().text, "other");
    }

    #[test]
    fn json_values_in_scripts_render_compactly() {
        let gw = Gateway::single(Arc::new(MockBackend::from_json(r#"{"ordinal": [{"a": [1, 2]}]}"#).unwrap()));
        assert_eq!(gw.complete(&req("x", ResponseFormat::StrictJson)).unwrap().text, r#"{"a":[1,2]}"#);
    }

    #[test]
    fn bad_script_is_rejected() {
        assert!(matches!(MockBackend::from_json("{\"ordinal\": 3}"), Err(GatewayError::ScriptParse(_))));
        assert!(matches!(MockBackend::from_json("{\"replies\": []}"), Err(GatewayError::ScriptParse(_))));
    }

    #[test]
    fn broken_json_gets_one_repair_then_errors() {
        let mock = Arc::new(MockBackend::ordinal(["{oops", "still {broken", "{}"]));
        let gw = Gateway::single(mock.clone());
        let err = gw.complete(&req("x", ResponseFormat::StrictJson)).unwrap_err();
        assert!(matches!(err, GatewayError::MalformedJson { .. }), "{err:?}");
        let log = mock.requests();
        assert_eq!(log.len(), 2);
        assert_eq!(log[1].messages.len(), 3);
        assert_eq!(log[1].messages[1].text_content(), "{oops");
        assert_eq!(mock.remaining(), 1);
    }

    #[test]
    fn repair_can_succeed() {
        let gw = Gateway::single(Arc::new(MockBackend::ordinal(["nope", "{\"ok\": true}"])));
        assert_eq!(gw.complete(&req("x", ResponseFormat::StrictJson)).unwrap().text, "{\"ok\": true}");
    }

    #[test]
    fn fenced_json_is_accepted() {
        let gw = Gateway::single(Arc::new(MockBackend::ordinal(["```json\n{\"a\": 1}\n```"])));
        assert_eq!(gw.complete(&req("x", ResponseFormat::StrictJson)).unwrap().text, "{\"a\": 1}");
    }

    #[test]
    fn request_invariants() {
        let gw = Gateway::single(Arc::new(MockBackend::ordinal(["x"])));
        let mut r = req("x", ResponseFormat::FreeText);
        r.temperature = 2.5;
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
        r.temperature = 0.0;
        r.messages.clear();
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn missing_alias_is_reported() {
        let gw = Gateway::new().with_backend(ModelAlias::OnlineInference, Arc::new(MockBackend::ordinal(["x"])));
        let mut r = req("x", ResponseFormat::FreeText);
        r.model_alias = ModelAlias::OfflineRefinement;
        assert!(matches!(gw.complete(&r), Err(GatewayError::NotConfigured(ModelAlias::OfflineRefinement))));
    }

    #[test]
    fn images_change_the_fingerprint_but_only_by_digest() {
        let base = req("look", ResponseFormat::FreeText);
        let mut a = base.clone();
        a.messages[0] = a.messages[0].clone().with_image(ContentPart::ImageUrl { url: "file-a.jpg".into() });
        let mut b = base.clone();
        b.messages[0] = b.messages[0].clone().with_image(ContentPart::ImageUrl { url: "file-b.jpg".into() });
        assert_ne!(a.fingerprint(), base.fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_eq!(base.fingerprint().len(), 32);
    }

    #[test]
    fn http_body_shape() {
        let backend = HttpChatBackend::new(HttpBackendConfig {
            url: "http://localhost:1/v1/chat".into(),
            model_name: "m".into(),
            timeout: Duration::from_secs(1),
            max_retries: 0,
            requests_per_second: None,
        });
        let mut r = req("hi", ResponseFormat::StrictJson);
        r.messages.push(Message::user("see").with_image(ContentPart::ImageData { mime: "image/png".into(), base64: "AAA=".into() }));
        let body = backend.request_body(&r);
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["content"], "hi");
        assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,AAA=");
        assert_eq!(body["response_format"]["type"], "json_object");
        assert_eq!(body["temperature"], 0.2);
    }
}
