//! The single abstraction over any planning/coding/judging backend.
//!
//! Pipeline stages never talk to a model directly. They render a
//! [`PromptTemplate`] with named slot bindings, send it through a
//! [`Backend`], and parse the raw response into typed blocks. Templates ship
//! as data files (see the `templates/` directory) so prompt revisions never
//! require code changes. The [`ScriptedBackend`] replays pre-authored
//! responses keyed by template id and call index, which makes entire
//! pipeline runs deterministic and byte-reproducible.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Errors raised by templating, parsing, and backend transport.
#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("template {template}: unbound slot {{{slot}}}")]
    UnboundSlot { template: String, slot: String },
    #[error("protocol violation at byte {offset}: {message}")]
    Protocol { offset: usize, message: String },
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("script underrun: template {template} exhausted at call index {index}")]
    ScriptUnderrun { template: String, index: usize },
    #[error("template source {path}: {message}")]
    TemplateSource { path: String, message: String },
    #[error("exchange log: {0}")]
    Log(String),
}

/// Expected response shape, declared per template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSchema {
    /// `<think>` text plus an `<action>` block holding a JSON payload.
    ThinkAction,
    /// `<think>` text plus a `<solution>` block of free text the caller
    /// interprets (tool calls, code, section headers).
    ThinkSolution,
    /// `<think>` plus a `<solution>` block holding a JSON payload.
    ThinkSolutionJson,
    /// Code blocks grouped by `## Subtree` / `### path` headers, optionally
    /// wrapped in a `<solution>` block.
    CodeSections,
}

impl ResponseSchema {
    pub fn parse_name(name: &str) -> Option<ResponseSchema> {
        match name {
            "think_action" => Some(ResponseSchema::ThinkAction),
            "think_solution" => Some(ResponseSchema::ThinkSolution),
            "think_solution_json" => Some(ResponseSchema::ThinkSolutionJson),
            "code_sections" => Some(ResponseSchema::CodeSections),
            _ => None,
        }
    }
}

/// A prompt template loaded from a data file: front-matter declaring id,
/// schema, role, and slots, then `---`, then the body with `{slot}` markers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub role: String,
    pub slots: Vec<String>,
    pub schema: ResponseSchema,
    pub body: String,
}

impl PromptTemplate {
    /// Parses the template data-file format. `origin` names the source in
    /// errors.
    pub fn parse(origin: &str, text: &str) -> Result<PromptTemplate, OracleError> {
        let bad = |message: String| OracleError::TemplateSource {
            path: origin.to_string(),
            message,
        };
        let (head, body) = text
            .split_once("\n---\n")
            .ok_or_else(|| bad("missing '---' front-matter separator".into()))?;
        let mut id = None;
        let mut role = String::new();
        let mut slots = Vec::new();
        let mut schema = None;
        for line in head.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| bad(format!("front-matter line {line:?} lacks ':'")))?;
            let value = value.trim();
            match key.trim() {
                "id" => id = Some(value.to_string()),
                "role" => role = value.to_string(),
                "schema" => {
                    schema = Some(ResponseSchema::parse_name(value).ok_or_else(|| {
                        bad(format!("unknown schema {value:?}"))
                    })?)
                }
                "slots" => {
                    slots = value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                other => return Err(bad(format!("unknown front-matter key {other:?}"))),
            }
        }
        Ok(PromptTemplate {
            id: id.ok_or_else(|| bad("missing id".into()))?,
            role,
            slots,
            schema: schema.ok_or_else(|| bad("missing schema".into()))?,
            body: body.to_string(),
        })
    }

    /// Substitutes every declared slot. Undeclared `{...}` text (JSON
    /// examples and the like) passes through untouched; a declared slot
    /// without a binding is an error naming the slot.
    pub fn render(&self, bindings: &SlotBindings) -> Result<String, OracleError> {
        let mut out = self.body.clone();
        for slot in &self.slots {
            let value = bindings.get(slot).ok_or_else(|| OracleError::UnboundSlot {
                template: self.id.clone(),
                slot: slot.clone(),
            })?;
            out = out.replace(&format!("{{{slot}}}"), &value.render());
        }
        Ok(out)
    }
}

/// A slot value: plain text or a list joined with ", " when rendered.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SlotValue {
    Text(String),
    List(Vec<String>),
}

impl SlotValue {
    fn render(&self) -> String {
        match self {
            SlotValue::Text(t) => t.clone(),
            SlotValue::List(items) => items.join(", "),
        }
    }
}

impl From<&str> for SlotValue {
    fn from(s: &str) -> Self {
        SlotValue::Text(s.to_string())
    }
}

impl From<String> for SlotValue {
    fn from(s: String) -> Self {
        SlotValue::Text(s)
    }
}

impl From<Vec<String>> for SlotValue {
    fn from(items: Vec<String>) -> Self {
        SlotValue::List(items)
    }
}

/// Named slot bindings for one render.
#[derive(Debug, Clone, Default)]
pub struct SlotBindings(BTreeMap<String, SlotValue>);

impl SlotBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, slot: &str, value: impl Into<SlotValue>) -> Self {
        self.0.insert(slot.to_string(), value.into());
        self
    }

    fn get(&self, slot: &str) -> Option<&SlotValue> {
        self.0.get(slot)
    }
}

/// One code section of a grouped response: the `## Subtree` it belongs to,
/// the `### path` it targets, and the fenced code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSection {
    pub subtree: String,
    pub file: String,
    pub code: String,
}

/// Parsed payload of a response, shaped by the template's schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    /// JSON payload from an `<action>` or `<solution>` block.
    Structured(serde_json::Value),
    /// Free-text `<solution>` body.
    Text(String),
    /// Header-grouped code sections.
    Sections(Vec<CodeSection>),
}

impl Payload {
    pub fn as_structured(&self) -> Option<&serde_json::Value> {
        match self {
            Payload::Structured(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Payload::Text(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_sections(&self) -> Option<&[CodeSection]> {
        match self {
            Payload::Sections(s) => Some(s),
            _ => None,
        }
    }
}

/// A response split into its think text and typed payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedBlocks {
    pub think: String,
    pub payload: Payload,
}

/// Extracts the unique `<tag>...</tag>` block. Returns the inner text and
/// its byte offset. Errors carry the byte offset where the problem sits.
fn extract_block(raw: &str, tag: &str, required: bool) -> Result<Option<(String, usize)>, OracleError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let Some(start) = raw.find(&open) else {
        if required {
            return Err(OracleError::Protocol {
                offset: raw.len(),
                message: format!("missing <{tag}> block"),
            });
        }
        return Ok(None);
    };
    let body_start = start + open.len();
    let Some(rel_end) = raw[body_start..].find(&close) else {
        return Err(OracleError::Protocol {
            offset: start,
            message: format!("unterminated <{tag}> block"),
        });
    };
    let body_end = body_start + rel_end;
    if let Some(dup) = raw[body_end + close.len()..].find(&open) {
        return Err(OracleError::Protocol {
            offset: body_end + close.len() + dup,
            message: format!("duplicated <{tag}> block"),
        });
    }
    Ok(Some((raw[body_start..body_end].trim().to_string(), body_start)))
}

fn parse_json_payload(text: &str, base_offset: usize) -> Result<serde_json::Value, OracleError> {
    serde_json::from_str(text).map_err(|e| {
        let line_offset: usize = text
            .lines()
            .take(e.line().saturating_sub(1))
            .map(|l| l.len() + 1)
            .sum();
        OracleError::Protocol {
            offset: base_offset + line_offset + e.column().saturating_sub(1),
            message: format!("malformed JSON payload: {e}"),
        }
    })
}

/// Splits a grouped code response into `(subtree, file, code)` sections.
/// Grammar: `## <subtree>` opens a group, `### <path>` targets a file, and
/// the following fenced code block is that file's code.
fn parse_sections(text: &str, base_offset: usize) -> Result<Vec<CodeSection>, OracleError> {
    let mut sections = Vec::new();
    let mut subtree: Option<String> = None;
    let mut file: Option<String> = None;
    let mut fence: Option<String> = None;
    let mut offset = 0usize;
    for line in text.lines() {
        let line_offset = base_offset + offset;
        offset += line.len() + 1;
        let trimmed = line.trim();
        if let Some(code) = fence.as_mut() {
            if trimmed.starts_with("```") {
                let section = CodeSection {
                    subtree: subtree.clone().unwrap_or_default(),
                    file: file.take().ok_or(OracleError::Protocol {
                        offset: line_offset,
                        message: "code fence closed without a '### path' target".into(),
                    })?,
                    code: std::mem::take(code),
                };
                sections.push(section);
                fence = None;
            } else {
                code.push_str(line);
                code.push('\n');
            }
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("### ") {
            if subtree.is_none() {
                return Err(OracleError::Protocol {
                    offset: line_offset,
                    message: format!("file header {rest:?} appears before any '## Subtree' header"),
                });
            }
            file = Some(rest.trim().to_string());
        } else if let Some(rest) = trimmed.strip_prefix("## ") {
            subtree = Some(rest.trim().to_string());
        } else if trimmed.starts_with("```") {
            if file.is_none() {
                return Err(OracleError::Protocol {
                    offset: line_offset,
                    message: "code fence opened without a '### path' target".into(),
                });
            }
            fence = Some(String::new());
        }
    }
    if fence.is_some() {
        return Err(OracleError::Protocol {
            offset: base_offset + offset,
            message: "unterminated code fence".into(),
        });
    }
    Ok(sections)
}

/// Parses a raw response against the given schema. The think block is
/// optional (empty when absent); the payload block is mandatory and must
/// conform, otherwise a protocol violation with a byte offset is returned.
pub fn parse_blocks(raw: &str, schema: ResponseSchema) -> Result<ParsedBlocks, OracleError> {
    let think = extract_block(raw, "think", false)?
        .map(|(t, _)| t)
        .unwrap_or_default();
    let payload = match schema {
        ResponseSchema::ThinkAction => {
            let (text, offset) =
                extract_block(raw, "action", true)?.expect("required block present");
            Payload::Structured(parse_json_payload(&text, offset)?)
        }
        ResponseSchema::ThinkSolutionJson => {
            let (text, offset) =
                extract_block(raw, "solution", true)?.expect("required block present");
            Payload::Structured(parse_json_payload(&text, offset)?)
        }
        ResponseSchema::ThinkSolution => {
            let (text, _) =
                extract_block(raw, "solution", true)?.expect("required block present");
            Payload::Text(text)
        }
        ResponseSchema::CodeSections => match extract_block(raw, "solution", false)? {
            Some((text, offset)) => Payload::Sections(parse_sections(&text, offset)?),
            None => Payload::Sections(parse_sections(raw, 0)?),
        },
    };
    Ok(ParsedBlocks { think, payload })
}

/// A request sent to a backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub template_id: String,
    pub prompt: String,
}

/// Backend failures; transient ones are retried with bounded backoff.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
    #[error("script underrun at call index {index}")]
    ScriptUnderrun { index: usize },
}

/// Anything that can answer a completion request. Implementations must
/// tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

/// Deterministic stub: ordered responses per template id, consumed one per
/// call. Exhausting a template's script is an explicit error, signalling a
/// test-authoring bug rather than producing garbage downstream.
#[derive(Default)]
pub struct ScriptedBackend {
    scripts: BTreeMap<String, Vec<String>>,
    cursors: Mutex<BTreeMap<String, usize>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one response to a template's script.
    pub fn push(&mut self, template_id: &str, response: impl Into<String>) {
        self.scripts.entry(template_id.to_string()).or_default().push(response.into());
    }

    /// Loads a script directory: each subdirectory is a template id, its
    /// files (sorted by name) the ordered responses.
    pub fn from_dir(dir: &Path) -> Result<Self, OracleError> {
        let mut backend = ScriptedBackend::new();
        let read = |p: &Path| -> Result<_, OracleError> {
            std::fs::read_dir(p).map_err(|e| OracleError::TemplateSource {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        };
        let mut template_dirs: Vec<_> = Vec::new();
        for entry in read(dir)? {
            let entry = entry.map_err(|e| OracleError::TemplateSource {
                path: dir.display().to_string(),
                message: e.to_string(),
            })?;
            if entry.path().is_dir() {
                template_dirs.push(entry.path());
            }
        }
        template_dirs.sort();
        for tdir in template_dirs {
            let id = tdir
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_default();
            let mut files: Vec<_> = read(&tdir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for file in files {
                let text = std::fs::read_to_string(&file).map_err(|e| {
                    OracleError::TemplateSource {
                        path: file.display().to_string(),
                        message: e.to_string(),
                    }
                })?;
                backend.push(&id, text);
            }
        }
        Ok(backend)
    }

    /// Responses not yet consumed, per template. Useful for asserting a
    /// script was fully used.
    pub fn remaining(&self) -> BTreeMap<String, usize> {
        let cursors = self.cursors.lock().expect("cursor lock");
        self.scripts
            .iter()
            .map(|(id, responses)| {
                let used = cursors.get(id).copied().unwrap_or(0);
                (id.clone(), responses.len().saturating_sub(used))
            })
            .filter(|(_, n)| *n > 0)
            .collect()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut cursors = self.cursors.lock().expect("cursor lock");
        let index = cursors.entry(request.template_id.clone()).or_insert(0);
        let response = self
            .scripts
            .get(&request.template_id)
            .and_then(|responses| responses.get(*index))
            .ok_or(BackendError::ScriptUnderrun { index: *index })?;
        *index += 1;
        Ok(response.clone())
    }
}

/// Smoke-test backend: echoes the request back, so transport plumbing can be
/// exercised without any model.
pub struct EchoBackend;

impl Backend for EchoBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        Ok(format!("echo[{}]: {}", request.template_id, request.prompt))
    }
}

/// Callable-backed backend for tests that compute responses on the fly.
pub struct FnBackend<F>(pub F);

impl<F> Backend for FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (self.0)(request)
    }
}

/// Configuration for a live HTTP chat-completion backend. The key is read
/// from the named environment variable, never stored in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model: String,
    pub auth_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

/// Minimal chat-completion client: POSTs the prompt as a single user
/// message and extracts `choices[0].message.content`. Connection and 5xx
/// failures are transient; anything else is fatal.
pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, OracleError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| OracleError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(HttpBackend { config, client })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let key = std::env::var(&self.config.auth_env).map_err(|_| {
            BackendError::Fatal(format!("auth variable {} is not set", self.config.auth_env))
        })?;
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| BackendError::Transient(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transient(format!("status {status}: {text}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("status {status}: {text}")));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Fatal(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| BackendError::Fatal("response lacks message content".into()))
    }
}

/// One request/response pair as recorded in the exchange log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleExchange {
    pub template_id: String,
    pub prompt: String,
    pub raw_response: String,
    /// "ok" or a protocol/transport failure description.
    pub outcome: String,
}

/// Append-only serialized sink for exchanges.
pub trait ExchangeSink: Send + Sync {
    fn record(&self, exchange: &OracleExchange) -> Result<(), String>;
}

/// JSONL file sink, one exchange per line.
pub struct JsonlSink {
    file: Mutex<std::fs::File>,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self, OracleError> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| OracleError::Log(format!("{}: {e}", path.display())))?;
        Ok(JsonlSink { file: Mutex::new(file) })
    }
}

impl ExchangeSink for JsonlSink {
    fn record(&self, exchange: &OracleExchange) -> Result<(), String> {
        let line = serde_json::to_string(exchange).map_err(|e| e.to_string())?;
        let mut file = self.file.lock().expect("log lock");
        writeln!(file, "{line}").map_err(|e| e.to_string())
    }
}

/// In-memory sink for tests.
#[derive(Default)]
pub struct MemorySink(pub Mutex<Vec<OracleExchange>>);

impl ExchangeSink for MemorySink {
    fn record(&self, exchange: &OracleExchange) -> Result<(), String> {
        self.0.lock().expect("sink lock").push(exchange.clone());
        Ok(())
    }
}

/// Retry policy for transient transport failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_millis(100) }
    }
}

/// Template registry plus backend plus exchange log: the complete oracle.
pub struct Oracle {
    templates: BTreeMap<String, PromptTemplate>,
    backend: Box<dyn Backend>,
    sink: Option<Box<dyn ExchangeSink>>,
    retry: RetryPolicy,
}

impl Oracle {
    /// Builds an oracle over the built-in template set.
    pub fn new(backend: Box<dyn Backend>) -> Self {
        Oracle {
            templates: builtin_templates(),
            backend,
            sink: None,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_sink(mut self, sink: Box<dyn ExchangeSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Replaces or adds a template (used by template-directory overrides).
    pub fn register_template(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id.clone(), template);
    }

    /// Loads every `*.md` file in `dir` as a template override.
    pub fn load_template_dir(&mut self, dir: &Path) -> Result<(), OracleError> {
        let entries = std::fs::read_dir(dir).map_err(|e| OracleError::TemplateSource {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "md").unwrap_or(false))
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| {
                OracleError::TemplateSource {
                    path: path.display().to_string(),
                    message: e.to_string(),
                }
            })?;
            let template = PromptTemplate::parse(&path.display().to_string(), &text)?;
            self.register_template(template);
        }
        Ok(())
    }

    pub fn template(&self, id: &str) -> Result<&PromptTemplate, OracleError> {
        self.templates.get(id).ok_or_else(|| OracleError::UnknownTemplate(id.to_string()))
    }

    /// Renders, completes, parses, and logs one exchange. Every call is
    /// logged exactly once, whether it parses cleanly, violates the
    /// protocol, or fails transport.
    pub fn exchange(
        &self,
        template_id: &str,
        bindings: &SlotBindings,
    ) -> Result<ParsedBlocks, OracleError> {
        let template = self.template(template_id)?;
        let prompt = template.render(bindings)?;
        let request = CompletionRequest {
            template_id: template_id.to_string(),
            prompt: prompt.clone(),
        };

        let mut last_err: Option<OracleError> = None;
        let mut raw: Option<String> = None;
        for attempt in 0..self.retry.attempts {
            match self.backend.complete(&request) {
                Ok(text) => {
                    raw = Some(text);
                    last_err = None;
                    break;
                }
                Err(BackendError::Transient(message)) => {
                    last_err = Some(OracleError::Transport {
                        attempts: attempt + 1,
                        message,
                    });
                    if attempt + 1 < self.retry.attempts {
                        std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt as u32));
                    }
                }
                Err(BackendError::ScriptUnderrun { index }) => {
                    last_err = Some(OracleError::ScriptUnderrun {
                        template: template_id.to_string(),
                        index,
                    });
                    break;
                }
                Err(BackendError::Fatal(message)) => {
                    last_err = Some(OracleError::Transport { attempts: attempt + 1, message });
                    break;
                }
            }
        }

        let (raw_response, result) = match (raw, last_err) {
            (Some(text), _) => {
                let parsed = parse_blocks(&text, template.schema);
                (text, parsed)
            }
            (None, Some(err)) => (String::new(), Err(err)),
            (None, None) => unreachable!("attempts is positive"),
        };

        if let Some(sink) = &self.sink {
            let outcome = match &result {
                Ok(_) => "ok".to_string(),
                Err(e) => e.to_string(),
            };
            let record = OracleExchange {
                template_id: template_id.to_string(),
                prompt,
                raw_response: raw_response.clone(),
                outcome,
            };
            sink.record(&record).map_err(OracleError::Log)?;
        }
        result
    }
}

macro_rules! embedded_templates {
    ($($name:literal),* $(,)?) => {
        [$(($name, include_str!(concat!("../templates/", $name, ".md")))),*]
    };
}

/// The built-in template set, compiled in from the `templates/` data files.
pub fn builtin_templates() -> BTreeMap<String, PromptTemplate> {
    let sources = embedded_templates![
        "select_exploit",
        "select_explore",
        "propose_missing",
        "self_check",
        "refactor_extract",
        "refactor_reorganize",
        "refactor_refine",
        "encode_folders",
        "encode_files",
        "encode_data_flows",
        "encode_file_order",
        "base_classes",
        "design_interfaces",
        "localize",
        "edit",
        "test_branch",
        "test_generate",
        "judge_failure",
        "fix_query",
        "test_fix",
        "assign_refine",
    ];
    let mut out = BTreeMap::new();
    for (name, text) in sources {
        let template = PromptTemplate::parse(name, text)
            .unwrap_or_else(|e| panic!("built-in template {name} is malformed: {e}"));
        assert_eq!(template.id, name, "template id must match its file name");
        out.insert(template.id.clone(), template);
    }
    out
}
