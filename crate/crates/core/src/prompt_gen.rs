//! LLM prompt generation over a chat-completion HTTP API, plus the offline
//! file fallback and bank diagnostics.
//!
//! Nothing downstream of a saved bank calls into this module.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::types::{ClassCatalog, ClassPrompts, GeneratorInfo, PromptBank};

pub const QUERY_TEMPLATE: &str = "Give {N} textual descriptions of visual discriminative features for distinct medical cases of {CLASS} found in {MODALITY}.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env_var: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub max_in_flight: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_string(),
            api_key_env_var: "OPENAI_API_KEY".to_string(),
            model: "gpt-4".to_string(),
            timeout_secs: 120,
            max_retries: 3,
            max_in_flight: 4,
            temperature: None,
        }
    }
}

pub fn build_query(class_name: &str, modality: &str, n: usize) -> Result<String> {
    if class_name.trim().is_empty() || modality.trim().is_empty() {
        return Err(Error::Config("query needs a non-empty class and modality".into()));
    }
    if n == 0 {
        return Err(Error::Config("query needs N >= 1".into()));
    }
    Ok(QUERY_TEMPLATE
        .replace("{N}", &n.to_string())
        .replace("{CLASS}", class_name)
        .replace("{MODALITY}", modality))
}

/// Strips a leading list marker: `12.`, `3)`, `(4)`, `-`, `*`, `•`.
fn strip_enumerator(line: &str) -> &str {
    let s = line.trim();
    for bullet in ["-", "*", "•", "–"] {
        if let Some(rest) = s.strip_prefix(bullet) {
            return rest.trim_start();
        }
    }
    let body = s.strip_prefix('(').unwrap_or(s);
    let digits = body.len() - body.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &body[digits..];
        for sep in [".", ")", ":"] {
            if let Some(r) = rest.strip_prefix(sep) {
                return r.trim_start();
            }
        }
    }
    s
}

/// One prompt per non-empty line, list markers removed.
pub fn parse_response(text: &str) -> Vec<String> {
    text.lines()
        .map(strip_enumerator)
        .map(|l| l.trim_matches('"').trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// A single-turn chat completion.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;

    fn model(&self) -> &str;
}

/// `POST {base_url}/chat/completions` with bearer auth.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    temperature: Option<f64>,
    api_key: String,
}

impl fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpTransport")
            .field("url", &self.url)
            .field("model", &self.model)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl HttpTransport {
    /// Reads the key from the configured environment variable.
    pub fn from_config(config: &LlmEndpointConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env_var)
            .map_err(|_| Error::Auth(format!("environment variable `{}` is not set", config.api_key_env_var)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Http(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            temperature: config.temperature,
            api_key,
        })
    }

    fn redact(&self, text: &str) -> String {
        if self.api_key.is_empty() {
            text.to_string()
        } else {
            text.replace(&self.api_key, "<redacted>")
        }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, prompt: &str) -> Result<String> {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(t) = self.temperature {
            body["temperature"] = json!(t);
        }
        log::debug!("POST {} authorization=Bearer <redacted> body={body}", self.url);
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    Error::Timeout(self.redact(&e.to_string()))
                } else {
                    Error::Http(self.redact(&e.to_string()))
                }
            })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Http(self.redact(&e.to_string())))?;
        log::debug!("response {status}: {}", self.redact(&text));
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(Error::Auth(format!("endpoint answered {status}")));
        }
        if !status.is_success() {
            let snippet: String = self.redact(&text).chars().take(200).collect();
            return Err(Error::Http(format!("endpoint answered {status}: {snippet}")));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Http(format!("malformed response: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Http("response has no choices[0].message.content".into()))
    }

    fn model(&self) -> &str {
        &self.model
    }
}

/// Outcome of fetching one class: the prompts gathered, possibly short.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFetch {
    pub prompts: Vec<String>,
    pub attempts: usize,
}

/// Queries until `n` distinct prompts are collected or `max_retries`
/// re-queries are spent. Re-queries ask only for the shortfall. Timeouts
/// and HTTP failures consume a retry; authentication failures abort.
pub fn fetch_class_prompts(
    transport: &dyn ChatTransport,
    class_name: &str,
    modality: &str,
    n: usize,
    max_retries: usize,
) -> Result<ClassFetch> {
    let mut prompts: Vec<String> = Vec::with_capacity(n);
    let mut seen = HashSet::new();
    let mut attempts = 0;
    let mut last_err = None;
    while prompts.len() < n && attempts <= max_retries {
        attempts += 1;
        let query = build_query(class_name, modality, n - prompts.len())?;
        match transport.complete(&query) {
            Ok(text) => {
                for p in parse_response(&text) {
                    if prompts.len() == n {
                        break;
                    }
                    if seen.insert(p.clone()) {
                        prompts.push(p);
                    }
                }
                last_err = None;
            }
            Err(e @ Error::Auth(_)) => return Err(e),
            Err(e) => {
                log::warn!("class `{class_name}` attempt {attempts}: {e}");
                last_err = Some(e);
            }
        }
    }
    match last_err {
        Some(e) if prompts.is_empty() => Err(e),
        _ => Ok(ClassFetch { prompts, attempts }),
    }
}

/// Fetches `n` prompts for every catalog class with at most
/// `config.max_in_flight` concurrent requests. Fails with
/// [`Error::PartialBank`] if any class stays short.
pub fn fetch_prompts(
    transport: &dyn ChatTransport,
    config: &LlmEndpointConfig,
    catalog: &ClassCatalog,
    n: usize,
) -> Result<PromptBank> {
    let entries = catalog.entries();
    let cap = config.max_in_flight.max(1);
    let mut results: Vec<Result<ClassFetch>> = Vec::with_capacity(entries.len());
    for chunk in entries.chunks(cap) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|e| s.spawn(move || fetch_class_prompts(transport, &e.name, &e.modality, n, config.max_retries)))
                .collect();
            for h in handles {
                results.push(h.join().expect("fetch thread panicked"));
            }
        });
    }
    let mut classes = Vec::with_capacity(entries.len());
    let mut deficient = Vec::new();
    for (e, r) in entries.iter().zip(results) {
        let fetched = r?;
        if fetched.prompts.len() < n {
            deficient.push(format!("{} ({}/{n})", e.name, fetched.prompts.len()));
        }
        classes.push(ClassPrompts {
            name: e.name.clone(),
            modality: e.modality.clone(),
            prompts: fetched.prompts,
        });
    }
    if !deficient.is_empty() {
        return Err(Error::PartialBank(deficient));
    }
    let bank = PromptBank {
        query_template: QUERY_TEMPLATE.to_string(),
        generator: GeneratorInfo {
            model: transport.model().to_string(),
            timestamp: None,
            extra: Default::default(),
        },
        classes,
    };
    bank.check(catalog, n)?;
    Ok(bank)
}

/// Loads an existing bank instead of calling out; no network activity.
pub fn load_offline(path: &Path, catalog: &ClassCatalog, n: usize) -> Result<PromptBank> {
    let bank = PromptBank::load(path)?;
    bank.check(catalog, n)?;
    Ok(bank)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    MissingClass(String),
    UnknownClass(String),
    DuplicatePrompt {
        class: String,
        prompt: String,
    },
    EmptyPrompt {
        class: String,
        index: usize,
    },
    CountMismatch {
        class: String,
        found: usize,
        expected: usize,
    },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::MissingClass(c) => write!(f, "class `{c}` missing from bank"),
            Diagnostic::UnknownClass(c) => write!(f, "bank class `{c}` not in catalog"),
            Diagnostic::DuplicatePrompt { class, prompt } => {
                write!(f, "class `{class}` repeats prompt \"{prompt}\"")
            }
            Diagnostic::EmptyPrompt { class, index } => write!(f, "class `{class}` prompt {index} is empty"),
            Diagnostic::CountMismatch { class, found, expected } => {
                write!(f, "class `{class}` has {found} prompts, expected {expected}")
            }
        }
    }
}

/// Everything that would stop the bank from being encoded. Empty means
/// usable.
pub fn validate_bank(bank: &PromptBank, catalog: &ClassCatalog, n: usize) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for name in catalog.names() {
        if bank.class(name).is_none() {
            out.push(Diagnostic::MissingClass(name.to_string()));
        }
    }
    for class in &bank.classes {
        if !catalog.contains(&class.name) {
            out.push(Diagnostic::UnknownClass(class.name.clone()));
            continue;
        }
        if class.prompts.len() != n {
            out.push(Diagnostic::CountMismatch {
                class: class.name.clone(),
                found: class.prompts.len(),
                expected: n,
            });
        }
        let mut seen = HashSet::new();
        for (i, p) in class.prompts.iter().enumerate() {
            if p.trim().is_empty() {
                out.push(Diagnostic::EmptyPrompt {
                    class: class.name.clone(),
                    index: i,
                });
            } else if !seen.insert(p.as_str()) {
                out.push(Diagnostic::DuplicatePrompt {
                    class: class.name.clone(),
                    prompt: p.clone(),
                });
            }
        }
    }
    out
}
