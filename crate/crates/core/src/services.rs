//! Minimal chat-completion HTTP client shared by the live agent, oracle,
//! and mutator. Credentials come from an environment variable named in the
//! client config, never from config files.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("http error: {0}")]
    Http(String),
    #[error("bad response: {0}")]
    Parse(String),
    #[error("missing credential environment variable {0}")]
    MissingCredential(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".to_string(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".to_string(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".to_string(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [ChatMessage],
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

/// Blocking client for an OpenAI-style `/v1/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct ChatClient {
    base_url: String,
    api_key_env: Option<String>,
    timeout_secs: u64,
    /// Transport retries beyond the first attempt.
    retries: u32,
}

impl ChatClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_env: None,
            timeout_secs: 120,
            retries: 1,
        }
    }

    pub fn with_api_key_env(mut self, var: impl Into<String>) -> Self {
        self.api_key_env = Some(var.into());
        self
    }

    pub fn with_timeout_secs(mut self, secs: u64) -> Self {
        self.timeout_secs = secs;
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    /// Sends one chat request and returns the first choice's content.
    pub fn complete(
        &self,
        model: &str,
        temperature: f64,
        messages: &[ChatMessage],
    ) -> Result<String, ServiceError> {
        let api_key = match &self.api_key_env {
            None => None,
            Some(var) => match std::env::var(var) {
                Ok(value) => Some(value),
                Err(_) => return Err(ServiceError::MissingCredential(var.clone())),
            },
        };
        let url = format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'));
        let body = ChatRequest {
            model,
            temperature,
            messages,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(self.timeout_secs))
            .build()
            .map_err(|e| ServiceError::Http(e.to_string()))?;
        let mut last_error = ServiceError::Http("no attempt made".to_string());
        for _ in 0..=self.retries {
            let mut request = client.post(&url).json(&body);
            if let Some(key) = &api_key {
                request = request.bearer_auth(key);
            }
            match request.send() {
                Ok(response) => {
                    if !response.status().is_success() {
                        last_error = ServiceError::Http(format!("status {}", response.status()));
                        continue;
                    }
                    let parsed: ChatResponse = match response.json() {
                        Ok(parsed) => parsed,
                        Err(e) => {
                            last_error = ServiceError::Parse(e.to_string());
                            continue;
                        }
                    };
                    return parsed
                        .choices
                        .into_iter()
                        .next()
                        .map(|c| c.message.content)
                        .ok_or_else(|| ServiceError::Parse("empty choices".to_string()));
                }
                Err(e) => last_error = ServiceError::Http(e.to_string()),
            }
        }
        Err(last_error)
    }
}
