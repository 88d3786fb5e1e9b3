use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ClientError, Message, RenderedPrompt, RerankerClient};

/// Connection settings for an OpenAI-style chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteSettings {
    /// e.g. `https://api.example.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. No
    /// `Authorization` header is sent when unset.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_tokens: u32,
    pub temperature: f32,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            model: String::new(),
            api_key_env: None,
            timeout_secs: 30,
            max_tokens: 16,
            temperature: 0.0,
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f32,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct RemoteClient {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    max_tokens: u32,
    temperature: f32,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient")
            .field("url", &self.url)
            .field("model", &self.model)
            .field("has_api_key", &self.api_key.is_some())
            .finish()
    }
}

impl RemoteClient {
    /// Validates settings and resolves the credential. Fails here rather than
    /// on the first request.
    pub fn new(settings: &RemoteSettings) -> Result<Self, ClientError> {
        let base = settings.base_url.trim().trim_end_matches('/');
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(ClientError::Config(format!(
                "reranker base_url must start with http:// or https://, got `{}`",
                settings.base_url
            )));
        }
        if settings.model.trim().is_empty() {
            return Err(ClientError::Config("reranker model name is empty".into()));
        }
        let api_key = match &settings.api_key_env {
            Some(var) => match std::env::var(var) {
                Ok(key) if !key.trim().is_empty() => Some(key),
                _ => {
                    return Err(ClientError::Config(format!(
                        "environment variable {var} with the reranker API key is not set"
                    )))
                }
            },
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url: format!("{base}/chat/completions"),
            model: settings.model.clone(),
            api_key,
            max_tokens: settings.max_tokens,
            temperature: settings.temperature,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl RerankerClient for RemoteClient {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, ClientError> {
        let body = ChatRequest {
            model: &self.model,
            messages: &prompt.messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        };
        let mut request = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| ClientError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(ClientError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            return Err(ClientError::Fatal(format!(
                "HTTP {status}: {}",
                detail.chars().take(200).collect::<String>()
            )));
        }
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Fatal(format!("malformed completion response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ClientError::Fatal("completion response has no message content".into()))
    }
}
