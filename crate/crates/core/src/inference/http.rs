//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{BackendConfig, Completion, InferenceError, InferenceRequest, TransportError};

pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    model_id: String,
    deterministic: bool,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, InferenceError> {
        let base = config
            .endpoint_url
            .as_deref()
            .ok_or_else(|| InferenceError::Config("http backend needs endpoint_url".into()))?;
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(config.timeout_secs.max(1))).build();
        Ok(Self {
            agent,
            url: format!("{}/v1/chat/completions", base.trim_end_matches('/')),
            model_id: config.model_id.clone(),
            deterministic: config.deterministic,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn body(&self, prompt: &str) -> serde_json::Value {
        let mut body = json!({
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt}],
        });
        if self.deterministic {
            body["temperature"] = json!(0);
        }
        body
    }
}

impl Completion for HttpBackend {
    fn complete(&self, _request: &InferenceRequest, prompt: &str) -> Result<String, TransportError> {
        let response = self.agent.post(&self.url).send_json(self.body(prompt)).map_err(|e| match e {
            ureq::Error::Status(code, resp) => {
                TransportError(format!("HTTP {code} from {}: {}", self.url, resp.status_text()))
            }
            ureq::Error::Transport(t) => TransportError(format!("{}: {t}", self.url)),
        })?;
        let parsed: ChatResponse =
            response.into_json().map_err(|e| TransportError(format!("malformed chat-completions response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| TransportError("chat-completions response has no choices".into()))
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}
