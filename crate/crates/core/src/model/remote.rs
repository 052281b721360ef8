//! OpenAI-compatible chat-completions client.
//!
//! POSTs `{base_url}/chat/completions` with the prompt as a single user
//! message and reads the first choice's message content. Retries use
//! exponential backoff, honoring Retry-After on 429; concurrent requests are
//! capped by a counting semaphore (`max_inflight`).

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::ModelError;

/// Remote backend settings. The bearer token is read from the environment
/// variable named by `token_env` at request time; requests go out without
/// auth when it is unset.
#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub token_env: String,
    pub max_inflight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4-turbo".into(),
            temperature: 0.0,
            max_tokens: 256,
            timeout_secs: 60,
            max_retries: 5,
            token_env: "OPENAI_API_KEY".into(),
            max_inflight: 4,
        }
    }
}

impl RemoteConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.base_url.is_empty() {
            return Err(ModelError::InvalidConfig("base_url is empty".into()));
        }
        if self.model_name.is_empty() {
            return Err(ModelError::InvalidConfig("model_name is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ModelError::InvalidConfig(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.max_retries == 0 || self.max_retries > 32 {
            return Err(ModelError::InvalidConfig(format!(
                "max_retries {} must be in 1..=32",
                self.max_retries
            )));
        }
        if self.max_inflight == 0 {
            return Err(ModelError::InvalidConfig("max_inflight must be >= 1".into()));
        }
        Ok(())
    }
}

/// Counting semaphore over Mutex + Condvar; std has no native one.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits), available: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.semaphore.permits.lock().unwrap() += 1;
        self.semaphore.available.notify_one();
    }
}

pub(super) struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
    inflight: Semaphore,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl RemoteClient {
    pub(super) fn new(config: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        let inflight = Semaphore::new(config.max_inflight);
        Self { config, agent, inflight }
    }

    pub(super) fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub(super) fn complete(&self, prompt: &str) -> Result<String, ModelError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });

        let mut last: Option<ModelError> = None;
        for attempt in 0..self.config.max_retries {
            if attempt > 0 {
                let backoff = self.backoff_for(last.as_ref(), attempt);
                std::thread::sleep(backoff);
            }
            match self.send(&url, &body) {
                Ok(text) => return Ok(text),
                Err(e @ ModelError::Endpoint { .. }) | Err(e @ ModelError::MalformedResponse(_)) => {
                    // Client errors and parse failures do not improve on retry.
                    return Err(e);
                }
                Err(e) => last = Some(e),
            }
        }
        Err(ModelError::ExhaustedRetries {
            attempts: self.config.max_retries,
            last: last.map_or_else(|| "no attempt made".into(), |e| e.to_string()),
        })
    }

    fn backoff_for(&self, last: Option<&ModelError>, attempt: u32) -> Duration {
        if let Some(ModelError::RateLimited { retry_after_secs: Some(secs) }) = last {
            return Duration::from_secs((*secs).min(30));
        }
        // 250 ms, 500 ms, 1 s, ... capped at 8 s.
        Duration::from_millis((250u64 << (attempt - 1).min(5)).min(8_000))
    }

    fn send(&self, url: &str, body: &serde_json::Value) -> Result<String, ModelError> {
        let _permit = self.inflight.acquire();
        let mut request = self.agent.post(url);
        if let Ok(token) = std::env::var(&self.config.token_env) {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        let response = match request.send_json(body.clone()) {
            Ok(r) => r,
            Err(ureq::Error::Status(429, r)) => {
                let retry_after_secs = r
                    .header("retry-after")
                    .and_then(|v| v.trim().parse::<u64>().ok());
                return Err(ModelError::RateLimited { retry_after_secs });
            }
            Err(ureq::Error::Status(status, r)) if (500..600).contains(&status) => {
                return Err(ModelError::Transport(format!(
                    "server error {status}: {}",
                    r.into_string().unwrap_or_default()
                )))
            }
            Err(ureq::Error::Status(status, r)) => {
                return Err(ModelError::Endpoint {
                    status,
                    body: r.into_string().unwrap_or_default(),
                })
            }
            Err(ureq::Error::Transport(t)) => {
                return Err(if t.kind() == ureq::ErrorKind::Io {
                    ModelError::Timeout
                } else {
                    ModelError::Transport(t.to_string())
                })
            }
        };
        let parsed: ChatResponse = response
            .into_json()
            .map_err(|e| ModelError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ModelError::MalformedResponse("response has no choices".into()))
    }
}
