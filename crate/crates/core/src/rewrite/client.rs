//! Blocking client for a chat-completions endpoint.
//!
//! Each prompt is sent as a single user message with the configured
//! temperature and `max_tokens`. Answers are cached on disk by
//! (prompt hash, model); failed calls are retried with exponential backoff.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::cache::{CacheRecord, ResponseCache};
use super::prompt::PromptRequest;
use super::{Completion, Rewriter};
use crate::{Error, Result};

/// Environment variable holding the endpoint's bearer token.
pub const API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Debug, Clone)]
pub struct ChatClientConfig {
    /// Full URL, e.g. `http://localhost:8000/v1/chat/completions`.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub attempts: usize,
    pub initial_backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl ChatClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        ChatClientConfig {
            endpoint: endpoint.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
            timeout: Duration::from_secs(120),
            max_in_flight: 4,
        }
    }
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(cap: usize) -> Self {
        Gate {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            cap: cap.max(1),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    id: String,
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

pub struct ChatClient {
    config: ChatClientConfig,
    agent: ureq::Agent,
    cache: Option<ResponseCache>,
    gate: Gate,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("endpoint", &self.config.endpoint)
            .field("attempts", &self.config.attempts)
            .field("cache", &self.cache.as_ref().map(ResponseCache::dir))
            .finish()
    }
}

impl ChatClient {
    pub fn new(config: ChatClientConfig, cache: Option<ResponseCache>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        ChatClient {
            gate: Gate::new(config.max_in_flight),
            config,
            agent,
            cache,
        }
    }

    fn send_once(&self, request: &PromptRequest) -> std::result::Result<(String, String), String> {
        let body = json!({
            "model": request.model,
            "messages": [{ "role": "user", "content": request.text }],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let _permit = self.gate.acquire();
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(|e| e.to_string())?;
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| format!("malformed response: {e}"))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| "response has no choices".to_string())?
            .message
            .content
            .unwrap_or_default();
        Ok((content, parsed.id))
    }
}

impl Rewriter for ChatClient {
    fn complete(&self, request: &PromptRequest) -> Result<Completion> {
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&request.prompt_hash, &request.model)? {
                return Ok(Completion {
                    text: hit.response,
                    response_id: hit.response_id,
                    cache_hit: true,
                });
            }
        }
        let attempts = self.config.attempts.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = self.config.initial_backoff * 2u32.saturating_pow(attempt as u32 - 1);
                log::warn!(
                    "prompt {}: attempt {attempt} failed ({last_error}); retrying in {wait:?}",
                    &request.prompt_hash[..12.min(request.prompt_hash.len())]
                );
                std::thread::sleep(wait);
            }
            match self.send_once(request) {
                Ok((text, response_id)) => {
                    if let Some(cache) = &self.cache {
                        cache.put(&CacheRecord::new(
                            &request.prompt_hash,
                            &request.model,
                            &text,
                            &response_id,
                        ))?;
                    }
                    return Ok(Completion {
                        text,
                        response_id,
                        cache_hit: false,
                    });
                }
                Err(e) => last_error = e,
            }
        }
        Err(Error::Transport {
            prompt_hash: request.prompt_hash.clone(),
            message: format!("{last_error} (after {attempts} attempts)"),
        })
    }
}
