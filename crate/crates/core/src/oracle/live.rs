//! Chat-completions client for the live oracle.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::net;

pub const DEFAULT_KEY_ENV: &str = "SRVSCAN_ORACLE_KEY";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: DEFAULT_KEY_ENV.into(),
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LiveError {
    #[error(transparent)]
    Denied(#[from] net::NetworkDenied),
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("endpoint returned status {0}")]
    Status(u16),
    #[error("response has no message content")]
    NoContent,
}

pub struct LiveClient {
    cfg: LiveConfig,
    http: reqwest::blocking::Client,
}

impl LiveClient {
    pub fn new(cfg: LiveConfig) -> Result<LiveClient, LiveError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()?;
        Ok(LiveClient { cfg, http })
    }

    /// Sends each tier as the next user turn of one conversation and
    /// returns the reply to the last tier.
    pub fn converse(&self, tiers: &[String]) -> Result<String, LiveError> {
        let mut messages: Vec<Value> = Vec::new();
        let mut last = String::new();
        for tier in tiers {
            messages.push(json!({"role": "user", "content": tier}));
            last = self.complete(&messages)?;
            messages.push(json!({"role": "assistant", "content": last}));
        }
        Ok(last)
    }

    fn complete(&self, messages: &[Value]) -> Result<String, LiveError> {
        net::guard(&self.cfg.endpoint)?;
        let body = json!({
            "model": self.cfg.model,
            "temperature": 0,
            "messages": messages,
        });
        let mut req = self.http.post(&self.cfg.endpoint).json(&body);
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            req = req.bearer_auth(key);
        }
        let resp = req.send()?;
        if !resp.status().is_success() {
            return Err(LiveError::Status(resp.status().as_u16()));
        }
        let v: Value = resp.json()?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or(LiveError::NoContent)
    }
}
