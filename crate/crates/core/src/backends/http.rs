//! Blocking JSON-over-HTTP client for a remote model host.
//!
//! Transport failures, timeouts and 502/503/504 responses are retried with
//! exponential backoff. Responses are validated against the host's
//! `describe` answer before they are returned.

use std::sync::OnceLock;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::*;

/// Environment variable holding the bearer token when none is configured.
pub const DEFAULT_TOKEN_ENV: &str = "CODEVQA_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    /// Base URL such as `http://127.0.0.1:8000`; routes are appended to it.
    pub base_url: String,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "http://127.0.0.1:8000".into(),
            timeout_secs: 60.0,
            max_attempts: 3,
            initial_backoff_ms: 200,
            token_env: DEFAULT_TOKEN_ENV.into(),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
    info: OnceLock<DescribeResponse>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.config.base_url)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    /// Reads the bearer token from `config.token_env` if it is set.
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let token = std::env::var(&config.token_env)
            .ok()
            .filter(|t| !t.is_empty());
        HttpBackend::with_token(config, token)
    }

    pub fn with_token(config: HttpConfig, token: Option<String>) -> Result<Self, BackendError> {
        if !(config.timeout_secs.is_finite() && config.timeout_secs > 0.0) {
            return Err(BackendError::Protocol(
                "timeout_secs must be positive".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            config,
            client,
            token,
            info: OnceLock::new(),
        })
    }

    fn url(&self, route: &str) -> String {
        format!("{}{route}", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        route: &str,
        capability: &str,
        req: &Req,
    ) -> Result<Resp, BackendError> {
        let mut builder = self.client.post(self.url(route)).json(req);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(format!("{capability}: {e}"))
            } else {
                BackendError::Transport(format!("{capability}: {e}"))
            }
        })?;
        let status = resp.status();
        let body = resp.bytes().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(format!("{capability}: {e}"))
            } else {
                BackendError::Transport(format!("{capability}: {e}"))
            }
        })?;
        if status.is_success() {
            return serde_json::from_slice(&body).map_err(|e| {
                BackendError::Protocol(format!("{capability}: malformed response: {e}"))
            });
        }
        if let Ok(err) = serde_json::from_slice::<ErrorResponse>(&body) {
            return Err(BackendError::Remote {
                capability: err.error.capability,
                message: err.error.message,
            });
        }
        match status.as_u16() {
            502..=504 => Err(BackendError::Transport(format!(
                "{capability}: HTTP {status}"
            ))),
            _ => Err(BackendError::Protocol(format!(
                "{capability}: HTTP {status} without an error body"
            ))),
        }
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        route: &str,
        capability: &str,
        req: &Req,
    ) -> Result<Resp, BackendError> {
        let attempts = self.config.max_attempts.max(1);
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut last = None;
        for attempt in 1..=attempts {
            match self.attempt(route, capability, req) {
                Err(e) if e.is_transient() && attempt < attempts => {
                    log::warn!("{capability} attempt {attempt}/{attempts} failed, retrying: {e}");
                    std::thread::sleep(backoff);
                    backoff = backoff.saturating_mul(2);
                    last = Some(e);
                }
                other => return other,
            }
        }
        Err(last.expect("loop ran at least once"))
    }

    fn info(&self) -> Result<&DescribeResponse, BackendError> {
        if let Some(info) = self.info.get() {
            return Ok(info);
        }
        let info: DescribeResponse = self.call(ROUTE_DESCRIBE, "describe", &DescribeRequest {})?;
        info.validate()?;
        Ok(self.info.get_or_init(|| info))
    }
}

impl Backend for HttpBackend {
    fn describe(&self) -> Result<DescribeResponse, BackendError> {
        self.info().cloned()
    }

    fn complete(&self, req: &CompleteRequest) -> Result<CompleteResponse, BackendError> {
        self.call(ROUTE_COMPLETE, "complete", req)
    }

    fn attention_with_grad(
        &self,
        req: &AttentionRequest,
    ) -> Result<AttentionResponse, BackendError> {
        let info = self.info()?;
        let resp: AttentionResponse = self.call(ROUTE_ATTENTION, "attention", req)?;
        resp.validate(info)?;
        Ok(resp)
    }

    fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse, BackendError> {
        self.call(ROUTE_CAPTION, "caption", req)
    }

    fn itc_score(&self, req: &ItcRequest) -> Result<ItcResponse, BackendError> {
        let resp: ItcResponse = self.call(ROUTE_ITC, "itc", req)?;
        resp.validate()?;
        Ok(resp)
    }

    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, BackendError> {
        let resp: DetectResponse = self.call(ROUTE_DETECT, "detect", req)?;
        resp.validate()?;
        Ok(resp)
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        let info = self.info()?;
        let resp: EmbedResponse = self.call(ROUTE_EMBED, "embed", req)?;
        resp.validate(info)?;
        Ok(resp)
    }

    fn name(&self) -> String {
        format!("http {}", self.config.base_url.trim_end_matches('/'))
    }
}
