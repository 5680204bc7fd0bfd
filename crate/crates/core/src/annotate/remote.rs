//! HTTP provider speaking the `extract_session_info` wire format.
//!
//! Request body: `{"session_text": ..., "schema_name": "extract_session_info"}`.
//! The response body must carry the three annotation fields at top level.

use std::fmt;
use std::time::Duration;

use serde_json::{json, Value};

use crate::annotate::provider::{AnnotationRequest, Provider, ProviderError};
use crate::error::{Error, Result};

/// Environment variable holding the bearer credential.
pub const API_KEY_ENV: &str = "SCOREGAP_API_KEY";

pub struct HttpProvider {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
    id: String,
}

// The credential must never reach logs.
impl fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpProvider")
            .field("endpoint", &self.endpoint)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl HttpProvider {
    pub fn new(endpoint: &str, api_key: String, timeout: Duration) -> Result<Self> {
        if api_key.trim().is_empty() {
            return Err(Error::ProviderUnusable(format!("{API_KEY_ENV} is empty")));
        }
        let parsed = reqwest::Url::parse(endpoint)
            .map_err(|e| Error::ProviderUnusable(format!("bad endpoint {endpoint:?}: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(Error::ProviderUnusable(format!(
                "endpoint scheme {} is not http(s)",
                parsed.scheme()
            )));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::ProviderUnusable(format!("http client: {e}")))?;
        Ok(HttpProvider {
            id: format!("remote:{endpoint}"),
            endpoint: endpoint.to_string(),
            api_key,
            client,
        })
    }

    /// Reads the credential from the environment. Fails before any network traffic.
    pub fn from_env(endpoint: Option<&str>, timeout: Duration) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| Error::ProviderUnusable(format!("{API_KEY_ENV} is not set")))?;
        let endpoint = endpoint
            .ok_or_else(|| Error::ProviderUnusable("no remote endpoint configured".into()))?;
        Self::new(endpoint, key, timeout)
    }
}

impl Provider for HttpProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &AnnotationRequest<'_>) -> std::result::Result<Value, ProviderError> {
        let body = json!({
            "session_text": request.session_text,
            "schema_name": request.schema_name,
        });
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| ProviderError::Transient(format!("request failed: {}", e.without_url())))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Fatal(format!("status {status}")));
        }
        let text = response
            .text()
            .map_err(|e| ProviderError::Transient(format!("reading body: {e}")))?;
        serde_json::from_str(&text)
            .map_err(|e| ProviderError::Transient(format!("malformed body: {e}")))
    }
}
