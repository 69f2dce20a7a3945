//! HTTP transport boundary. Everything above this trait is deterministic
//! and testable with scripted transports.

use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub url: String,
    pub bearer: Option<String>,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Blocking JSON POST. Errors are transport-level only (connection refused,
/// timeout); any HTTP status is a successful transport round trip.
pub trait HttpTransport: Send + Sync {
    fn post_json(&self, request: &HttpRequest) -> Result<HttpResponse, String>;
}

#[cfg(feature = "http")]
pub use live::ReqwestTransport;

#[cfg(feature = "http")]
mod live {
    use super::*;
    use std::time::Duration;

    /// Real transport over a shared blocking client.
    pub struct ReqwestTransport {
        client: reqwest::blocking::Client,
    }

    impl ReqwestTransport {
        pub fn new(timeout_secs: u64) -> Result<Self, String> {
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(timeout_secs))
                .build()
                .map_err(|e| e.to_string())?;
            Ok(ReqwestTransport { client })
        }
    }

    impl HttpTransport for ReqwestTransport {
        fn post_json(&self, request: &HttpRequest) -> Result<HttpResponse, String> {
            let mut builder = self.client.post(&request.url).json(&request.body);
            if let Some(token) = &request.bearer {
                builder = builder.bearer_auth(token);
            }
            let response = builder.send().map_err(|e| e.to_string())?;
            let status = response.status().as_u16();
            let body = response.text().map_err(|e| e.to_string())?;
            Ok(HttpResponse { status, body })
        }
    }
}
