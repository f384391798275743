//! Model capabilities behind a single trait, with an HTTP client, a
//! content-addressed response cache, and deterministic offline backends.

pub mod cache;
pub mod embed;
pub mod http;
pub mod limit;
pub mod oracle;
pub mod protocol;
pub mod scripted;

use thiserror::Error;

pub use protocol::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend error in {capability}: {message}")]
    Remote { capability: String, message: String },
    #[error("capability {0} is not provided by this backend")]
    Unsupported(&'static str),
}

impl BackendError {
    /// Whether retrying the same request may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::Timeout(_))
    }

    pub fn remote(capability: impl Into<String>, message: impl Into<String>) -> Self {
        BackendError::Remote {
            capability: capability.into(),
            message: message.into(),
        }
    }
}

/// One model host. Implementations must accept concurrent calls, and
/// `describe` must return the same value for the backend's whole lifetime.
pub trait Backend: Send + Sync {
    fn describe(&self) -> Result<DescribeResponse, BackendError>;

    fn complete(&self, _req: &CompleteRequest) -> Result<CompleteResponse, BackendError> {
        Err(BackendError::Unsupported("complete"))
    }

    fn attention_with_grad(
        &self,
        _req: &AttentionRequest,
    ) -> Result<AttentionResponse, BackendError> {
        Err(BackendError::Unsupported("attention"))
    }

    fn caption(&self, _req: &CaptionRequest) -> Result<CaptionResponse, BackendError> {
        Err(BackendError::Unsupported("caption"))
    }

    fn itc_score(&self, _req: &ItcRequest) -> Result<ItcResponse, BackendError> {
        Err(BackendError::Unsupported("itc"))
    }

    fn detect(&self, _req: &DetectRequest) -> Result<DetectResponse, BackendError> {
        Err(BackendError::Unsupported("detect"))
    }

    fn embed(&self, _req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        Err(BackendError::Unsupported("embed"))
    }

    /// Identifier mixed into cache keys.
    fn name(&self) -> String {
        String::new()
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn describe(&self) -> Result<DescribeResponse, BackendError> {
        (**self).describe()
    }
    fn complete(&self, req: &CompleteRequest) -> Result<CompleteResponse, BackendError> {
        (**self).complete(req)
    }
    fn attention_with_grad(
        &self,
        req: &AttentionRequest,
    ) -> Result<AttentionResponse, BackendError> {
        (**self).attention_with_grad(req)
    }
    fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse, BackendError> {
        (**self).caption(req)
    }
    fn itc_score(&self, req: &ItcRequest) -> Result<ItcResponse, BackendError> {
        (**self).itc_score(req)
    }
    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, BackendError> {
        (**self).detect(req)
    }
    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        (**self).embed(req)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}
