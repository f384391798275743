//! Request and response bodies of the JSON wire protocol.
//!
//! Every capability is a `POST` to its own route with a JSON body. Errors
//! are reported as `{"error": {"capability": .., "message": ..}}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::BackendError;

pub const ROUTE_DESCRIBE: &str = "/v1/describe";
pub const ROUTE_COMPLETE: &str = "/v1/complete";
pub const ROUTE_ATTENTION: &str = "/v1/attention";
pub const ROUTE_CAPTION: &str = "/v1/caption";
pub const ROUTE_ITC: &str = "/v1/itc";
pub const ROUTE_DETECT: &str = "/v1/detect";
pub const ROUTE_EMBED: &str = "/v1/embed";

/// Count of special (non-text) token rows at each end of an attention matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecialTokens {
    pub leading: usize,
    pub trailing: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescribeResponse {
    pub grid_w: usize,
    pub grid_h: usize,
    pub embed_dim: usize,
    #[serde(default)]
    pub special_tokens: SpecialTokens,
    #[serde(default = "one")]
    pub captions_per_round: usize,
}

fn one() -> usize {
    1
}

impl DescribeResponse {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.grid_w == 0
            || self.grid_h == 0
            || self.embed_dim == 0
            || self.captions_per_round == 0
        {
            return Err(BackendError::Protocol(format!(
                "describe: grid, embedding dimension and captions per round must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescribeRequest {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logit_bias: Option<BTreeMap<String, i32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionRequest {
    pub image_ref: String,
    pub text: String,
    pub layer: usize,
}

/// Row-major `T × (grid_h · grid_w)` matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionResponse {
    pub tokens: Vec<String>,
    pub attention: Vec<Vec<f64>>,
    pub gradient: Vec<Vec<f64>>,
}

impl AttentionResponse {
    pub fn validate(&self, info: &DescribeResponse) -> Result<(), BackendError> {
        let width = info.grid_w * info.grid_h;
        let t = self.tokens.len();
        if self.attention.len() != t || self.gradient.len() != t {
            return Err(BackendError::Protocol(format!(
                "attention: {t} tokens but {} attention rows and {} gradient rows",
                self.attention.len(),
                self.gradient.len()
            )));
        }
        for (i, (c, g)) in self.attention.iter().zip(&self.gradient).enumerate() {
            if c.len() != width || g.len() != width {
                return Err(BackendError::Protocol(format!(
                    "attention: row {i} has widths {} and {}, expected {width}",
                    c.len(),
                    g.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite() || *v < 0.0) || g.iter().any(|v| !v.is_finite()) {
                return Err(BackendError::Protocol(format!(
                    "attention: row {i} has negative or non-finite entries"
                )));
            }
        }
        let special = info.special_tokens.leading + info.special_tokens.trailing;
        if t < special {
            return Err(BackendError::Protocol(format!(
                "attention: {t} tokens is fewer than the {special} declared special tokens"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRequest {
    pub image_ref: String,
    pub patches: Vec<usize>,
    pub rng_token: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionResponse {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItcRequest {
    pub image_ref: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItcResponse {
    pub score: f64,
}

impl ItcResponse {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.score.is_finite() {
            return Err(BackendError::Protocol("itc: score is not finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectRequest {
    pub image_ref: String,
    pub text: String,
}

/// Box corners are normalized to `[0, 1]` with the origin at the top-left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireDetection {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectResponse {
    pub detections: Vec<WireDetection>,
}

impl DetectResponse {
    pub fn validate(&self) -> Result<(), BackendError> {
        for (i, d) in self.detections.iter().enumerate() {
            let [x0, y0, x1, y1] = d.bbox;
            let in_unit = d.bbox.iter().all(|v| (0.0..=1.0).contains(v));
            if !in_unit || x0 >= x1 || y0 >= y1 || !(0.0..=1.0).contains(&d.score) {
                return Err(BackendError::Protocol(format!(
                    "detect: detection {i} has an invalid box or score: {d:?}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedResponse {
    pub embedding: Vec<f64>,
}

impl EmbedResponse {
    pub fn validate(&self, info: &DescribeResponse) -> Result<(), BackendError> {
        if self.embedding.len() != info.embed_dim {
            return Err(BackendError::Protocol(format!(
                "embed: expected dimension {}, got {}",
                info.embed_dim,
                self.embedding.len()
            )));
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::Protocol("embed: non-finite entry".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub capability: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorResponse {
    pub error: ErrorBody,
}
