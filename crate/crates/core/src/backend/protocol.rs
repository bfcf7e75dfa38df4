//! JSON bodies exchanged with remote endpoints.
//!
//! | endpoint            | request                  | response            |
//! |---------------------|--------------------------|---------------------|
//! | `GET /v1/health`    |                          | [`HealthResponse`]  |
//! | `POST /v1/inpaint`  | [`InpaintRequest`]       | [`InpaintResponse`] |
//! | `POST /v1/generate` | [`GenerateRequest`]      | [`GenerateResponse`]|
//! | `POST /v1/caption`  | [`CaptionRequest`]       | [`CaptionResponse`] |
//! | `POST /v1/finetune` | [`FinetuneRequest`]      | [`AdapterRecord`]   |
//!
//! Images travel as base64 (standard alphabet, padded) PNG. Masks are
//! 1-channel PNGs with 255 = masked, 0 = known.

use serde::{Deserialize, Serialize};

pub const HEALTH_PATH: &str = "/v1/health";
pub const INPAINT_PATH: &str = "/v1/inpaint";
pub const GENERATE_PATH: &str = "/v1/generate";
pub const CAPTION_PATH: &str = "/v1/caption";
pub const FINETUNE_PATH: &str = "/v1/finetune";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub image_png_b64: String,
    pub mask_png_b64: String,
    pub num_samples: usize,
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<f64>,
    /// Fine-tuned adapter to apply on top of the base model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintResponse {
    pub samples: Vec<String>,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image_png_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub image_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRequest {
    pub manifest_path: String,
    pub rank: u32,
    pub steps: u32,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRecord {
    pub adapter_id: String,
    pub base_model_id: String,
    pub rank: u32,
    pub train_steps: u32,
    pub dataset_fingerprint: String,
}

/// Error body a sidecar may return alongside a non-2xx status.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    #[serde(default)]
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<String>,
}
