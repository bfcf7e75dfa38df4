//! Recovery backends.
//!
//! A backend receives an image, a mask and a sample count `K` and returns `K`
//! full-size recoveries. Sample `i` is drawn with seed `base_seed + i`.
//! Backends are free to alter known pixels; the detector composites before
//! scoring.
//!
//! Backends are named by a selector string:
//! - `builtin:mean-fill`: masked pixels set to the per-channel mean of the
//!   known pixels.
//! - `builtin:oracle-noise?sigma_fake=2&sigma_real=8`: a test double that
//!   returns the input plus Gaussian noise, with a smaller noise level for
//!   ids registered as fake.
//! - `http://host:port`: a remote service speaking [`protocol`].

mod builtin;
mod gate;
pub mod protocol;
mod remote;
mod retry;

use std::collections::HashSet;
use std::time::Duration;

use thiserror::Error;

pub use builtin::{MeanFillBackend, OracleNoiseBackend};
pub use gate::{Gate, Permit};
pub use remote::{
    decode_b64, describe_error, encode_b64, ClientOptions, RemoteBackend, RemoteClient,
    CORRELATION_HEADER,
};
pub use retry::RetryPolicy;

use crate::config::RunConfig;
use crate::image::{ImageBuffer, ImageError, MaskBuffer};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("endpoint unreachable after {attempts} attempt(s): {message}")]
    Connectivity { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("endpoint rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone)]
pub struct RecoveryRequest<'a> {
    /// Correlation id; builtin test doubles key their behavior on it.
    pub image_id: &'a str,
    pub image: &'a ImageBuffer,
    pub mask: &'a MaskBuffer,
    pub num_samples: usize,
    pub base_seed: u64,
    pub prompt: Option<&'a str>,
    pub steps: Option<u32>,
    pub guidance: Option<f64>,
    pub adapter_id: Option<&'a str>,
}

impl<'a> RecoveryRequest<'a> {
    pub fn new(
        image_id: &'a str,
        image: &'a ImageBuffer,
        mask: &'a MaskBuffer,
        num_samples: usize,
        base_seed: u64,
    ) -> Self {
        Self {
            image_id,
            image,
            mask,
            num_samples,
            base_seed,
            prompt: None,
            steps: None,
            guidance: None,
            adapter_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.num_samples == 0 {
            return Err(BackendError::Validation("num_samples must be >= 1".into()));
        }
        self.image
            .check_mask(self.mask)
            .map_err(|e| BackendError::Validation(e.to_string()))
    }

    pub fn sample_seed(&self, i: usize) -> u64 {
        self.base_seed.wrapping_add(i as u64)
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryResponse {
    pub samples: Vec<ImageBuffer>,
    pub backend_id: String,
    /// Wall-clock time per sample.
    pub latency: Vec<Duration>,
}

impl RecoveryResponse {
    /// Exactly `K` samples, each shaped like the request image.
    pub fn check(&self, request: &RecoveryRequest<'_>) -> Result<(), BackendError> {
        if self.samples.len() != request.num_samples {
            return Err(BackendError::Protocol(format!(
                "expected {} samples, got {}",
                request.num_samples,
                self.samples.len()
            )));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if !s.same_shape(request.image) || s.max_value() != request.image.max_value() {
                return Err(BackendError::Validation(format!(
                    "sample {i} is {}x{}x{}, request image is {}x{}x{}",
                    s.width(),
                    s.height(),
                    s.channels(),
                    request.image.width(),
                    request.image.height(),
                    request.image.channels()
                )));
            }
        }
        Ok(())
    }
}

pub trait RecoveryBackend: Send + Sync {
    fn id(&self) -> &str;

    fn health(&self) -> Result<(), BackendError>;

    fn recover(&self, request: &RecoveryRequest<'_>) -> Result<RecoveryResponse, BackendError>;
}

/// Parsed backend selector.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    MeanFill,
    OracleNoise { sigma_fake: f64, sigma_real: f64 },
    Remote { base_url: String },
}

impl BackendSpec {
    pub fn parse(selector: &str) -> Result<Self, BackendError> {
        let selector = selector.trim();
        if selector.starts_with("http://") || selector.starts_with("https://") {
            return Ok(BackendSpec::Remote {
                base_url: selector.trim_end_matches('/').to_string(),
            });
        }
        let Some(rest) = selector.strip_prefix("builtin:") else {
            return Err(BackendError::Validation(format!(
                "unknown backend {selector:?}; expected builtin:<name> or an http(s) URL"
            )));
        };
        let (name, query) = rest.split_once('?').unwrap_or((rest, ""));
        let mut params = Vec::new();
        for pair in query.split('&').filter(|p| !p.is_empty()) {
            let (k, v) = pair.split_once('=').ok_or_else(|| {
                BackendError::Validation(format!("malformed backend parameter {pair:?}"))
            })?;
            params.push((k, v));
        }
        let number = |key: &str, default: f64| -> Result<f64, BackendError> {
            match params.iter().find(|(k, _)| *k == key) {
                None => Ok(default),
                Some((_, v)) => v.parse().map_err(|_| {
                    BackendError::Validation(format!("backend parameter {key}={v} is not a number"))
                }),
            }
        };
        match name {
            "mean-fill" => Ok(BackendSpec::MeanFill),
            "oracle-noise" => {
                for (k, _) in &params {
                    if *k != "sigma_fake" && *k != "sigma_real" {
                        return Err(BackendError::Validation(format!(
                            "unknown oracle-noise parameter {k:?}"
                        )));
                    }
                }
                Ok(BackendSpec::OracleNoise {
                    sigma_fake: number("sigma_fake", 2.0)?,
                    sigma_real: number("sigma_real", 8.0)?,
                })
            }
            other => Err(BackendError::Validation(format!(
                "unknown builtin backend {other:?} (mean-fill, oracle-noise)"
            ))),
        }
    }

    pub fn is_remote(&self) -> bool {
        matches!(self, BackendSpec::Remote { .. })
    }

    /// Instantiate. `fake_ids` feeds the oracle-noise registry and is
    /// ignored by other backends.
    pub fn build(
        &self,
        config: &RunConfig,
        fake_ids: HashSet<String>,
    ) -> Result<Box<dyn RecoveryBackend>, BackendError> {
        Ok(match self {
            BackendSpec::MeanFill => Box::new(MeanFillBackend),
            BackendSpec::OracleNoise {
                sigma_fake,
                sigma_real,
            } => Box::new(OracleNoiseBackend::new(*sigma_fake, *sigma_real, fake_ids)?),
            BackendSpec::Remote { base_url } => Box::new(RemoteBackend::new(
                RemoteClient::new(base_url, ClientOptions::from_config(config))?,
            )),
        })
    }
}
