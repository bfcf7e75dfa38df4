use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use log::{debug, warn};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::protocol::{
    ErrorBody, HealthResponse, InpaintRequest, InpaintResponse, HEALTH_PATH, INPAINT_PATH,
};
use super::{BackendError, Gate, RecoveryBackend, RecoveryRequest, RecoveryResponse, RetryPolicy};
use crate::config::RunConfig;
use crate::image::ImageBuffer;

pub const CORRELATION_HEADER: &str = "x-correlation-id";

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub concurrency: usize,
    pub token: Option<String>,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            concurrency: 4,
            token: None,
        }
    }
}

impl ClientOptions {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            timeout: Duration::from_secs_f64(config.timeout_secs),
            retry: RetryPolicy::with_retries(config.retries),
            concurrency: config.concurrency,
            token: config.token.clone(),
        }
    }
}

enum Failure {
    Transient(String),
    Fatal(BackendError),
}

/// JSON-over-HTTP client with bounded in-flight requests and retries.
///
/// Connection failures, timeouts, 408, 429 and 5xx responses are retried
/// with exponential backoff; other 4xx statuses and malformed bodies fail
/// immediately. The in-flight bound covers every request made through this
/// client and its clones.
#[derive(Clone)]
pub struct RemoteClient {
    base_url: String,
    http: Client,
    options: ClientOptions,
    gate: Arc<Gate>,
}

impl RemoteClient {
    pub fn new(base_url: &str, options: ClientOptions) -> Result<Self, BackendError> {
        let http = Client::builder()
            .timeout(options.timeout)
            .build()
            .map_err(|e| BackendError::Validation(format!("http client: {e}")))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            http,
            gate: Arc::new(Gate::new(options.concurrency)),
            options,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn health(&self) -> Result<(), BackendError> {
        let resp: HealthResponse = self.call(HEALTH_PATH, None::<&()>, "health")?;
        if resp.status == "ok" {
            Ok(())
        } else {
            Err(BackendError::Protocol(format!(
                "health status {:?}",
                resp.status
            )))
        }
    }

    pub fn post_json<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
        correlation_id: &str,
    ) -> Result<Resp, BackendError> {
        self.call(path, Some(body), correlation_id)
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: Option<&Req>,
        correlation_id: &str,
    ) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let policy = &self.options.retry;
        let mut rng = rand::rng();
        let mut attempt = 0u32;
        loop {
            let outcome = {
                let _permit = self.gate.acquire();
                self.attempt(&url, body, correlation_id)
            };
            match outcome {
                Ok(resp) => return Ok(resp),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(message)) => {
                    if attempt >= policy.max_retries {
                        return Err(BackendError::Connectivity {
                            attempts: attempt + 1,
                            message,
                        });
                    }
                    let wait = policy.delay(attempt, &mut rng);
                    warn!("{url} [{correlation_id}] attempt {} failed: {message}; retrying in {wait:?}", attempt + 1);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }

    fn attempt<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        url: &str,
        body: Option<&Req>,
        correlation_id: &str,
    ) -> Result<Resp, Failure> {
        let mut builder = match body {
            Some(b) => self.http.post(url).json(b),
            None => self.http.get(url),
        };
        builder = builder.header(CORRELATION_HEADER, correlation_id);
        if let Some(token) = &self.options.token {
            builder = builder.bearer_auth(token);
        }
        let resp = builder.send().map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Transient(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_str(&text)
                .map_err(|e| Failure::Fatal(BackendError::Protocol(format!("{url}: {e}"))));
        }
        if status.is_server_error()
            || status == StatusCode::TOO_MANY_REQUESTS
            || status == StatusCode::REQUEST_TIMEOUT
        {
            return Err(Failure::Transient(format!("status {status}: {}", excerpt(&text))));
        }
        Err(Failure::Fatal(BackendError::Rejected {
            status: status.as_u16(),
            body: describe_error(&text),
        }))
    }
}

fn excerpt(text: &str) -> String {
    const MAX: usize = 512;
    if text.len() <= MAX {
        return text.to_string();
    }
    let mut end = MAX;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &text[..end])
}

/// Error message plus any log excerpt the endpoint attached.
pub fn describe_error(text: &str) -> String {
    match serde_json::from_str::<ErrorBody>(text) {
        Ok(body) if !body.error.is_empty() => match body.log {
            Some(log) => format!("{} (log: {})", body.error, excerpt(&log)),
            None => body.error,
        },
        _ => excerpt(text),
    }
}

pub fn encode_b64(bytes: &[u8]) -> String {
    B64.encode(bytes)
}

pub fn decode_b64(text: &str) -> Result<Vec<u8>, BackendError> {
    B64.decode(text)
        .map_err(|e| BackendError::Protocol(format!("bad base64 payload: {e}")))
}

/// Inpainting over HTTP. Each of the `K` samples is a separate single-sample
/// request with seed `base_seed + i`, so a transient failure retries only
/// that sample. Samples are returned in seed order.
pub struct RemoteBackend {
    client: RemoteClient,
    id: String,
}

impl RemoteBackend {
    pub fn new(client: RemoteClient) -> Self {
        let id = client.base_url().to_string();
        Self { client, id }
    }

    fn fetch_one(
        &self,
        request: &RecoveryRequest<'_>,
        image_b64: &str,
        mask_b64: &str,
        i: usize,
    ) -> Result<(ImageBuffer, String, Duration), BackendError> {
        let seed = request.sample_seed(i);
        let body = InpaintRequest {
            image_png_b64: image_b64.to_string(),
            mask_png_b64: mask_b64.to_string(),
            num_samples: 1,
            base_seed: seed,
            prompt: request.prompt.map(str::to_string),
            steps: request.steps,
            guidance: request.guidance,
            adapter_id: request.adapter_id.map(str::to_string),
        };
        let correlation = format!("{}/{}", request.image_id, seed);
        let start = Instant::now();
        let resp: InpaintResponse = self.client.post_json(INPAINT_PATH, &body, &correlation)?;
        let elapsed = start.elapsed();
        if resp.samples.len() != 1 {
            return Err(BackendError::Protocol(format!(
                "{correlation}: asked for 1 sample, got {}",
                resp.samples.len()
            )));
        }
        let sample = ImageBuffer::decode_png(&decode_b64(&resp.samples[0])?)
            .map_err(|e| BackendError::Protocol(format!("{correlation}: {e}")))?;
        debug!("{correlation} recovered in {elapsed:?}");
        Ok((sample, resp.backend_id, elapsed))
    }
}

impl RecoveryBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn health(&self) -> Result<(), BackendError> {
        self.client.health()
    }

    fn recover(&self, request: &RecoveryRequest<'_>) -> Result<RecoveryResponse, BackendError> {
        request.validate()?;
        let image_b64 = encode_b64(&request.image.encode_png()?);
        let mask_b64 = encode_b64(&request.mask.encode_png()?);
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..request.num_samples)
                .map(|i| {
                    let (image_b64, mask_b64) = (&image_b64, &mask_b64);
                    s.spawn(move || self.fetch_one(request, image_b64, mask_b64, i))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join().unwrap_or_else(|_| {
                        Err(BackendError::Protocol("sample worker panicked".into()))
                    })
                })
                .collect()
        });
        let mut samples = Vec::with_capacity(request.num_samples);
        let mut latency = Vec::with_capacity(request.num_samples);
        let mut backend_id = None;
        for r in results {
            let (sample, id, elapsed) = r?;
            backend_id.get_or_insert(id);
            samples.push(sample);
            latency.push(elapsed);
        }
        let response = RecoveryResponse {
            samples,
            backend_id: backend_id.unwrap_or_else(|| self.id.clone()),
            latency,
        };
        response.check(request)?;
        Ok(response)
    }
}
