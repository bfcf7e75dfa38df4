//! Run configuration layering: flags > `MD_*` environment > JSON file > defaults.

use std::path::Path;

use anyhow::{bail, Context};
use clap::Args;
use log::info;
use mdetect_core::config::{Aggregate, RunConfig};
use mdetect_core::masks::MaskKind;
use mdetect_core::scoring::Region;
use mdetect_core::Metric;

pub const ENV_ENDPOINT: &str = "MD_ENDPOINT";
pub const ENV_TOKEN: &str = "MD_TOKEN";
pub const ENV_CONCURRENCY: &str = "MD_CONCURRENCY";

/// Environment lookup; injectable so precedence can be tested.
pub type EnvLookup<'a> = &'a dyn Fn(&str) -> Option<String>;

pub fn process_env(key: &str) -> Option<String> {
    std::env::var(key).ok().filter(|v| !v.is_empty())
}

/// Flags shared by commands that talk to a backend.
#[derive(Args, Debug, Clone, Default)]
pub struct RunFlags {
    /// Recovery backend: builtin:mean-fill, builtin:oracle-noise?sigma_fake=..&sigma_real=.., or an http(s) URL.
    #[arg(long)]
    pub backend: Option<String>,
    /// Discrepancy metric: psnr, ssim, l1, l2.
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Mask kind: thick, genhalf, rect, random_patch.
    #[arg(long)]
    pub mask: Option<MaskKind>,
    #[arg(long)]
    pub mask_seed: Option<u64>,
    /// Target masked fraction for thick, rect and random_patch masks.
    #[arg(long)]
    pub mask_fraction: Option<f64>,
    /// Recoveries per image.
    #[arg(long)]
    pub k: Option<usize>,
    /// Scoring region: masked or full.
    #[arg(long)]
    pub region: Option<Region>,
    /// Aggregate over the K samples: mean or median.
    #[arg(long)]
    pub aggregate: Option<Aggregate>,
    /// Images (or requests) in flight.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Text prompt for conditioned recovery.
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub steps: Option<u32>,
    #[arg(long)]
    pub guidance: Option<f64>,
    /// Fine-tuned adapter returned by `align`.
    #[arg(long)]
    pub adapter_id: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Retries for transient endpoint failures.
    #[arg(long)]
    pub retries: Option<u32>,
    /// Bearer token for remote endpoints.
    #[arg(long)]
    pub token: Option<String>,
}

pub fn load_config_file(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
}

/// Effective configuration and the layers that contributed to it.
pub fn resolve(
    config_file: Option<&Path>,
    env: EnvLookup<'_>,
    flags: &RunFlags,
) -> anyhow::Result<RunConfig> {
    let mut layers = vec!["defaults"];
    let mut c = match config_file {
        Some(path) => {
            layers.push("file");
            load_config_file(path)?
        }
        None => RunConfig::default(),
    };

    let mut from_env = false;
    if let Some(v) = env(ENV_ENDPOINT) {
        c.backend_endpoint = v;
        from_env = true;
    }
    if let Some(v) = env(ENV_TOKEN) {
        c.token = Some(v);
        from_env = true;
    }
    if let Some(v) = env(ENV_CONCURRENCY) {
        c.concurrency = v
            .trim()
            .parse()
            .with_context(|| format!("{ENV_CONCURRENCY}={v:?} is not a count"))?;
        from_env = true;
    }
    if from_env {
        layers.push("env");
    }

    let before = c.clone();
    let f = flags.clone();
    if let Some(v) = f.backend {
        c.backend_endpoint = v;
    }
    if let Some(v) = f.metric {
        c.metric = v;
    }
    if let Some(v) = f.mask {
        c.mask_kind = v;
    }
    if let Some(v) = f.mask_seed {
        c.mask_seed = v;
    }
    if f.mask_fraction.is_some() {
        c.mask_target_fraction = f.mask_fraction;
    }
    if let Some(v) = f.k {
        c.k = v;
    }
    if f.region.is_some() {
        c.region = f.region;
    }
    if let Some(v) = f.aggregate {
        c.aggregate = v;
    }
    if let Some(v) = f.concurrency {
        c.concurrency = v;
    }
    if f.prompt.is_some() {
        c.prompt = f.prompt;
    }
    if f.steps.is_some() {
        c.steps = f.steps;
    }
    if f.guidance.is_some() {
        c.guidance = f.guidance;
    }
    if f.adapter_id.is_some() {
        c.adapter_id = f.adapter_id;
    }
    if let Some(v) = f.timeout {
        c.timeout_secs = v;
    }
    if let Some(v) = f.retries {
        c.retries = v;
    }
    if f.token.is_some() {
        c.token = f.token;
    }
    if c != before {
        layers.push("flags");
    }

    if let Err(e) = c.validate() {
        bail!(e);
    }
    info!(
        "config ({}): {}",
        layers.join(" < "),
        serde_json::to_string(&c).unwrap_or_default()
    );
    Ok(c)
}
