//! Run configuration shared by the detector and the command line.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::masks::{MaskKind, MaskParams, MaskSpec};
use crate::record::Metric;
use crate::scoring::{Region, ScoringParams};

#[derive(Debug, Error, PartialEq)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

/// How the `K` per-sample discrepancies are combined into `delta`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Mean,
    /// Robustness experiments only.
    Median,
}

impl FromStr for Aggregate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Aggregate::Mean),
            "median" => Ok(Aggregate::Median),
            other => Err(format!("unknown aggregate {other:?} (mean, median)")),
        }
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Mean => "mean",
            Aggregate::Median => "median",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mask_kind: MaskKind,
    pub mask_seed: u64,
    pub mask_target_fraction: Option<f64>,
    pub mask_params: MaskParams,
    pub k: usize,
    pub metric: Metric,
    /// `None` picks [`Region::default_for`] the metric.
    pub region: Option<Region>,
    /// `builtin:<name>[?params]` or an `http(s)://` base URL.
    pub backend_endpoint: String,
    pub tau: Option<f64>,
    pub concurrency: usize,
    pub aggregate: Aggregate,
    pub prompt: Option<String>,
    pub steps: Option<u32>,
    pub guidance: Option<f64>,
    pub adapter_id: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    #[serde(skip_serializing)]
    pub token: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mask_kind: MaskKind::Genhalf,
            mask_seed: 0,
            mask_target_fraction: None,
            mask_params: MaskParams::default(),
            k: 3,
            metric: Metric::Psnr,
            region: None,
            backend_endpoint: "builtin:mean-fill".into(),
            tau: None,
            concurrency: 4,
            aggregate: Aggregate::Mean,
            prompt: None,
            steps: None,
            guidance: None,
            adapter_id: None,
            timeout_secs: 120.0,
            retries: 3,
            token: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError("k must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(ConfigError("concurrency must be at least 1".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(ConfigError(format!("timeout {} s", self.timeout_secs)));
        }
        if let Some(tau) = self.tau {
            if !tau.is_finite() {
                return Err(ConfigError("tau must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn effective_region(&self) -> Region {
        self.region.unwrap_or_else(|| Region::default_for(self.metric))
    }

    pub fn scoring_params(&self, max_value: u8) -> ScoringParams {
        ScoringParams::for_max(max_value, self.effective_region())
    }

    /// Mask spec for one image, given its derived seed.
    pub fn mask_spec(&self, seed: u64) -> MaskSpec {
        MaskSpec {
            kind: self.mask_kind,
            seed,
            target_fraction: self.mask_target_fraction,
            params: self.mask_params.clone(),
        }
    }
}
