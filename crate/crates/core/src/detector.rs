//! Corrupt, recover, score, threshold.
//!
//! For an image `x` with id `id`:
//! 1. a mask is generated with seed `derive_seed("mask", mask_seed, id)`;
//! 2. the backend returns `K` recoveries, sample `i` seeded with
//!    `derive_seed("recover", mask_seed, id) + i`;
//! 3. each recovery is composited over `x` and scored against it;
//! 4. raw scores are oriented (`-PSNR`, `-SSIM`, `+L1`, `+L2`) and averaged
//!    into `delta`;
//! 5. `x` is declared fake iff `delta <= tau`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, RecoveryBackend, RecoveryRequest};
use crate::config::{Aggregate, ConfigError, RunConfig};
use crate::image::{composite, ImageBuffer, ImageError, MaskBuffer};
use crate::manifest::{Label, ManifestEntry};
use crate::masks::{generate_mask, MaskError};
use crate::record::{Metric, ScoreRecord};
use crate::rng::derive_seed;
use crate::scoring::{score, ScoringError, ScoringParams};

/// Default fraction of calibration fakes that must be declared fake.
pub const DEFAULT_TARGET_TPR: f64 = 0.95;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{id}: mask generation failed: {source}")]
    Mask {
        id: String,
        #[source]
        source: MaskError,
    },
    #[error("{id}: recovery failed: {source}")]
    Backend {
        id: String,
        #[source]
        source: BackendError,
    },
    #[error("{id}: scoring failed: {source}")]
    Scoring {
        id: String,
        #[source]
        source: ScoringError,
    },
    #[error("{id}: {source}")]
    Image {
        id: String,
        #[source]
        source: ImageError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub delta: f64,
    pub tau: f64,
    pub label_hat: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    pub tau: f64,
    pub n_calibration: usize,
    pub target_tpr: f64,
}

pub fn mask_seed_for(mask_seed: u64, id: &str) -> u64 {
    derive_seed("mask", mask_seed, id)
}

pub fn recovery_seed_for(mask_seed: u64, id: &str) -> u64 {
    derive_seed("recover", mask_seed, id)
}

/// Mask used for image `id` under `config`.
pub fn mask_for(
    id: &str,
    width: u32,
    height: u32,
    config: &RunConfig,
) -> Result<MaskBuffer, DetectError> {
    let spec = config.mask_spec(mask_seed_for(config.mask_seed, id));
    generate_mask(&spec, width, height).map_err(|source| DetectError::Mask {
        id: id.to_string(),
        source,
    })
}

pub fn aggregate(values: &[f64], how: Aggregate) -> f64 {
    match how {
        Aggregate::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Aggregate::Median => {
            let mut v = values.to_vec();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                (v[n / 2 - 1] + v[n / 2]) / 2.0
            }
        }
    }
}

/// Raw per-sample metric values and their oriented aggregate.
pub fn score_samples(
    id: &str,
    original: &ImageBuffer,
    mask: &MaskBuffer,
    samples: &[ImageBuffer],
    metric: Metric,
    params: &ScoringParams,
    how: Aggregate,
) -> Result<(Vec<f64>, f64), DetectError> {
    if samples.is_empty() {
        return Err(DetectError::InvalidArgument(format!("{id}: no samples")));
    }
    let mut raw = Vec::with_capacity(samples.len());
    for sample in samples {
        let merged = composite(original, mask, sample).map_err(|source| DetectError::Image {
            id: id.to_string(),
            source,
        })?;
        let value =
            score(metric, original, &merged, mask, params).map_err(|source| {
                DetectError::Scoring {
                    id: id.to_string(),
                    source,
                }
            })?;
        raw.push(value);
    }
    let oriented: Vec<f64> = raw.iter().map(|&v| metric.orient(v)).collect();
    Ok((raw, aggregate(&oriented, how)))
}

/// Discrepancy record for one image.
pub fn delta_score(
    id: &str,
    image: &ImageBuffer,
    config: &RunConfig,
    backend: &dyn RecoveryBackend,
) -> Result<ScoreRecord, DetectError> {
    config.validate()?;
    let mask = mask_for(id, image.width(), image.height(), config)?;
    let mut request = RecoveryRequest::new(
        id,
        image,
        &mask,
        config.k,
        recovery_seed_for(config.mask_seed, id),
    );
    request.prompt = config.prompt.as_deref();
    request.steps = config.steps;
    request.guidance = config.guidance;
    request.adapter_id = config.adapter_id.as_deref();
    let backend_err = |source| DetectError::Backend {
        id: id.to_string(),
        source,
    };
    let response = backend.recover(&request).map_err(backend_err)?;
    response.check(&request).map_err(backend_err)?;
    let params = config.scoring_params(image.max_value());
    let (per_sample, delta) = score_samples(
        id,
        image,
        &mask,
        &response.samples,
        config.metric,
        &params,
        config.aggregate,
    )?;
    let mut record = ScoreRecord {
        id: id.to_string(),
        metric: config.metric,
        k: per_sample.len(),
        per_sample,
        delta,
        tau: None,
        label_hat: None,
    };
    if let Some(tau) = config.tau {
        apply_tau(&mut record, tau)?;
    }
    Ok(record)
}

pub fn apply_tau(record: &mut ScoreRecord, tau: f64) -> Result<(), DetectError> {
    let verdict = classify(&record.id, record.delta, tau)?;
    record.tau = Some(tau);
    record.label_hat = Some(verdict.label_hat);
    Ok(())
}

/// `max(1, ceil(c * sigma * ln(1/delta_prob) / gap^2))` re-prompts.
pub fn choose_k(sigma: f64, delta_prob: f64, gap: f64, c: f64) -> Result<usize, DetectError> {
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if !positive(sigma) || !positive(gap) || !positive(c) {
        return Err(DetectError::InvalidArgument(format!(
            "sigma={sigma}, gap={gap}, c={c} must be positive"
        )));
    }
    if !(delta_prob > 0.0 && delta_prob < 1.0) {
        return Err(DetectError::InvalidArgument(format!(
            "failure probability {delta_prob} outside (0, 1)"
        )));
    }
    let k = (c * sigma * (1.0 / delta_prob).ln() / (gap * gap)).ceil();
    Ok(if k.is_finite() && k > 1.0 { k as usize } else { 1 })
}

/// Rank `ceil(target * n)` as a 1-based index, immune to `0.95 * 100`
/// landing a hair above 95.
fn quantile_rank(n: usize, target: f64) -> usize {
    let exact = target * n as f64;
    let r = (exact - 1e-9 * exact.max(1.0)).ceil() as usize;
    r.clamp(1, n)
}

/// Smallest observed `tau` such that `delta <= tau` declares at least
/// `target_tpr` of the calibration fakes fake.
pub fn calibrate_tau(fake_deltas: &[f64], target_tpr: f64) -> Result<CalibrationResult, DetectError> {
    if fake_deltas.is_empty() {
        return Err(DetectError::InvalidArgument(
            "calibration needs at least one fake score".into(),
        ));
    }
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(DetectError::InvalidArgument(format!(
            "target TPR {target_tpr} outside (0, 1]"
        )));
    }
    if fake_deltas.iter().any(|d| !d.is_finite()) {
        return Err(DetectError::InvalidArgument(
            "calibration scores must be finite".into(),
        ));
    }
    let mut sorted = fake_deltas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let r = quantile_rank(sorted.len(), target_tpr);
    Ok(CalibrationResult {
        metric: None,
        tau: sorted[r - 1],
        n_calibration: sorted.len(),
        target_tpr,
    })
}

pub fn classify(id: &str, delta: f64, tau: f64) -> Result<Verdict, DetectError> {
    if !delta.is_finite() || !tau.is_finite() {
        return Err(DetectError::InvalidArgument(format!(
            "{id}: delta={delta}, tau={tau} must be finite"
        )));
    }
    Ok(Verdict {
        id: id.to_string(),
        delta,
        tau,
        label_hat: if delta <= tau { Label::Fake } else { Label::Real },
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub scored: usize,
    pub failed: usize,
}

/// Score every entry with up to `config.concurrency` images in flight.
///
/// `load` runs on worker threads. `sink` runs on the calling thread and sees
/// results in manifest order, so output is identical across runs.
pub fn run_detection<L, S>(
    entries: &[ManifestEntry],
    config: &RunConfig,
    backend: &dyn RecoveryBackend,
    load: L,
    mut sink: S,
) -> Result<RunSummary, DetectError>
where
    L: Fn(&ManifestEntry) -> Result<ImageBuffer, ImageError> + Sync,
    S: FnMut(&ManifestEntry, Result<ScoreRecord, DetectError>),
{
    config.validate()?;
    let workers = config.concurrency.min(entries.len()).max(1);
    let next = AtomicUsize::new(0);
    let mut summary = RunSummary::default();
    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, load) = (&next, &load);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(entry) = entries.get(i) else { break };
                let result = load(entry)
                    .map_err(|source| DetectError::Image {
                        id: entry.id.clone(),
                        source,
                    })
                    .and_then(|img| delta_score(&entry.id, &img, config, backend));
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut emit = 0usize;
        for (i, result) in rx {
            pending.insert(i, result);
            while let Some(result) = pending.remove(&emit) {
                match &result {
                    Ok(_) => summary.scored += 1,
                    Err(_) => summary.failed += 1,
                }
                sink(&entries[emit], result);
                emit += 1;
            }
        }
    });
    Ok(summary)
}
