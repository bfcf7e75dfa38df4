use std::collections::HashSet;
use std::time::Instant;

use rand_distr::{Distribution, Normal};

use super::{BackendError, RecoveryBackend, RecoveryRequest, RecoveryResponse};
use crate::image::ImageBuffer;
use crate::rng;

/// Fills masked pixels with the rounded per-channel mean of the known pixels.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanFillBackend;

impl MeanFillBackend {
    fn fill(request: &RecoveryRequest<'_>) -> Result<ImageBuffer, BackendError> {
        let img = request.image;
        let c = img.channels() as usize;
        let mut sums = vec![0u64; c];
        let mut known = 0u64;
        for (idx, _) in request.mask.bits().iter().enumerate().filter(|(_, &m)| !m) {
            for (k, s) in sums.iter_mut().enumerate() {
                *s += u64::from(img.data()[idx * c + k]);
            }
            known += 1;
        }
        if known == 0 {
            return Err(BackendError::Validation(
                "mean-fill needs at least one known pixel".into(),
            ));
        }
        // round half up in integer arithmetic
        let means: Vec<u8> = sums
            .iter()
            .map(|&s| ((2 * s + known) / (2 * known)) as u8)
            .collect();
        let mut data = img.data().to_vec();
        for (idx, _) in request.mask.bits().iter().enumerate().filter(|(_, &m)| m) {
            data[idx * c..idx * c + c].copy_from_slice(&means);
        }
        Ok(ImageBuffer::with_max_value(
            img.width(),
            img.height(),
            img.channels(),
            data,
            img.max_value(),
        )?)
    }
}

impl RecoveryBackend for MeanFillBackend {
    fn id(&self) -> &str {
        "builtin:mean-fill"
    }

    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn recover(&self, request: &RecoveryRequest<'_>) -> Result<RecoveryResponse, BackendError> {
        request.validate()?;
        let start = Instant::now();
        let filled = Self::fill(request)?;
        let elapsed = start.elapsed();
        Ok(RecoveryResponse {
            samples: vec![filled; request.num_samples],
            backend_id: self.id().to_string(),
            latency: vec![elapsed; request.num_samples],
        })
    }
}

/// Test double with a built-in likelihood gap.
///
/// Each sample is the request image plus i.i.d. `N(0, sigma^2)` noise on
/// every intensity, rounded and clipped to `[0, MAX]`. Ids in the registry
/// get `sigma_fake`, all others `sigma_real > sigma_fake`, so registered
/// images are "recovered" more faithfully. Noise for sample `i` is a pure
/// function of `(base_seed + i, image_id)`.
#[derive(Debug, Clone)]
pub struct OracleNoiseBackend {
    sigma_fake: f64,
    sigma_real: f64,
    fake_ids: HashSet<String>,
}

impl OracleNoiseBackend {
    pub fn new(
        sigma_fake: f64,
        sigma_real: f64,
        fake_ids: HashSet<String>,
    ) -> Result<Self, BackendError> {
        if !(sigma_fake.is_finite() && sigma_real.is_finite()) {
            return Err(BackendError::Validation("sigmas must be finite".into()));
        }
        if !(sigma_real > sigma_fake && sigma_fake >= 0.0) {
            return Err(BackendError::Validation(format!(
                "need sigma_real > sigma_fake >= 0, got sigma_fake={sigma_fake} sigma_real={sigma_real}"
            )));
        }
        Ok(Self {
            sigma_fake,
            sigma_real,
            fake_ids,
        })
    }

    pub fn sigma_for(&self, image_id: &str) -> f64 {
        if self.fake_ids.contains(image_id) {
            self.sigma_fake
        } else {
            self.sigma_real
        }
    }

    fn sample(&self, request: &RecoveryRequest<'_>, i: usize) -> Result<ImageBuffer, BackendError> {
        let img = request.image;
        let sigma = self.sigma_for(request.image_id);
        if sigma == 0.0 {
            return Ok(img.clone());
        }
        let seed = rng::derive_seed("oracle-noise", request.sample_seed(i), request.image_id);
        let mut rng = rng::seeded(seed);
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| BackendError::Validation(format!("noise level {sigma}: {e}")))?;
        let max = f64::from(img.max_value());
        let data = img
            .data()
            .iter()
            .map(|&v| (f64::from(v) + normal.sample(&mut rng)).round().clamp(0.0, max) as u8)
            .collect();
        Ok(ImageBuffer::with_max_value(
            img.width(),
            img.height(),
            img.channels(),
            data,
            img.max_value(),
        )?)
    }
}

impl RecoveryBackend for OracleNoiseBackend {
    fn id(&self) -> &str {
        "builtin:oracle-noise"
    }

    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn recover(&self, request: &RecoveryRequest<'_>) -> Result<RecoveryResponse, BackendError> {
        request.validate()?;
        let mut samples = Vec::with_capacity(request.num_samples);
        let mut latency = Vec::with_capacity(request.num_samples);
        for i in 0..request.num_samples {
            let start = Instant::now();
            samples.push(self.sample(request, i)?);
            latency.push(start.elapsed());
        }
        Ok(RecoveryResponse {
            samples,
            backend_id: self.id().to_string(),
            latency,
        })
    }
}
