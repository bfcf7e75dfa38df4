//! Discrepancy metrics between an original image and a recovery.
//!
//! MSE, PSNR, L1 and L2 are averaged over a selected set of samples: every
//! `(pixel, channel)` for [`Region::Full`], or only the masked pixels (all
//! channels) for [`Region::Masked`]. SSIM is the single-window global form:
//! means, population variances and covariance over all selected samples.
//!
//! Sums of integer differences and products are accumulated exactly in
//! 64/128-bit integers and converted to `f64` once, so results do not depend
//! on summation order or platform.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{ImageBuffer, MaskBuffer};
use crate::record::Metric;

pub const DEFAULT_PSNR_CAP: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("masked region is empty")]
    EmptyMask,
    #[error("invalid scoring parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Masked,
    Full,
}

impl Region {
    /// Masked for the pixelwise metrics, full for SSIM.
    pub fn default_for(metric: Metric) -> Region {
        match metric {
            Metric::Ssim => Region::Full,
            _ => Region::Masked,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Masked => "masked",
            Region::Full => "full",
        })
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "masked" => Ok(Region::Masked),
            "full" => Ok(Region::Full),
            other => Err(format!("unknown region {other:?} (masked, full)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub region: Region,
    /// Replaces the infinite PSNR of identical inputs.
    pub psnr_cap: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl ScoringParams {
    /// Standard stabilizers `C1 = (0.01 MAX)^2`, `C2 = (0.03 MAX)^2`.
    pub fn for_max(max_value: u8, region: Region) -> Self {
        let max = f64::from(max_value);
        Self {
            region,
            psnr_cap: DEFAULT_PSNR_CAP,
            ssim_c1: (0.01 * max).powi(2),
            ssim_c2: (0.03 * max).powi(2),
        }
    }

    pub fn with_region(self, region: Region) -> Self {
        Self { region, ..self }
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.psnr_cap) || !ok(self.ssim_c1) || !ok(self.ssim_c2) {
            return Err(ScoringError::InvalidParams(format!(
                "psnr_cap={} c1={} c2={} must be positive",
                self.psnr_cap, self.ssim_c1, self.ssim_c2
            )));
        }
        Ok(())
    }
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self::for_max(u8::MAX, Region::Masked)
    }
}

fn check_pair(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), ScoringError> {
    if !a.same_shape(b) || a.max_value() != b.max_value() {
        return Err(ScoringError::ShapeMismatch(format!(
            "{}x{}x{} (max {}) vs {}x{}x{} (max {})",
            a.width(),
            a.height(),
            a.channels(),
            a.max_value(),
            b.width(),
            b.height(),
            b.channels(),
            b.max_value()
        )));
    }
    Ok(())
}

/// Calls `f(x, y)` for every selected sample pair and returns the count.
fn for_each_selected(
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: &MaskBuffer,
    region: Region,
    mut f: impl FnMut(u8, u8),
) -> Result<u64, ScoringError> {
    check_pair(a, b)?;
    match region {
        Region::Full => {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                f(x, y);
            }
            Ok(a.data().len() as u64)
        }
        Region::Masked => {
            a.check_mask(mask)
                .map_err(|e| ScoringError::ShapeMismatch(e.to_string()))?;
            let c = a.channels() as usize;
            let mut n = 0u64;
            for (idx, _) in mask.bits().iter().enumerate().filter(|(_, &m)| m) {
                for k in 0..c {
                    f(a.data()[idx * c + k], b.data()[idx * c + k]);
                }
                n += c as u64;
            }
            if n == 0 {
                return Err(ScoringError::EmptyMask);
            }
            Ok(n)
        }
    }
}

pub fn mse(
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: &MaskBuffer,
    params: &ScoringParams,
) -> Result<f64, ScoringError> {
    let mut sum = 0u64;
    let n = for_each_selected(a, b, mask, params.region, |x, y| {
        let d = u64::from(x.abs_diff(y));
        sum += d * d;
    })?;
    Ok(sum as f64 / n as f64)
}

/// `min(10 log10(MAX^2 / mse), cap)`, with `mse = 0` mapping to `cap`.
pub fn psnr_from_mse(mse: f64, max_value: u8, cap: f64) -> f64 {
    if mse <= 0.0 {
        return cap;
    }
    let max = f64::from(max_value);
    (10.0 * (max * max / mse).log10()).min(cap)
}

pub fn psnr(
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: &MaskBuffer,
    params: &ScoringParams,
) -> Result<f64, ScoringError> {
    params.validate()?;
    let m = mse(a, b, mask, params)?;
    Ok(psnr_from_mse(m, a.max_value(), params.psnr_cap))
}

pub fn l1(
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: &MaskBuffer,
    params: &ScoringParams,
) -> Result<f64, ScoringError> {
    let mut sum = 0u64;
    let n = for_each_selected(a, b, mask, params.region, |x, y| {
        sum += u64::from(x.abs_diff(y));
    })?;
    Ok(sum as f64 / n as f64)
}

/// Mean squared difference; identical to [`mse`].
pub fn l2(
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: &MaskBuffer,
    params: &ScoringParams,
) -> Result<f64, ScoringError> {
    mse(a, b, mask, params)
}

#[derive(Default)]
struct Moments {
    n: u64,
    sa: u64,
    sb: u64,
    saa: u64,
    sbb: u64,
    sab: u64,
}

impl Moments {
    fn push(&mut self, x: u8, y: u8) {
        let (x, y) = (u64::from(x), u64::from(y));
        self.sa += x;
        self.sb += y;
        self.saa += x * x;
        self.sbb += y * y;
        self.sab += x * y;
    }

    fn ssim(&self, c1: f64, c2: f64) -> f64 {
        let n = i128::from(self.n);
        let nn = (n * n) as f64;
        let (sa, sb) = (i128::from(self.sa), i128::from(self.sb));
        let mu_a = self.sa as f64 / self.n as f64;
        let mu_b = self.sb as f64 / self.n as f64;
        let var_a = (n * i128::from(self.saa) - sa * sa) as f64 / nn;
        let var_b = (n * i128::from(self.sbb) - sb * sb) as f64 / nn;
        let cov = (n * i128::from(self.sab) - sa * sb) as f64 / nn;
        ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
            / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    }
}

/// Global SSIM over every pixel and channel of the two images.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, params: &ScoringParams) -> Result<f64, ScoringError> {
    params.validate()?;
    check_pair(a, b)?;
    let mut m = Moments::default();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        m.push(x, y);
    }
    m.n = a.data().len() as u64;
    Ok(m.ssim(params.ssim_c1, params.ssim_c2))
}

/// Global SSIM with statistics restricted to `params.region`.
pub fn ssim_region(
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: &MaskBuffer,
    params: &ScoringParams,
) -> Result<f64, ScoringError> {
    params.validate()?;
    let mut m = Moments::default();
    let n = for_each_selected(a, b, mask, params.region, |x, y| m.push(x, y))?;
    m.n = n;
    Ok(m.ssim(params.ssim_c1, params.ssim_c2))
}

/// Raw (unoriented) value of `metric`.
pub fn score(
    metric: Metric,
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: &MaskBuffer,
    params: &ScoringParams,
) -> Result<f64, ScoringError> {
    match metric {
        Metric::Psnr => psnr(a, b, mask, params),
        Metric::Ssim => ssim_region(a, b, mask, params),
        Metric::L1 => l1(a, b, mask, params),
        Metric::L2 => l2(a, b, mask, params),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn gray(w: u32, h: u32, data: Vec<u8>) -> ImageBuffer {
        ImageBuffer::new(w, h, 1, data).unwrap()
    }

    fn full() -> ScoringParams {
        ScoringParams::default().with_region(Region::Full)
    }

    fn random_image(rng: &mut impl Rng, w: u32, h: u32, c: u8) -> ImageBuffer {
        let data = (0..w * h * c as u32).map(|_| rng.random()).collect();
        ImageBuffer::new(w, h, c, data).unwrap()
    }

    // Straight transcription of the global SSIM formula in f64, two-pass.
    fn ssim_oracle(a: &[u8], b: &[u8], c1: f64, c2: f64) -> f64 {
        let n = a.len() as f64;
        let mu_a = a.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mu_b = b.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mut va = 0.0;
        let mut vb = 0.0;
        let mut cov = 0.0;
        for i in 0..a.len() {
            let da = a[i] as f64 - mu_a;
            let db = b[i] as f64 - mu_b;
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
        va /= n;
        vb /= n;
        cov /= n;
        ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
            / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2))
    }

    #[test]
    fn identical_images_score_zero_and_cap() {
        let a = gray(4, 4, (0..16).map(|v| v * 10).collect());
        let m = MaskBuffer::ones(4, 4).unwrap();
        let p = ScoringParams::default();
        assert_eq!(mse(&a, &a, &m, &p).unwrap(), 0.0);
        assert_eq!(l1(&a, &a, &m, &p).unwrap(), 0.0);
        assert_eq!(l2(&a, &a, &m, &p).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a, &m, &p).unwrap(), 100.0);
        assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_pixel_full_scale_error() {
        let a = gray(2, 1, vec![0, 7]);
        let b = gray(2, 1, vec![255, 7]);
        let m = MaskBuffer::new(2, 1, vec![true, false]).unwrap();
        let p = ScoringParams::default();
        assert_eq!(mse(&a, &b, &m, &p).unwrap(), 65025.0);
        assert_eq!(psnr(&a, &b, &m, &p).unwrap(), 0.0);
    }

    #[test]
    fn constant_difference() {
        let a = ImageBuffer::filled(5, 3, 3, 10).unwrap();
        let b = ImageBuffer::filled(5, 3, 3, 12).unwrap();
        let m = MaskBuffer::zeros(5, 3).unwrap();
        assert_eq!(mse(&a, &b, &m, &full()).unwrap(), 4.0);
        let expected = 10.0 * (65025.0f64 / 4.0).log10();
        assert!((psnr(&a, &b, &m, &full()).unwrap() - 42.1103).abs() < 1e-4);
        assert!((psnr(&a, &b, &m, &full()).unwrap() - expected).abs() < 1e-12);
        let c = ImageBuffer::filled(5, 3, 3, 13).unwrap();
        assert_eq!(l2(&a, &c, &m, &full()).unwrap(), 9.0);
        assert_eq!(l1(&a, &c, &m, &full()).unwrap(), 3.0);
    }

    #[test]
    fn two_masked_pixels_l1() {
        let a = gray(3, 1, vec![0, 10, 99]);
        let b = gray(3, 1, vec![5, 5, 0]);
        let m = MaskBuffer::new(3, 1, vec![true, true, false]).unwrap();
        assert_eq!(l1(&a, &b, &m, &ScoringParams::default()).unwrap(), 5.0);
    }

    #[test]
    fn ssim_zero_variance_closed_form() {
        let a = gray(4, 4, vec![0; 16]);
        let b = gray(4, 4, vec![255; 16]);
        let p = ScoringParams::default();
        assert!((p.ssim_c1 - 6.5025).abs() < 1e-12);
        assert!((p.ssim_c2 - 58.5225).abs() < 1e-12);
        let expected = 6.5025 / (65025.0 + 6.5025);
        let got = ssim(&a, &b, &p).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 9.9990e-5).abs() < 1e-8);
    }

    #[test]
    fn ssim_matches_formula_transcription() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = random_image(&mut rng, 8, 8, 1);
            let b = random_image(&mut rng, 8, 8, 1);
            let p = ScoringParams::default();
            let want = ssim_oracle(a.data(), b.data(), p.ssim_c1, p.ssim_c2);
            assert!((ssim(&a, &b, &p).unwrap() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn pixelwise_metrics_match_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for c in [1u8, 3] {
            let a = random_image(&mut rng, 16, 16, c);
            let b = random_image(&mut rng, 16, 16, c);
            let bits: Vec<bool> = (0..256).map(|_| rng.random()).collect();
            let m = MaskBuffer::new(16, 16, bits).unwrap();
            for region in [Region::Full, Region::Masked] {
                let (mut abs, mut sq, mut n) = (0.0f64, 0.0f64, 0.0f64);
                for y in 0..16u32 {
                    for x in 0..16u32 {
                        if region == Region::Masked && !m.get(x, y) {
                            continue;
                        }
                        for k in 0..c as usize {
                            let i = ((y * 16 + x) as usize) * c as usize + k;
                            let d = a.data()[i] as f64 - b.data()[i] as f64;
                            abs += d.abs();
                            sq += d * d;
                            n += 1.0;
                        }
                    }
                }
                let p = ScoringParams::default().with_region(region);
                assert!((l1(&a, &b, &m, &p).unwrap() - abs / n).abs() < 1e-12);
                assert!((l2(&a, &b, &m, &p).unwrap() - sq / n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        let a = gray(2, 2, vec![0; 4]);
        let b = gray(2, 1, vec![0; 2]);
        let m = MaskBuffer::zeros(2, 2).unwrap();
        let p = ScoringParams::default();
        assert!(matches!(mse(&a, &b, &m, &p), Err(ScoringError::ShapeMismatch(_))));
        assert!(matches!(ssim(&a, &b, &p), Err(ScoringError::ShapeMismatch(_))));
        assert_eq!(mse(&a, &a, &m, &p), Err(ScoringError::EmptyMask));
        assert_eq!(psnr(&a, &a, &m, &p), Err(ScoringError::EmptyMask));
        let bad = ScoringParams { psnr_cap: 0.0, ..p };
        assert!(matches!(psnr(&a, &a, &MaskBuffer::ones(2, 2).unwrap(), &bad), Err(ScoringError::InvalidParams(_))));
    }

    #[test]
    fn psnr_strictly_decreasing_in_mse() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(1e-6..65025.0);
            let y: f64 = rng.random_range(1e-6..65025.0);
            if x == y {
                continue;
            }
            let (lo, hi) = if x < y { (x, y) } else { (y, x) };
            assert!(psnr_from_mse(lo, 255, 1e9) > psnr_from_mse(hi, 255, 1e9));
        }
    }

    fn pair() -> impl Strategy<Value = (ImageBuffer, ImageBuffer, MaskBuffer)> {
        (1u32..10, 1u32..10, prop_oneof![Just(1u8), Just(3u8)]).prop_flat_map(|(w, h, c)| {
            let len = (w * h * c as u32) as usize;
            (
                proptest::collection::vec(any::<u8>(), len),
                proptest::collection::vec(any::<u8>(), len),
                proptest::collection::vec(any::<bool>(), (w * h) as usize),
            )
                .prop_map(move |(a, b, mut m)| {
                    m[0] = true;
                    (
                        ImageBuffer::new(w, h, c, a).unwrap(),
                        ImageBuffer::new(w, h, c, b).unwrap(),
                        MaskBuffer::new(w, h, m).unwrap(),
                    )
                })
        })
    }

    /// Masked samples gathered into a 1-row image.
    fn gather(img: &ImageBuffer, m: &MaskBuffer) -> ImageBuffer {
        let mut data = Vec::new();
        for (idx, _) in m.bits().iter().enumerate().filter(|(_, &b)| b) {
            data.extend_from_slice(img.pixel(idx));
        }
        let n = m.masked_count() as u32;
        ImageBuffer::new(n, 1, img.channels(), data).unwrap()
    }

    proptest! {
        #[test]
        fn symmetry_and_ranges((a, b, m) in pair()) {
            let p = ScoringParams::default();
            let f = full();
            prop_assert_eq!(l1(&a, &b, &m, &p).unwrap(), l1(&b, &a, &m, &p).unwrap());
            prop_assert_eq!(l2(&a, &b, &m, &p).unwrap(), l2(&b, &a, &m, &p).unwrap());
            prop_assert_eq!(ssim(&a, &b, &p).unwrap(), ssim(&b, &a, &p).unwrap());
            let s = ssim(&a, &b, &p).unwrap();
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
            prop_assert!(l1(&a, &b, &m, &f).unwrap() <= 255.0);
            prop_assert!(l2(&a, &b, &m, &f).unwrap() <= 65025.0);
            let ps = psnr(&a, &b, &m, &p).unwrap();
            prop_assert!((0.0..=p.psnr_cap).contains(&ps));
        }

        #[test]
        fn masked_region_equals_full_on_gathered((a, b, m) in pair()) {
            let p = ScoringParams::default();
            let (ga, gb) = (gather(&a, &m), gather(&b, &m));
            let gm = MaskBuffer::zeros(ga.width(), 1).unwrap();
            for metric in [Metric::Psnr, Metric::L1, Metric::L2] {
                let masked = score(metric, &a, &b, &m, &p).unwrap();
                let gathered = score(metric, &ga, &gb, &gm, &full()).unwrap();
                prop_assert_eq!(masked, gathered);
            }
            let composite = crate::image::composite(&a, &m, &b).unwrap();
            prop_assert_eq!(
                score(Metric::L2, &a, &composite, &m, &p).unwrap(),
                score(Metric::L2, &a, &b, &m, &p).unwrap()
            );
        }
    }
}
