//! Detection-quality metrics over discrepancy scores.
//!
//! Fake is the positive class and a lower `delta` is more fake-like, so
//! rankings are by ascending `delta`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{calibrate_tau, DetectError, DEFAULT_TARGET_TPR};
use crate::manifest::{Label, ManifestEntry};
use crate::record::{Metric, ScoreRecord};
use crate::rng;

/// Seed of the shuffle that orders tied scores before computing AP.
pub const AP_TIE_SEED: u64 = 0x5EED_AB1E;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} class has no scores")]
    EmptyClass(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("score for id {0:?} has no manifest entry")]
    UnknownId(String),
    #[error("score file mixes metrics {0} and {1}")]
    MixedMetrics(Metric, Metric),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<DetectError> for EvalError {
    fn from(e: DetectError) -> Self {
        EvalError::InvalidArgument(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    pub n_real: usize,
    pub n_fake: usize,
    pub auroc: f64,
    pub ap: f64,
    pub fpr95: f64,
    pub tau_at_tpr95: f64,
}

fn check_classes(fake: &[f64], real: &[f64]) -> Result<(), EvalError> {
    if fake.is_empty() {
        return Err(EvalError::EmptyClass("fake"));
    }
    if real.is_empty() {
        return Err(EvalError::EmptyClass("real"));
    }
    if fake.iter().chain(real).any(|v| v.is_nan()) {
        return Err(EvalError::InvalidArgument("NaN score".into()));
    }
    Ok(())
}

/// Probability that a random fake scores below a random real, ties counted
/// one half (Mann-Whitney). `O((n+m) log(n+m))`.
pub fn auroc(fake: &[f64], real: &[f64]) -> Result<f64, EvalError> {
    check_classes(fake, real)?;
    let mut all: Vec<(f64, bool)> = fake
        .iter()
        .map(|&d| (d, true))
        .chain(real.iter().map(|&d| (d, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_real = real.len() as u128;
    // twice the Mann-Whitney U, kept integral
    let mut twice_u: u128 = 0;
    let mut real_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut f, mut r) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                f += 1;
            } else {
                r += 1;
            }
            j += 1;
        }
        twice_u += 2 * f * (n_real - real_below - r) + f * r;
        real_below += r;
        i = j;
    }
    Ok(twice_u as f64 / (2.0 * fake.len() as f64 * real.len() as f64))
}

/// Non-interpolated average precision over items given in id order.
///
/// Items are shuffled with [`AP_TIE_SEED`] and then stably sorted by
/// ascending score, which fixes the order of tied scores deterministically.
pub fn average_precision_items(items: &[(f64, bool)]) -> Result<f64, EvalError> {
    let n_fake = items.iter().filter(|(_, f)| *f).count();
    if n_fake == 0 {
        return Err(EvalError::EmptyClass("fake"));
    }
    if n_fake == items.len() {
        return Err(EvalError::EmptyClass("real"));
    }
    if items.iter().any(|(v, _)| v.is_nan()) {
        return Err(EvalError::InvalidArgument("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng::seeded(AP_TIE_SEED));
    order.sort_by(|&a, &b| items[a].0.total_cmp(&items[b].0));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if items[idx].1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_fake as f64)
}

/// AP with fakes listed before reals as the id order.
pub fn average_precision(fake: &[f64], real: &[f64]) -> Result<f64, EvalError> {
    check_classes(fake, real)?;
    let items: Vec<(f64, bool)> = fake
        .iter()
        .map(|&d| (d, true))
        .chain(real.iter().map(|&d| (d, false)))
        .collect();
    average_precision_items(&items)
}

/// False-positive rate at the threshold calibrated on the fakes.
pub fn fpr_at_tpr(fake: &[f64], real: &[f64], target_tpr: f64) -> Result<(f64, f64), EvalError> {
    check_classes(fake, real)?;
    let tau = calibrate_tau(fake, target_tpr)?.tau;
    let fp = real.iter().filter(|&&d| d <= tau).count();
    Ok((fp as f64 / real.len() as f64, tau))
}

/// Full report; `items` are `(id, delta, is_fake)` in any order.
pub fn evaluate_items(metric: Metric, items: &[(String, f64, bool)]) -> Result<EvalReport, EvalError> {
    let mut sorted: Vec<&(String, f64, bool)> = items.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let fake: Vec<f64> = sorted.iter().filter(|t| t.2).map(|t| t.1).collect();
    let real: Vec<f64> = sorted.iter().filter(|t| !t.2).map(|t| t.1).collect();
    check_classes(&fake, &real)?;
    let ranked: Vec<(f64, bool)> = sorted.iter().map(|t| (t.1, t.2)).collect();
    let (fpr95, tau) = fpr_at_tpr(&fake, &real, DEFAULT_TARGET_TPR)?;
    Ok(EvalReport {
        metric,
        n_real: real.len(),
        n_fake: fake.len(),
        auroc: auroc(&fake, &real)?,
        ap: average_precision_items(&ranked)?,
        fpr95,
        tau_at_tpr95: tau,
    })
}

/// `(id, delta, is_fake)`.
pub type LabeledScore = (String, f64, bool);

/// Join score records with manifest labels. Manifest entries without a score
/// (failed images) are skipped; scores without an entry are an error.
pub fn label_scores(
    records: &[ScoreRecord],
    manifest: &[ManifestEntry],
) -> Result<(Metric, Vec<LabeledScore>), EvalError> {
    let labels: HashMap<&str, Label> = manifest.iter().map(|e| (e.id.as_str(), e.label)).collect();
    let metric = records
        .first()
        .map(|r| r.metric)
        .ok_or(EvalError::EmptyClass("fake"))?;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if r.metric != metric {
            return Err(EvalError::MixedMetrics(metric, r.metric));
        }
        let label = labels
            .get(r.id.as_str())
            .ok_or_else(|| EvalError::UnknownId(r.id.clone()))?;
        out.push((r.id.clone(), r.delta, *label == Label::Fake));
    }
    Ok((metric, out))
}

pub fn evaluate_scores(
    records: &[ScoreRecord],
    manifest: &[ManifestEntry],
) -> Result<EvalReport, EvalError> {
    let (metric, items) = label_scores(records, manifest)?;
    evaluate_items(metric, &items)
}

fn sample_sd(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    if data.len() < 2 {
        return 0.0;
    }
    let mean = data.iter().sum::<f64>() / n;
    (data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`. Returns 0 for
/// data with no spread.
pub fn silverman_bandwidth(data: &[f64]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sd = sample_sd(data);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => 0.0,
    };
    0.9 * spread * (data.len() as f64).powf(-0.2)
}

/// Gaussian kernel density of `data` evaluated on `grid`.
pub fn gaussian_kde(data: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (data.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&x| {
            norm * data
                .iter()
                .map(|&d| (-0.5 * ((x - d) / bandwidth).powi(2)).exp())
                .sum::<f64>()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurves {
    pub grid: Vec<f64>,
    pub fake: Vec<f64>,
    pub real: Vec<f64>,
    pub bandwidth_fake: f64,
    pub bandwidth_real: f64,
}

impl DensityCurves {
    pub fn mode_fake(&self) -> f64 {
        self.grid[argmax(&self.fake)]
    }

    pub fn mode_real(&self) -> f64 {
        self.grid[argmax(&self.real)]
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

pub const DENSITY_POINTS: usize = 512;

/// Both densities on one shared grid. A class without spread falls back to
/// a bandwidth of 2% of the pooled range (or 1 when everything coincides).
pub fn density_curves(fake: &[f64], real: &[f64], points: usize) -> Result<DensityCurves, EvalError> {
    check_classes(fake, real)?;
    if fake.iter().chain(real).any(|v| !v.is_finite()) {
        return Err(EvalError::InvalidArgument("non-finite score".into()));
    }
    let points = points.max(2);
    let lo = fake.iter().chain(real).copied().fold(f64::INFINITY, f64::min);
    let hi = fake.iter().chain(real).copied().fold(f64::NEG_INFINITY, f64::max);
    let fallback = if hi > lo { 0.02 * (hi - lo) } else { 1.0 };
    let bw = |d: &[f64]| {
        let h = silverman_bandwidth(d);
        if h > 0.0 { h } else { fallback }
    };
    let (bf, br) = (bw(fake), bw(real));
    let pad = 3.0 * bf.max(br);
    let (start, end) = (lo - pad, hi + pad);
    let step = (end - start) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| start + step * i as f64).collect();
    Ok(DensityCurves {
        fake: gaussian_kde(fake, bf, &grid),
        real: gaussian_kde(real, br, &grid),
        grid,
        bandwidth_fake: bf,
        bandwidth_real: br,
    })
}

const FAKE_COLOR: &str = "#d62728";
const REAL_COLOR: &str = "#1f77b4";

/// Static SVG with the two density curves.
pub fn render_svg(curves: &DensityCurves, x_label: &str) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 20.0, 30.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let x0 = curves.grid[0];
    let x1 = *curves.grid.last().unwrap_or(&x0);
    let ymax = curves
        .fake
        .iter()
        .chain(&curves.real)
        .copied()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - y / ymax * ph;
    let polyline = |ys: &[f64], color: &str| {
        let pts: Vec<String> = curves
            .grid
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        )
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>",
        top + ph
    );
    for (x, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{}\" font-size=\"12\" text-anchor=\"{anchor}\">{x:.3}</text>",
            sx(x),
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
        left + pw / 2.0,
        h - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"15\" y=\"{}\" font-size=\"13\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">density</text>",
        top + ph / 2.0,
        top + ph / 2.0
    );
    svg.push_str(&polyline(&curves.fake, FAKE_COLOR));
    svg.push_str(&polyline(&curves.real, REAL_COLOR));
    for (i, (name, color)) in [("fake", FAKE_COLOR), ("real", REAL_COLOR)].iter().enumerate() {
        let y = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            left + pw - 90.0,
            left + pw - 65.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"13\">{name}</text>",
            left + pw - 58.0,
            y + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_distribution_plot(
    fake: &[f64],
    real: &[f64],
    x_label: &str,
    out: &Path,
) -> Result<DensityCurves, EvalError> {
    let curves = density_curves(fake, real, DENSITY_POINTS)?;
    std::fs::write(out, render_svg(&curves, x_label)).map_err(|source| EvalError::Io {
        path: out.display().to_string(),
        source,
    })?;
    Ok(curves)
}
