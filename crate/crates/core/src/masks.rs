//! Corruption masks.
//!
//! Two geometries are used for detection ablations:
//! - `genhalf`: the right half of the columns, `ceil(w/2) .. w-1`.
//! - `thick`: a seeded random walk of thick brush strokes covering between
//!   10% and 45% of the image, stroke width at least 5% of `min(w, h)`.
//!
//! `rect` (a centered rectangle) and `random_patch` (disjoint grid-aligned
//! squares) are extra kinds for ablation plumbing.
//!
//! All masks are a pure function of `(spec, width, height)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::MaskBuffer;
use crate::rng;

pub const MIN_DIMENSION: u32 = 8;
pub const THICK_MIN_FRACTION: f64 = 0.10;
pub const THICK_MAX_FRACTION: f64 = 0.45;
/// Stroke width as a fraction of `min(w, h)`.
pub const THICK_MIN_STROKE: f64 = 0.05;
const THICK_MAX_STROKE: f64 = 0.12;
const THICK_SEGMENT_BUDGET: usize = 20_000;
/// Allowed deviation from `target_fraction` for `rect` and `random_patch`.
pub const FRACTION_TOLERANCE: f64 = 0.05;
const DEFAULT_TARGET: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("mask dimensions {width}x{height} below minimum {MIN_DIMENSION}x{MIN_DIMENSION}")]
    Degenerate { width: u32, height: u32 },
    #[error("invalid mask parameter: {0}")]
    InvalidParam(String),
    #[error("target fraction {target} unreachable: {reason}")]
    Unreachable { target: f64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Thick,
    Genhalf,
    Rect,
    RandomPatch,
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskKind::Thick => "thick",
            MaskKind::Genhalf => "genhalf",
            MaskKind::Rect => "rect",
            MaskKind::RandomPatch => "random_patch",
        })
    }
}

impl FromStr for MaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "thick" => Ok(MaskKind::Thick),
            "genhalf" => Ok(MaskKind::Genhalf),
            "rect" => Ok(MaskKind::Rect),
            "random_patch" | "random-patch" => Ok(MaskKind::RandomPatch),
            other => Err(format!(
                "unknown mask kind {other:?} (thick, genhalf, rect, random_patch)"
            )),
        }
    }
}

/// Kind-specific geometry. Unused fields are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    /// Rect center as fractions of width and height; default `(0.5, 0.5)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<(f64, f64)>,
    /// Rect width / height; default keeps the image aspect ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspect: Option<f64>,
    /// Side of each random patch in pixels; default `max(1, min(w, h) / 8)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_size: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub seed: u64,
    /// Requested masked fraction. For `thick` it is clamped into
    /// `[0.10, 0.45]`; when absent a target is drawn from the seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_fraction: Option<f64>,
    #[serde(default)]
    pub params: MaskParams,
}

impl MaskSpec {
    pub fn new(kind: MaskKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            target_fraction: None,
            params: MaskParams::default(),
        }
    }

    pub fn with_target(mut self, fraction: f64) -> Self {
        self.target_fraction = Some(fraction);
        self
    }
}

pub fn masked_fraction(mask: &MaskBuffer) -> f64 {
    mask.masked_fraction()
}

pub fn generate_mask(spec: &MaskSpec, width: u32, height: u32) -> Result<MaskBuffer, MaskError> {
    if width < MIN_DIMENSION || height < MIN_DIMENSION {
        return Err(MaskError::Degenerate { width, height });
    }
    if let Some(t) = spec.target_fraction {
        if !(t > 0.0 && t < 1.0) {
            return Err(MaskError::InvalidParam(format!(
                "target_fraction {t} outside (0, 1)"
            )));
        }
    }
    let bits = match spec.kind {
        MaskKind::Genhalf => genhalf(width, height),
        MaskKind::Thick => thick(spec, width, height)?,
        MaskKind::Rect => rect(spec, width, height)?,
        MaskKind::RandomPatch => random_patch(spec, width, height)?,
    };
    let mask = MaskBuffer::new(width, height, bits)
        .map_err(|e| MaskError::InvalidParam(e.to_string()))?;
    let n = mask.masked_count();
    debug_assert!(n > 0 && n < width as usize * height as usize);
    Ok(mask)
}

fn genhalf(width: u32, height: u32) -> Vec<bool> {
    let first = width.div_ceil(2);
    (0..height)
        .flat_map(|_| (0..width).map(move |x| x >= first))
        .collect()
}

struct Canvas {
    width: i64,
    height: i64,
    bits: Vec<bool>,
    count: usize,
}

impl Canvas {
    fn new(width: u32, height: u32) -> Self {
        Self {
            width: width as i64,
            height: height as i64,
            bits: vec![false; width as usize * height as usize],
            count: 0,
        }
    }

    /// Indices a brush segment would newly set, without setting them.
    fn segment_pixels(&self, from: (f64, f64), to: (f64, f64), diameter: f64) -> Vec<usize> {
        let radius = diameter / 2.0;
        let reach = radius.ceil() as i64;
        let (dx, dy) = (to.0 - from.0, to.1 - from.1);
        let steps = ((dx.hypot(dy)) * 2.0).ceil().max(1.0) as usize;
        let mut hit = Vec::new();
        let mut local = std::collections::HashSet::new();
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let (cx, cy) = (from.0 + t * dx, from.1 + t * dy);
            let (px, py) = (cx.floor() as i64, cy.floor() as i64);
            for oy in -reach..=reach {
                for ox in -reach..=reach {
                    let (x, y) = (px + ox, py + oy);
                    if x < 0 || y < 0 || x >= self.width || y >= self.height {
                        continue;
                    }
                    // distance between pixel centers
                    let ddx = (x as f64 + 0.5) - (px as f64 + 0.5);
                    let ddy = (y as f64 + 0.5) - (py as f64 + 0.5);
                    if ddx * ddx + ddy * ddy > radius * radius {
                        continue;
                    }
                    let idx = (y * self.width + x) as usize;
                    if !self.bits[idx] && local.insert(idx) {
                        hit.push(idx);
                    }
                }
            }
        }
        hit
    }

    fn commit(&mut self, pixels: &[usize]) {
        for &idx in pixels {
            self.bits[idx] = true;
        }
        self.count += pixels.len();
    }
}

fn thick(spec: &MaskSpec, width: u32, height: u32) -> Result<Vec<bool>, MaskError> {
    let mut rng = rng::stream(spec.seed, 1);
    let total = width as usize * height as usize;
    let min_dim = width.min(height) as f64;
    let brush_min = (THICK_MIN_STROKE * min_dim).ceil().max(1.0);
    let brush_max = (THICK_MAX_STROKE * min_dim).round().max(brush_min);
    let target = match spec.target_fraction {
        Some(t) => t.clamp(THICK_MIN_FRACTION, THICK_MAX_FRACTION),
        None => rng.random_range(0.15..0.40),
    };
    let cap = (THICK_MAX_FRACTION * total as f64).floor() as usize;
    let goal = (target * total as f64).ceil() as usize;

    let mut canvas = Canvas::new(width, height);
    let mut budget = THICK_SEGMENT_BUDGET;
    'strokes: while canvas.count < goal && budget > 0 {
        let diameter = if brush_max > brush_min {
            rng.random_range(brush_min..=brush_max).round()
        } else {
            brush_min
        };
        let mut pos = (
            rng.random_range(0.0..width as f64),
            rng.random_range(0.0..height as f64),
        );
        let mut angle = rng.random_range(0.0..2.0 * PI);
        let vertices = rng.random_range(1..=8);
        for _ in 0..vertices {
            budget = budget.saturating_sub(1);
            if budget == 0 {
                break 'strokes;
            }
            angle += rng.random_range(-PI / 3.0..PI / 3.0);
            let length = rng.random_range(0.05..0.25) * min_dim;
            let next = (
                (pos.0 + length * angle.cos()).clamp(0.0, width as f64 - 1.0),
                (pos.1 + length * angle.sin()).clamp(0.0, height as f64 - 1.0),
            );
            let pixels = canvas.segment_pixels(pos, next, diameter);
            if canvas.count + pixels.len() > cap {
                continue 'strokes;
            }
            canvas.commit(&pixels);
            pos = next;
            if canvas.count >= goal {
                break 'strokes;
            }
        }
    }
    let fraction = canvas.count as f64 / total as f64;
    if fraction < THICK_MIN_FRACTION {
        return Err(MaskError::Unreachable {
            target,
            reason: format!("strokes covered only {fraction:.3} of the image"),
        });
    }
    Ok(canvas.bits)
}

fn rect(spec: &MaskSpec, width: u32, height: u32) -> Result<Vec<bool>, MaskError> {
    let target = spec.target_fraction.unwrap_or(DEFAULT_TARGET);
    let (w, h) = (width as f64, height as f64);
    let aspect = spec.params.aspect.unwrap_or(w / h);
    if !(aspect.is_finite() && aspect > 0.0) {
        return Err(MaskError::InvalidParam(format!("aspect {aspect}")));
    }
    let area = target * w * h;
    let rw = ((area * aspect).sqrt().round() as u32).min(width);
    let rh = ((area / aspect).sqrt().round() as u32).min(height);
    let achieved = (rw as f64 * rh as f64) / (w * h);
    if rw == 0 || rh == 0 || (rw == width && rh == height) {
        return Err(MaskError::Unreachable {
            target,
            reason: format!("rectangle {rw}x{rh} in {width}x{height}"),
        });
    }
    if (achieved - target).abs() > FRACTION_TOLERANCE {
        return Err(MaskError::Unreachable {
            target,
            reason: format!("aspect {aspect} caps the rectangle at fraction {achieved:.3}"),
        });
    }
    let (cx, cy) = spec.params.center.unwrap_or((0.5, 0.5));
    if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
        return Err(MaskError::InvalidParam(format!("center ({cx}, {cy})")));
    }
    let x0 = ((cx * w - rw as f64 / 2.0).round().max(0.0) as u32).min(width - rw);
    let y0 = ((cy * h - rh as f64 / 2.0).round().max(0.0) as u32).min(height - rh);
    Ok((0..height)
        .flat_map(|y| {
            (0..width).map(move |x| x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh)
        })
        .collect())
}

fn random_patch(spec: &MaskSpec, width: u32, height: u32) -> Result<Vec<bool>, MaskError> {
    let target = spec.target_fraction.unwrap_or(DEFAULT_TARGET);
    let patch = spec
        .params
        .patch_size
        .unwrap_or_else(|| (width.min(height) / 8).max(1));
    if patch == 0 || patch > width.min(height) {
        return Err(MaskError::InvalidParam(format!("patch_size {patch}")));
    }
    let (nx, ny) = (width / patch, height / patch);
    let cells = nx as usize * ny as usize;
    let total = width as f64 * height as f64;
    let cell_area = (patch * patch) as f64;
    let n = (target * total / cell_area).round() as usize;
    let achieved = n as f64 * cell_area / total;
    if n == 0 || n > cells || achieved >= 1.0 || (achieved - target).abs() > FRACTION_TOLERANCE {
        return Err(MaskError::Unreachable {
            target,
            reason: format!("{n} patches of {patch}px among {cells} cells give {achieved:.3}"),
        });
    }
    let mut rng = rng::stream(spec.seed, 2);
    let chosen = rand::seq::index::sample(&mut rng, cells, n);
    let mut bits = vec![false; width as usize * height as usize];
    for cell in chosen.iter() {
        let (gx, gy) = ((cell % nx as usize) as u32, (cell / nx as usize) as u32);
        for y in gy * patch..(gy + 1) * patch {
            for x in gx * patch..(gx + 1) * patch {
                bits[y as usize * width as usize + x as usize] = true;
            }
        }
    }
    Ok(bits)
}
