//! Black-box detection of model-generated images by corrupt-and-recover.
//!
//! An image is split by a binary mask into a known part and a masked part.
//! A generative model (reached through a [`backend::RecoveryBackend`]) fills
//! the masked part `K` times; each recovery is composited over the original
//! and scored against it. The oriented mean discrepancy `delta` is compared
//! to a threshold `tau`: images the model reproduces well (`delta <= tau`)
//! are declared fake.
//!
//! Modules:
//! - [`image`]: raster and mask buffers, PNG I/O, compositing.
//! - [`manifest`]: line-delimited dataset catalogs.
//! - [`record`]: score records and the score file format.
//! - [`config`]: run configuration.
//! - [`masks`]: deterministic corruption masks.
//! - [`scoring`]: PSNR, SSIM, L1 and L2 discrepancies.
//! - [`backend`]: recovery backends (builtin and HTTP).
//! - [`detector`]: the scoring pipeline, `K` selection and threshold calibration.
//! - [`eval`]: AUROC, AP, FPR at a target TPR, score-density plots.
//! - [`theory`]: discrete-distribution laboratory for the likelihood-gap analysis.

pub mod backend;
pub mod config;
pub mod detector;
pub mod eval;
pub mod image;
pub mod manifest;
pub mod masks;
pub mod record;
pub mod rng;
pub mod scoring;
pub mod theory;

pub use crate::image::{composite, ImageBuffer, ImageError, MaskBuffer};
pub use crate::manifest::{Label, ManifestEntry, ManifestError};
pub use crate::record::{Metric, ScoreRecord};
