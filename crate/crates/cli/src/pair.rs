//! Paired real/fake dataset construction.
//!
//! Each real image is captioned, the caption is sent to a text-to-image
//! endpoint, and the result is stored as the fake half of a pair sharing the
//! real image's id as `pair_id`. Per-image endpoint failures skip that pair.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use anyhow::{anyhow, bail, Context};
use clap::Args;
use log::{info, warn};
use mdetect_core::backend::protocol::{
    CaptionRequest, CaptionResponse, GenerateRequest, GenerateResponse, CAPTION_PATH, GENERATE_PATH,
};
use mdetect_core::backend::{decode_b64, encode_b64, ClientOptions, RemoteClient};
use mdetect_core::manifest::{load_manifest, manifest_dir, write_manifest};
use mdetect_core::rng::derive_seed;
use mdetect_core::{ImageBuffer, Label, ManifestEntry};

use crate::settings::{resolve, EnvLookup, RunFlags};
use crate::{CliError, CmdResult, ExitStatus};

/// Skip ratio above which the whole run counts as failed.
pub const MAX_SKIP_RATIO: f64 = 0.10;
pub const FAKE_DIR: &str = "fakes";

#[derive(Args, Debug)]
pub struct PairArgs {
    /// Manifest of real images.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to the configured backend endpoint.
    #[arg(long)]
    pub caption_endpoint: Option<String>,
    /// Defaults to the caption endpoint.
    #[arg(long)]
    pub generate_endpoint: Option<String>,
    /// Paired manifest to write; fakes go to `fakes/` next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub run: RunFlags,
}

pub fn fake_id(real_id: &str) -> String {
    format!("{real_id}-fake")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub entries: Vec<ManifestEntry>,
    /// `(real id, reason)` for every skipped pair.
    pub skipped: Vec<(String, String)>,
    pub total: usize,
}

impl PairOutcome {
    pub fn skip_ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.skipped.len() as f64 / self.total as f64
        }
    }

    pub fn status(&self) -> ExitStatus {
        if self.skipped.is_empty() {
            ExitStatus::Success
        } else if self.skip_ratio() > MAX_SKIP_RATIO {
            ExitStatus::Endpoint
        } else {
            ExitStatus::Partial
        }
    }
}

pub struct PairJob<'a> {
    pub reals: &'a [ManifestEntry],
    pub input_dir: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub concurrency: usize,
}

fn out_dir(out: &Path) -> PathBuf {
    manifest_dir(out)
}

/// Caption, generator model id and fake path of one finished pair.
type Built = (String, Option<String>, String);

fn build_one(
    job: &PairJob<'_>,
    real: &ManifestEntry,
    captioner: &RemoteClient,
    generator: &RemoteClient,
) -> anyhow::Result<Built> {
    let path = real.resolve_path(&job.input_dir);
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let caption: CaptionResponse = captioner.post_json(
        CAPTION_PATH,
        &CaptionRequest {
            image_png_b64: encode_b64(&bytes),
        },
        &format!("{}/caption", real.id),
    )?;
    let seed = derive_seed("pair", job.seed, &real.id);
    let generated: GenerateResponse = generator.post_json(
        GENERATE_PATH,
        &GenerateRequest {
            prompt: caption.caption.clone(),
            seed,
        },
        &format!("{}/{seed}", fake_id(&real.id)),
    )?;
    let png = decode_b64(&generated.image_png_b64)?;
    ImageBuffer::decode_png(&png).context("generated image")?;
    let rel = format!("{FAKE_DIR}/{}.png", fake_id(&real.id));
    let dest = out_dir(&job.out).join(&rel);
    fs::write(&dest, &png).with_context(|| format!("writing {}", dest.display()))?;
    Ok((caption.caption, generated.model_id, rel))
}

/// Path of a real image as seen from the output manifest.
fn real_path(real: &ManifestEntry, input_dir: &Path, out_dir: &Path) -> anyhow::Result<String> {
    let same = match (fs::canonicalize(input_dir), fs::canonicalize(out_dir)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same || Path::new(&real.path).is_absolute() {
        return Ok(real.path.clone());
    }
    Ok(std::path::absolute(real.resolve_path(input_dir))?
        .display()
        .to_string())
}

pub fn build_pairs(
    job: &PairJob<'_>,
    captioner: &RemoteClient,
    generator: &RemoteClient,
) -> anyhow::Result<PairOutcome> {
    if let Some(bad) = job.reals.iter().find(|e| e.label != Label::Real) {
        bail!("{} is labeled {}; pair-build expects only real images", bad.id, bad.label);
    }
    let dir = out_dir(&job.out);
    fs::create_dir_all(dir.join(FAKE_DIR))
        .with_context(|| format!("creating {}", dir.join(FAKE_DIR).display()))?;

    let mut results: Vec<Option<anyhow::Result<Built>>> =
        (0..job.reals.len()).map(|_| None).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..job.concurrency.clamp(1, job.reals.len().max(1)) {
            let tx = tx.clone();
            let next = &next;
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(real) = job.reals.get(i) else { break };
                if tx.send((i, build_one(job, real, captioner, generator))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, r) in rx {
            results[i] = Some(r);
        }
    });

    let mut entries = Vec::with_capacity(2 * job.reals.len());
    let mut skipped = Vec::new();
    for (real, result) in job.reals.iter().zip(results) {
        match result.unwrap_or_else(|| Err(anyhow!("worker exited early"))) {
            Ok((caption, model_id, rel)) => {
                let mut r = real.clone();
                r.path = real_path(real, &job.input_dir, &dir)?;
                r.prompt = Some(caption.clone());
                r.pair_id = Some(real.id.clone());
                let mut f = ManifestEntry::new(
                    fake_id(&real.id),
                    rel,
                    Label::Fake,
                    model_id.unwrap_or_else(|| "generator".into()),
                );
                f.prompt = Some(caption);
                f.pair_id = Some(real.id.clone());
                entries.push(r);
                entries.push(f);
            }
            Err(e) => {
                warn!("{}: skipped: {e:#}", real.id);
                skipped.push((real.id.clone(), format!("{e:#}")));
            }
        }
    }
    write_manifest(&job.out, &entries)?;
    Ok(PairOutcome {
        entries,
        skipped,
        total: job.reals.len(),
    })
}

pub fn run(args: &PairArgs, config_file: Option<&Path>, env: EnvLookup<'_>) -> CmdResult {
    let config = resolve(config_file, env, &args.run)?;
    let reals = load_manifest(&args.manifest)?;
    if reals.is_empty() {
        write_manifest(&args.out, &[])?;
        println!("pairs 0 skipped 0");
        return Ok(ExitStatus::Success);
    }
    let caption_url = args
        .caption_endpoint
        .clone()
        .unwrap_or_else(|| config.backend_endpoint.clone());
    let generate_url = args.generate_endpoint.clone().unwrap_or_else(|| caption_url.clone());
    for url in [&caption_url, &generate_url] {
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(CliError::usage(anyhow!("endpoint must be an http(s) URL, got {url:?}")));
        }
    }
    let options = ClientOptions::from_config(&config);
    let captioner = RemoteClient::new(&caption_url, options.clone()).map_err(CliError::usage)?;
    let generator = RemoteClient::new(&generate_url, options).map_err(CliError::usage)?;
    let mut seen = HashSet::new();
    for client in [&captioner, &generator] {
        if seen.insert(client.base_url().to_string()) {
            client.health().map_err(|e| {
                CliError::endpoint(anyhow!(e).context(format!("{} is not healthy", client.base_url())))
            })?;
        }
    }
    let job = PairJob {
        reals: &reals,
        input_dir: manifest_dir(&args.manifest),
        out: args.out.clone(),
        seed: args.seed,
        concurrency: config.concurrency,
    };
    let outcome = build_pairs(&job, &captioner, &generator)?;
    info!("wrote {} entries to {}", outcome.entries.len(), args.out.display());
    println!(
        "pairs {} skipped {}",
        outcome.total - outcome.skipped.len(),
        outcome.skipped.len()
    );
    let status = outcome.status();
    if status == ExitStatus::Endpoint {
        return Err(CliError::endpoint(anyhow!(
            "{} of {} pairs skipped (more than {:.0}%)",
            outcome.skipped.len(),
            outcome.total,
            MAX_SKIP_RATIO * 100.0
        )));
    }
    Ok(status)
}
