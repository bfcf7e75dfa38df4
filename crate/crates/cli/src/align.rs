//! Alignment data collection and adapter fine-tuning.
//!
//! Images are generated one prompt at a time and checkpointed as they
//! arrive: each PNG is written (via rename) before its manifest line is
//! appended, so a listed entry always has a complete image. A rerun with the
//! same arguments skips the listed entries and fetches only the rest.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use anyhow::{anyhow, bail, Context};
use clap::Args;
use log::{info, warn};
use thiserror::Error;
use mdetect_core::backend::protocol::{
    AdapterRecord, FinetuneRequest, GenerateRequest, GenerateResponse, FINETUNE_PATH, GENERATE_PATH,
};
use mdetect_core::backend::{decode_b64, BackendError, ClientOptions, RemoteClient};
use mdetect_core::manifest::{parse_manifest, write_manifest};
use mdetect_core::{ImageBuffer, Label, ManifestEntry};

use crate::commands::write_json;
use crate::settings::{resolve, EnvLookup, RunFlags};
use crate::{CliError, CmdResult, ExitStatus};

/// Collection size beyond which a warning is logged; alignment is meant to
/// work from a small dataset.
pub const MAX_ALIGN_IMAGES: usize = 1000;
pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const ADAPTER_NAME: &str = "adapter.json";
pub const IMAGE_DIR: &str = "images";

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Text file with one prompt per line; prompts are reused cyclically.
    #[arg(long)]
    pub prompts: PathBuf,
    /// Images to collect; defaults to the number of prompts (at most 1000).
    #[arg(long)]
    pub n_images: Option<usize>,
    /// Defaults to the configured backend endpoint.
    #[arg(long)]
    pub generate_endpoint: Option<String>,
    /// Defaults to the generate endpoint.
    #[arg(long)]
    pub finetune_endpoint: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Image i is generated with seed base + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub rank: u32,
    #[arg(long, default_value_t = 1000)]
    pub train_steps: u32,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Clone)]
pub struct AlignmentJob {
    pub prompts: Vec<String>,
    pub n_images: usize,
    pub generate_endpoint: String,
    pub finetune_endpoint: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub rank: u32,
    pub train_steps: u32,
    pub lr: f64,
    pub concurrency: usize,
}

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("invalid alignment job: {0}")]
    Validation(String),
    #[error("collection stopped with {saved} of {total} images saved (rerun to resume): {source}")]
    Collection {
        saved: usize,
        total: usize,
        #[source]
        source: BackendError,
    },
    #[error("fine-tuning failed: {0}")]
    Finetune(#[source] BackendError),
    #[error("{0:#}")]
    Io(anyhow::Error),
}

impl AlignmentJob {
    pub fn image_id(i: usize) -> String {
        format!("align-{i:04}")
    }

    pub fn prompt(&self, i: usize) -> &str {
        &self.prompts[i % self.prompts.len()]
    }

    pub fn image_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join(MANIFEST_NAME)
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        if self.n_images == 0 {
            return Err(AlignError::Validation("n_images must be at least 1".into()));
        }
        if self.prompts.is_empty() {
            return Err(AlignError::Validation("no prompts".into()));
        }
        if self.n_images > MAX_ALIGN_IMAGES {
            warn!(
                "collecting {} images; alignment is intended for fewer than {MAX_ALIGN_IMAGES}",
                self.n_images
            );
        }
        Ok(())
    }
}

pub fn read_prompts(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Entries already checkpointed for this job, keyed by image index.
fn load_checkpoint(job: &AlignmentJob) -> Result<BTreeMap<usize, ManifestEntry>, AlignError> {
    let path = job.manifest_path();
    let mut done = BTreeMap::new();
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => return Err(AlignError::Io(anyhow!(e).context(format!("reading {}", path.display())))),
    };
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        // a crash can leave one torn line; its image is simply fetched again
        let Ok(mut parsed) = parse_manifest(line.as_bytes()) else {
            warn!("{}:{}: unreadable checkpoint line skipped", path.display(), n + 1);
            continue;
        };
        let Some(entry) = parsed.pop() else { continue };
        let index = (0..job.n_images).find(|&i| AlignmentJob::image_id(i) == entry.id);
        let Some(i) = index else {
            return Err(AlignError::Validation(format!(
                "{} lists {:?}, which is not part of this job",
                path.display(),
                entry.id
            )));
        };
        if entry.prompt.as_deref() != Some(job.prompt(i)) {
            return Err(AlignError::Validation(format!(
                "{} holds a different job: {} was generated from another prompt",
                path.display(),
                entry.id
            )));
        }
        if job.out_dir.join(&entry.path).is_file() {
            done.insert(i, entry);
        }
    }
    Ok(done)
}

fn generate(
    client: &RemoteClient,
    job: &AlignmentJob,
    i: usize,
) -> Result<(Vec<u8>, Option<String>), BackendError> {
    let seed = job.image_seed(i);
    let id = AlignmentJob::image_id(i);
    let req = GenerateRequest {
        prompt: job.prompt(i).to_string(),
        seed,
    };
    info!("{id}: seed {seed}, prompt {:?}", req.prompt);
    let resp: GenerateResponse = client.post_json(GENERATE_PATH, &req, &format!("{id}/{seed}"))?;
    let bytes = decode_b64(&resp.image_png_b64)?;
    ImageBuffer::decode_png(&bytes).map_err(|e| BackendError::Protocol(format!("{id}: {e}")))?;
    Ok((bytes, resp.model_id))
}

fn save_image(job: &AlignmentJob, i: usize, bytes: &[u8], model_id: Option<String>) -> anyhow::Result<ManifestEntry> {
    let id = AlignmentJob::image_id(i);
    let rel = format!("{IMAGE_DIR}/{id}.png");
    let final_path = job.out_dir.join(&rel);
    let tmp = job.out_dir.join(format!("{IMAGE_DIR}/.{id}.png.part"));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, &final_path).with_context(|| format!("renaming to {}", final_path.display()))?;
    let mut entry = ManifestEntry::new(id, rel, Label::Fake, model_id.unwrap_or_else(|| "generator".into()));
    entry.prompt = Some(job.prompt(i).to_string());
    let mut line = serde_json::to_string(&entry)?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(job.manifest_path())
        .with_context(|| format!("opening {}", job.manifest_path().display()))?;
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    Ok(entry)
}

/// Fetch every image not yet checkpointed. Returns the full entry set in
/// index order.
pub fn collect(job: &AlignmentJob, client: &RemoteClient) -> Result<Vec<ManifestEntry>, AlignError> {
    job.validate()?;
    fs::create_dir_all(job.out_dir.join(IMAGE_DIR))
        .map_err(|e| AlignError::Io(anyhow!(e).context(format!("creating {}", job.out_dir.display()))))?;
    let mut done = load_checkpoint(job)?;
    let todo: Vec<usize> = (0..job.n_images).filter(|i| !done.contains_key(i)).collect();
    if !done.is_empty() {
        info!("resuming: {} of {} images already collected", done.len(), job.n_images);
    }

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let mut first_error: Option<AlignError> = None;
    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..job.concurrency.clamp(1, todo.len().max(1)) {
            let tx = tx.clone();
            let (next, stop, todo) = (&next, &stop, &todo);
            s.spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    let Some(&i) = todo.get(next.fetch_add(1, Ordering::SeqCst)) else { break };
                    let result = generate(client, job, i);
                    if result.is_err() {
                        stop.store(true, Ordering::SeqCst);
                    }
                    if tx.send((i, result)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        // single writer for images and the checkpoint manifest
        for (i, result) in rx {
            // successes that were already in flight are still checkpointed
            let outcome = match result {
                Ok((bytes, model)) => save_image(job, i, &bytes, model).map_err(AlignError::Io),
                Err(source) => Err(AlignError::Collection {
                    saved: 0,
                    total: job.n_images,
                    source,
                }),
            };
            match outcome {
                Ok(entry) => {
                    done.insert(i, entry);
                }
                Err(e) => {
                    stop.store(true, Ordering::SeqCst);
                    first_error.get_or_insert(e);
                }
            }
        }
    });
    if let Some(mut e) = first_error {
        if let AlignError::Collection { saved, .. } = &mut e {
            *saved = done.len();
        }
        return Err(e);
    }
    let entries: Vec<ManifestEntry> = done.into_values().collect();
    // canonical order once complete
    let tmp = job.out_dir.join(format!(".{MANIFEST_NAME}.part"));
    write_manifest(&tmp, &entries).map_err(|e| AlignError::Io(anyhow!(e)))?;
    fs::rename(&tmp, job.manifest_path()).map_err(|e| AlignError::Io(anyhow!(e)))?;
    Ok(entries)
}

/// Collect, then fine-tune on the collected manifest.
pub fn cmd_align(
    job: &AlignmentJob,
    generate_client: &RemoteClient,
    finetune_client: &RemoteClient,
) -> Result<AdapterRecord, AlignError> {
    let entries = collect(job, generate_client)?;
    let manifest_path = std::path::absolute(job.manifest_path())
        .map_err(|e| AlignError::Io(anyhow!(e)))?;
    info!("fine-tuning on {} images from {}", entries.len(), manifest_path.display());
    let req = FinetuneRequest {
        manifest_path: manifest_path.display().to_string(),
        rank: job.rank,
        steps: job.train_steps,
        lr: job.lr,
    };
    let adapter: AdapterRecord = finetune_client
        .post_json(FINETUNE_PATH, &req, "finetune")
        .map_err(AlignError::Finetune)?;
    write_json(&job.out_dir.join(ADAPTER_NAME), &adapter).map_err(AlignError::Io)?;
    Ok(adapter)
}

fn endpoint_or(flag: &Option<String>, fallback: &str, what: &str) -> anyhow::Result<String> {
    let url = flag.clone().unwrap_or_else(|| fallback.to_string());
    if !(url.starts_with("http://") || url.starts_with("https://")) {
        bail!("{what} endpoint must be an http(s) URL, got {url:?}");
    }
    Ok(url)
}

pub fn run(args: &AlignArgs, config_file: Option<&Path>, env: EnvLookup<'_>) -> CmdResult {
    let config = resolve(config_file, env, &args.run)?;
    let prompts = read_prompts(&args.prompts)?;
    let generate_endpoint = endpoint_or(&args.generate_endpoint, &config.backend_endpoint, "generate")?;
    let finetune_endpoint = endpoint_or(&args.finetune_endpoint, &generate_endpoint, "finetune")?;
    let job = AlignmentJob {
        n_images: args.n_images.unwrap_or(prompts.len().min(MAX_ALIGN_IMAGES)),
        prompts,
        generate_endpoint,
        finetune_endpoint,
        out_dir: args.out_dir.clone(),
        seed: args.seed,
        rank: args.rank,
        train_steps: args.train_steps,
        lr: args.lr,
        concurrency: config.concurrency,
    };
    job.validate().map_err(CliError::usage)?;

    let options = ClientOptions::from_config(&config);
    let gen = RemoteClient::new(&job.generate_endpoint, options.clone()).map_err(CliError::usage)?;
    let tune = RemoteClient::new(&job.finetune_endpoint, options).map_err(CliError::usage)?;
    let mut seen = HashSet::new();
    for client in [&gen, &tune] {
        if seen.insert(client.base_url().to_string()) {
            client.health().map_err(|e| {
                CliError::endpoint(anyhow!(e).context(format!("{} is not healthy", client.base_url())))
            })?;
        }
    }

    match cmd_align(&job, &gen, &tune) {
        Ok(adapter) => {
            println!("{}", adapter.adapter_id);
            Ok(ExitStatus::Success)
        }
        Err(e @ (AlignError::Validation(_) | AlignError::Io(_))) => Err(CliError::usage(e)),
        Err(e) => Err(CliError::endpoint(e)),
    }
}
