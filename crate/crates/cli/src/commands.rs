use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use log::{info, warn};
use mdetect_core::backend::{BackendError, BackendSpec};
use mdetect_core::detector::{run_detection, calibrate_tau, CalibrationResult, DetectError, DEFAULT_TARGET_TPR};
use mdetect_core::eval::{emit_distribution_plot, evaluate_scores, label_scores};
use mdetect_core::manifest::{load_manifest, manifest_dir};
use mdetect_core::masks::{generate_mask, MaskKind, MaskParams, MaskSpec};
use mdetect_core::record::{load_scores, ScoreWriter};
use mdetect_core::theory::{run_experiment, Experiment, ExperimentReport};
use mdetect_core::{ImageBuffer, Label};
use serde::Serialize;

use crate::settings::{resolve, EnvLookup, RunFlags};
use crate::{CliError, CmdResult, ExitStatus};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Sibling file collecting per-image failures of a detect run.
pub fn failures_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".failures.jsonl");
    out.with_file_name(name)
}

#[derive(Serialize)]
struct FailureRecord<'a> {
    id: &'a str,
    error: String,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Score file to write, one JSON record per line.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunFlags,
    /// Threshold; images with delta <= tau are declared fake.
    #[arg(long, conflicts_with = "calibrate_from")]
    pub tau: Option<f64>,
    /// Calibration file written by `calibrate`.
    #[arg(long)]
    pub calibrate_from: Option<PathBuf>,
}

pub fn detect(args: &DetectArgs, config_file: Option<&Path>, env: EnvLookup<'_>) -> CmdResult {
    let mut config = resolve(config_file, env, &args.run)?;
    if let Some(tau) = args.tau {
        config.tau = Some(tau);
    }
    if let Some(path) = &args.calibrate_from {
        let cal: CalibrationResult = read_json(path)?;
        if let Some(m) = cal.metric {
            if m != config.metric {
                return Err(CliError::usage(anyhow!(
                    "{} was calibrated for {m}, run uses {}",
                    path.display(),
                    config.metric
                )));
            }
        }
        config.tau = Some(cal.tau);
    }
    config.validate().map_err(CliError::usage)?;

    let entries = load_manifest(&args.manifest).map_err(CliError::usage)?;
    let base = manifest_dir(&args.manifest);
    let spec = BackendSpec::parse(&config.backend_endpoint).map_err(CliError::usage)?;
    let fake_ids: HashSet<String> = entries
        .iter()
        .filter(|e| e.label == Label::Fake)
        .map(|e| e.id.clone())
        .collect();
    if matches!(spec, BackendSpec::OracleNoise { .. }) {
        warn!("oracle-noise is a test double keyed on manifest labels");
    }
    let backend = spec.build(&config, fake_ids).map_err(CliError::usage)?;
    backend
        .health()
        .map_err(|e| CliError::endpoint(anyhow!(e).context(format!("backend {} is not healthy", backend.id()))))?;
    info!("detect: {} images, backend {}", entries.len(), backend.id());

    let out = File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut writer = ScoreWriter::new(BufWriter::new(out));
    let fail_path = failures_path(&args.out);
    if fail_path.exists() {
        std::fs::remove_file(&fail_path).with_context(|| format!("removing {}", fail_path.display()))?;
    }
    let mut failures: Option<BufWriter<File>> = None;
    let mut write_error: Option<anyhow::Error> = None;
    let mut endpoint_failures = 0usize;

    let summary = run_detection(
        &entries,
        &config,
        backend.as_ref(),
        |e| ImageBuffer::load_png(e.resolve_path(&base)),
        |entry, result| {
            if write_error.is_some() {
                return;
            }
            let outcome = match result {
                Ok(record) => writer.write(&record).map_err(anyhow::Error::from),
                Err(err) => {
                    warn!("{err}");
                    if matches!(
                        err,
                        DetectError::Backend { source: BackendError::Connectivity { .. }, .. }
                    ) {
                        endpoint_failures += 1;
                    }
                    let line = FailureRecord { id: &entry.id, error: err.to_string() };
                    (|| -> anyhow::Result<()> {
                        if failures.is_none() {
                            failures = Some(BufWriter::new(File::create(&fail_path)?));
                        }
                        let w = failures.as_mut().expect("just opened");
                        serde_json::to_writer(&mut *w, &line)?;
                        w.write_all(b"\n")?;
                        Ok(())
                    })()
                }
            };
            if let Err(e) = outcome {
                write_error = Some(e);
            }
        },
    )
    .map_err(CliError::usage)?;
    if let Some(e) = write_error {
        return Err(CliError::usage(e.context("writing results")));
    }
    writer.flush().context("flushing score file")?;
    if let Some(mut f) = failures {
        f.flush().context("flushing failure file")?;
    }

    println!("scored {} failed {}", summary.scored, summary.failed);
    if summary.failed == 0 {
        return Ok(ExitStatus::Success);
    }
    warn!("{} image(s) failed; see {}", summary.failed, fail_path.display());
    if summary.scored == 0 && endpoint_failures > 0 {
        return Ok(ExitStatus::Endpoint);
    }
    Ok(ExitStatus::Partial)
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Score file of a labeled calibration set.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TARGET_TPR)]
    pub target_tpr: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn calibrate(args: &CalibrateArgs) -> CmdResult {
    let records = load_scores(&args.scores)?;
    let manifest = load_manifest(&args.manifest)?;
    let (metric, items) = label_scores(&records, &manifest)?;
    let fakes: Vec<f64> = items.iter().filter(|t| t.2).map(|t| t.1).collect();
    let mut cal = calibrate_tau(&fakes, args.target_tpr)?;
    cal.metric = Some(metric);
    write_json(&args.out, &cal)?;
    println!("tau {} from {} fake scores ({metric})", cal.tau, cal.n_calibration);
    Ok(ExitStatus::Success)
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Report file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional SVG of the two score densities.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

pub fn evaluate(args: &EvaluateArgs) -> CmdResult {
    let records = load_scores(&args.scores)?;
    let manifest = load_manifest(&args.manifest)?;
    let report = evaluate_scores(&records, &manifest)?;
    write_json(&args.out, &report)?;
    if let Some(plot) = &args.plot {
        let (metric, items) = label_scores(&records, &manifest)?;
        let fake: Vec<f64> = items.iter().filter(|t| t.2).map(|t| t.1).collect();
        let real: Vec<f64> = items.iter().filter(|t| !t.2).map(|t| t.1).collect();
        let orient = if metric.orientation() < 0.0 { "-" } else { "" };
        emit_distribution_plot(&fake, &real, &format!("delta = {orient}{metric}"), plot)?;
    }
    println!(
        "auroc {:.4} ap {:.4} fpr95 {:.4} (n_fake {}, n_real {})",
        report.auroc, report.ap, report.fpr95, report.n_fake, report.n_real
    );
    Ok(ExitStatus::Success)
}

fn parse_center(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok((p(x)?, p(y)?))
}

#[derive(Args, Debug)]
pub struct MaskGenArgs {
    #[arg(long)]
    pub kind: MaskKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub width: u32,
    #[arg(long)]
    pub height: u32,
    #[arg(long)]
    pub target_fraction: Option<f64>,
    /// Rect center as fractions, e.g. 0.5,0.5.
    #[arg(long, value_parser = parse_center)]
    pub center: Option<(f64, f64)>,
    /// Rect width / height.
    #[arg(long)]
    pub aspect: Option<f64>,
    /// Random patch side in pixels.
    #[arg(long)]
    pub patch_size: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn mask_gen(args: &MaskGenArgs) -> CmdResult {
    let spec = MaskSpec {
        kind: args.kind,
        seed: args.seed,
        target_fraction: args.target_fraction,
        params: MaskParams {
            center: args.center,
            aspect: args.aspect,
            patch_size: args.patch_size,
        },
    };
    let mask = generate_mask(&spec, args.width, args.height)?;
    mask.save_png(&args.out)?;
    println!("masked fraction {:.6}", mask.masked_fraction());
    Ok(ExitStatus::Success)
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// pinsker, lecam or kbound.
    #[arg(long)]
    pub experiment: Experiment,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instances (pinsker), distribution pairs (lecam) or Monte-Carlo trials (kbound).
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn default_trials(experiment: Experiment) -> usize {
    match experiment {
        Experiment::Pinsker => 1000,
        Experiment::Lecam => 50,
        Experiment::Kbound => 1000,
    }
}

pub fn simulate(args: &SimulateArgs) -> CmdResult {
    let trials = args.trials.unwrap_or_else(|| default_trials(args.experiment));
    let report = run_experiment(args.experiment, trials, args.seed)?;
    write_json(&args.out, &report)?;
    match &report {
        ExperimentReport::Pinsker(r) => println!(
            "pinsker: {} instances, {} chain violations, min slack {:.3e}",
            r.instances, r.chain_violations, r.min_slack
        ),
        ExperimentReport::Lecam(r) => println!(
            "lecam: {} detectors, {} violations, max excess {:.4} (allowance {:.4})",
            r.pairs * r.detectors_per_pair,
            r.violations,
            r.max_excess,
            r.allowance
        ),
        ExperimentReport::Kbound { result, allowed_failure, .. } => println!(
            "kbound: K={} failure ratio {:.4} (allowed {:.2})",
            result.k, result.failure_ratio, allowed_failure
        ),
    }
    Ok(ExitStatus::Success)
}
