mod common;

use common::*;
use mdetect_core::detector::CalibrationResult;
use mdetect_core::eval::{evaluate_scores, EvalReport};
use mdetect_core::manifest::{load_manifest, write_manifest};
use mdetect_core::record::load_scores;
use mdetect_core::{ImageBuffer, Label, ManifestEntry, MaskBuffer, Metric};

const ORACLE: &str = "builtin:oracle-noise?sigma_fake=2&sigma_real=8";

#[test]
fn detect_mean_fill_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture_set(dir.path(), 1, 1);
    let out = dir.path().join("scores.jsonl");
    let o = mdetect(&[
        "detect",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--backend",
        "builtin:mean-fill",
        "--k",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = load_scores(&out).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].id, "real-000");
    assert!(recs.iter().all(|r| r.k == 2 && r.per_sample.len() == 2 && r.tau.is_none()));
    assert!(stdout(&o).contains("scored 2 failed 0"));
    assert!(!dir.path().join("scores.jsonl.failures.jsonl").exists());
}

#[test]
fn detect_partial_failure_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture_set(dir.path(), 2, 1);
    let mut entries = load_manifest(&manifest).unwrap();
    entries.push(ManifestEntry::new("ghost", "img/missing.png", Label::Real, "camera"));
    write_manifest(&manifest, &entries).unwrap();
    let out = dir.path().join("scores.jsonl");
    let o = mdetect(&[
        "detect",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert_eq!(load_scores(&out).unwrap().len(), 3);
    let failures = std::fs::read_to_string(dir.path().join("scores.jsonl.failures.jsonl")).unwrap();
    assert_eq!(failures.lines().count(), 1);
    let f: serde_json::Value = serde_json::from_str(failures.trim()).unwrap();
    assert_eq!(f["id"], "ghost");
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture_set(dir.path(), 1, 0);
    let out = dir.path().join("s.jsonl");
    let m = manifest.to_str().unwrap();
    let o = out.to_str().unwrap();
    assert_eq!(code(&mdetect(&["detect", "--manifest", m])), 1);
    assert_eq!(code(&mdetect(&["nonsense"])), 1);
    assert_eq!(code(&mdetect(&["detect", "--manifest", m, "--out", o, "--k", "0"])), 1);
    assert_eq!(
        code(&mdetect(&["detect", "--manifest", m, "--out", o, "--backend", "builtin:nope"])),
        1
    );
    assert_eq!(
        code(&mdetect(&["detect", "--manifest", "/nonexistent/m.jsonl", "--out", o])),
        1
    );
    assert_eq!(code(&mdetect(&["--help"])), 0);
}

#[test]
fn unreachable_endpoint_exit_3_and_env_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture_set(dir.path(), 1, 0);
    let out = dir.path().join("s.jsonl");
    let addr = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let url = format!("http://{addr}");
    let args = [
        "detect",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--retries",
        "0",
        "--timeout",
        "2",
    ];
    // endpoint only from the environment
    let o = mdetect_env(&args, &[("MD_ENDPOINT", &url)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    // a flag beats the environment
    let mut with_flag = args.to_vec();
    with_flag.extend(["--backend", "builtin:mean-fill"]);
    let o = mdetect_env(&with_flag, &[("MD_ENDPOINT", &url)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn detect_against_remote_stub() {
    let stub = Stub::start(|_, s| {
        let req: serde_json::Value = serde_json::from_str(&s.body).unwrap();
        let resp = serde_json::json!({"samples": [req["image_png_b64"]], "backend_id": "stub"});
        (200, resp.to_string())
    });
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture_set(dir.path(), 2, 0);
    let out = dir.path().join("s.jsonl");
    let o = mdetect(&[
        "detect",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--backend",
        &stub.url,
        "--k",
        "3",
        "--prompt",
        "a photo",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = load_scores(&out).unwrap();
    // echoing the input is a perfect recovery
    assert!(recs.iter().all(|r| r.delta == -100.0));
    let bodies = stub.bodies("/v1/inpaint");
    assert_eq!(bodies.len(), 6);
    assert!(bodies.iter().all(|b| b["num_samples"] == 1 && b["prompt"] == "a photo"));
}

#[test]
fn config_file_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture_set(dir.path(), 1, 1);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"k": 4, "metric": "l1", "backend_endpoint": "builtin:mean-fill"}"#).unwrap();
    let out = dir.path().join("s.jsonl");
    let o = mdetect(&[
        "--config",
        cfg.to_str().unwrap(),
        "detect",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--k",
        "5",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = load_scores(&out).unwrap();
    assert!(recs.iter().all(|r| r.k == 5 && r.metric == Metric::L1));
}

fn detect_oracle(dir: &std::path::Path, manifest: &std::path::Path, out: &str, extra: &[&str]) {
    let mut args = vec![
        "detect",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out,
        "--backend",
        ORACLE,
        "--k",
        "2",
    ];
    args.extend_from_slice(extra);
    let o = mdetect(&args);
    assert_eq!(code(&o), 0, "{} {}", dir.display(), stderr(&o));
}

#[test]
fn evaluate_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture_set(dir.path(), 6, 6);
    let scores = dir.path().join("s.jsonl");
    detect_oracle(dir.path(), &manifest, scores.to_str().unwrap(), &[]);
    let report = dir.path().join("report.json");
    let plot = dir.path().join("dist.svg");
    let o = mdetect(&[
        "evaluate",
        "--scores",
        scores.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--plot",
        plot.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let from_cli: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let direct = evaluate_scores(&load_scores(&scores).unwrap(), &load_manifest(&manifest).unwrap()).unwrap();
    assert_eq!(from_cli, direct);
    assert_eq!(from_cli.auroc, 1.0);
    let svg = std::fs::read_to_string(&plot).unwrap();
    assert!(svg.contains(">fake<") && svg.contains(">real<"));
}

#[test]
fn calibrate_then_detect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture_set(dir.path(), 5, 20);
    let scores = dir.path().join("cal.jsonl");
    detect_oracle(dir.path(), &manifest, scores.to_str().unwrap(), &[]);
    let cal_path = dir.path().join("cal.json");
    let o = mdetect(&[
        "calibrate",
        "--scores",
        scores.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        cal_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cal: CalibrationResult =
        serde_json::from_str(&std::fs::read_to_string(&cal_path).unwrap()).unwrap();
    assert_eq!(cal.n_calibration, 20);
    assert_eq!(cal.metric, Some(Metric::Psnr));

    let verdicts = dir.path().join("v.jsonl");
    detect_oracle(
        dir.path(),
        &manifest,
        verdicts.to_str().unwrap(),
        &["--calibrate-from", cal_path.to_str().unwrap()],
    );
    let recs = load_scores(&verdicts).unwrap();
    let fakes: Vec<_> = recs.iter().filter(|r| r.id.starts_with("fake")).collect();
    let declared = fakes.iter().filter(|r| r.label_hat == Some(Label::Fake)).count() as f64;
    let frac = declared / fakes.len() as f64;
    assert!((0.95..=0.95 + 1.0 / 20.0).contains(&frac), "{frac}");
    assert!(recs.iter().all(|r| r.tau == Some(cal.tau)));

    // calibration for another metric is refused
    let o = mdetect(&[
        "detect",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        verdicts.to_str().unwrap(),
        "--metric",
        "ssim",
        "--calibrate-from",
        cal_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn detect_is_deterministic_across_runs_and_concurrency() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture_set(dir.path(), 4, 4);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    detect_oracle(dir.path(), &manifest, a.to_str().unwrap(), &["--mask", "thick", "--concurrency", "1"]);
    detect_oracle(dir.path(), &manifest, b.to_str().unwrap(), &["--mask", "thick", "--concurrency", "8"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn mask_gen_writes_png() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.png");
    let o = mdetect(&[
        "mask-gen", "--kind", "genhalf", "--width", "100", "--height", "100", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mask = MaskBuffer::load_png(&out).unwrap();
    assert_eq!(mask.masked_count(), 5000);
    assert!(stdout(&o).contains("0.500000"));
    let raw = ImageBuffer::load_png(&out).unwrap();
    assert_eq!(raw.channels(), 1);

    let o = mdetect(&[
        "mask-gen", "--kind", "thick", "--width", "4", "--height", "4", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    for (exp, trials) in [("pinsker", "100"), ("lecam", "2"), ("kbound", "200")] {
        let out = dir.path().join(format!("{exp}.json"));
        let o = mdetect(&[
            "simulate", "--experiment", exp, "--seed", "3", "--trials", trials, "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(v["experiment"], exp);
    }
    let out = dir.path().join("x.json");
    assert_eq!(
        code(&mdetect(&["simulate", "--experiment", "nope", "--out", out.to_str().unwrap()])),
        1
    );
}
