#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use mdetect_core::backend::encode_b64;
use mdetect_core::manifest::write_manifest;
use mdetect_core::{ImageBuffer, Label, ManifestEntry};

pub struct Seen {
    pub method: String,
    pub url: String,
    pub body: String,
}

type Handler = dyn Fn(usize, &Seen) -> (u16, String) + Send + Sync;

/// Threaded HTTP stub; the handler gets the 0-based call index.
pub struct Stub {
    server: Arc<tiny_http::Server>,
    pub url: String,
    pub seen: Arc<Mutex<Vec<Seen>>>,
    calls: Arc<AtomicUsize>,
    workers: Vec<std::thread::JoinHandle<()>>,
}

impl Stub {
    pub fn start(handler: impl Fn(usize, &Seen) -> (u16, String) + Send + Sync + 'static) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let handler: Arc<Handler> = Arc::new(handler);
        let seen = Arc::new(Mutex::new(Vec::new()));
        let calls = Arc::new(AtomicUsize::new(0));
        let workers = (0..8)
            .map(|_| {
                let (server, handler, seen, calls) =
                    (server.clone(), handler.clone(), seen.clone(), calls.clone());
                std::thread::spawn(move || {
                    while let Ok(mut req) = server.recv() {
                        let mut s = Seen {
                            method: req.method().as_str().to_string(),
                            url: req.url().to_string(),
                            body: String::new(),
                        };
                        let _ = req.as_reader().read_to_string(&mut s.body);
                        let n = calls.fetch_add(1, Ordering::SeqCst);
                        let (status, body) = if s.url == "/v1/health" {
                            (200, r#"{"status":"ok"}"#.to_string())
                        } else {
                            handler(n, &s)
                        };
                        seen.lock().unwrap().push(s);
                        let _ = req.respond(
                            tiny_http::Response::from_string(body).with_status_code(status),
                        );
                    }
                })
            })
            .collect();
        Stub { server, url, seen, calls, workers }
    }

    /// Bodies of requests to `path`, in arrival order.
    pub fn bodies(&self, path: &str) -> Vec<serde_json::Value> {
        self.seen
            .lock()
            .unwrap()
            .iter()
            .filter(|s| s.url == path)
            .map(|s| serde_json::from_str(&s.body).unwrap())
            .collect()
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

pub fn gray_png_b64(value: u8) -> String {
    encode_b64(&ImageBuffer::filled(16, 16, 3, value).unwrap().encode_png().unwrap())
}

/// Generate response whose image encodes the request seed.
pub fn generate_reply(body: &str) -> (u16, String) {
    let req: serde_json::Value = serde_json::from_str(body).unwrap();
    let seed = req["seed"].as_u64().unwrap();
    let resp = serde_json::json!({
        "image_png_b64": gray_png_b64((seed % 251) as u8),
        "model_id": "stub-gen",
    });
    (200, resp.to_string())
}

pub fn mdetect(args: &[&str]) -> Output {
    mdetect_env(args, &[])
}

pub fn mdetect_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mdetect"));
    cmd.args(args)
        .env_remove("MD_ENDPOINT")
        .env_remove("MD_TOKEN")
        .env_remove("MD_CONCURRENCY")
        .env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Textured 64x64 grayscale image whose pattern depends on `seed`.
pub fn textured(seed: u32) -> ImageBuffer {
    let data = (0..64u32 * 64)
        .map(|i| {
            let (x, y) = (i % 64, i / 64);
            (60 + (x * 3 + y * 5 + seed * 11) % 97 + (x * y + seed) % 13) as u8
        })
        .collect();
    ImageBuffer::new(64, 64, 1, data).unwrap()
}

/// `n_real` + `n_fake` textured images under `dir/img`, plus a manifest.
pub fn fixture_set(dir: &Path, n_real: usize, n_fake: usize) -> std::path::PathBuf {
    std::fs::create_dir_all(dir.join("img")).unwrap();
    let mut entries = Vec::new();
    for i in 0..n_real + n_fake {
        let (label, id) = if i < n_real {
            (Label::Real, format!("real-{i:03}"))
        } else {
            (Label::Fake, format!("fake-{:03}", i - n_real))
        };
        let rel = format!("img/{id}.png");
        textured(i as u32).save_png(dir.join(&rel)).unwrap();
        entries.push(ManifestEntry::new(id, rel, label, if i < n_real { "camera" } else { "sd" }));
    }
    let path = dir.join("manifest.jsonl");
    write_manifest(&path, &entries).unwrap();
    path
}
