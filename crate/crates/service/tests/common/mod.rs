#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use foley_core::checkpoint::ModelBundle;
use foley_core::latent::LatentPost;
use foley_core::vae::{ModelConfig, Posterior, Vae};
use foley_service::model::LoadedModel;
use foley_service::protocol::{decode_frame, ServerMessage};
use foley_service::server::{router, AppState, ServerConfig};
use futures::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

pub type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

/// Untrained tiny model. The control space is fitted on synthetic
/// posteriors with unit-scale spread so that controls move the decoder
/// audibly.
pub fn untrained_model(id: &str, seed: u64) -> LoadedModel {
    use rand::{Rng, SeedableRng};
    let model: Vae<f32> = Vae::new(ModelConfig::tiny(), seed).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 1000);
    let posts: Vec<Posterior> = (0..6)
        .map(|_| {
            let mu = (0..8 * 16).map(|i| rng.random_range(-1.5..1.5) * (1.0 + (i % 16) as f64 / 4.0)).collect();
            Posterior::new(8, 16, mu, vec![-4.0; 8 * 16]).unwrap()
        })
        .collect();
    let mut b = ModelBundle::new(model);
    b.latent = Some(LatentPost::fit(&posts, 0.0, 0.95).unwrap());
    LoadedModel::new(id, b).unwrap()
}

pub async fn spawn_server(models: Vec<LoadedModel>, cfg: ServerConfig) -> (SocketAddr, Arc<AppState>) {
    let state = AppState::new(models, cfg);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(state.clone());
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    (addr, state)
}

pub async fn create_session(addr: SocketAddr, body: serde_json::Value) -> serde_json::Value {
    let r = reqwest::Client::new()
        .post(format!("http://{addr}/sessions"))
        .json(&body)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status().as_u16(), 201);
    r.json().await.unwrap()
}

pub async fn open_stream(addr: SocketAddr, session: &serde_json::Value) -> Ws {
    let path = session["stream_path"].as_str().unwrap();
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}{path}")).await.unwrap();
    ws
}

pub enum Incoming {
    Frame(Vec<f32>),
    Text(ServerMessage),
    Closed,
}

pub async fn next(ws: &mut Ws) -> Incoming {
    loop {
        match ws.next().await {
            Some(Ok(Message::Binary(b))) => return Incoming::Frame(decode_frame(&b).expect("whole f32 samples")),
            Some(Ok(Message::Text(t))) => return Incoming::Text(serde_json::from_str(t.as_str()).expect("server schema")),
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return Incoming::Closed,
            Some(Ok(_)) => continue,
        }
    }
}

pub async fn send_json(ws: &mut Ws, v: serde_json::Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

pub async fn read_frames(ws: &mut Ws, n: usize) -> Vec<Vec<f32>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        match next(ws).await {
            Incoming::Frame(f) => out.push(f),
            Incoming::Text(_) => {}
            Incoming::Closed => panic!("stream closed early"),
        }
    }
    out
}

pub fn rms(x: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = x.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (s / n.max(1) as f64).sqrt()
}

pub struct LatencyReport {
    /// Index of the first frame rendered after the server applied the change.
    pub ack_frame: u64,
    /// First frame whose output differs audibly from an unchanged twin stream.
    pub first_changed: Option<u64>,
    pub latency_frames: Option<u64>,
    pub max_relative_change: f64,
    pub frames_checked: usize,
    pub all_in_range: bool,
}

/// Run two identical sessions, move one control in the first, and find the
/// first output frame that differs from the untouched twin by more than
/// -60 dB relative RMS.
pub async fn measure_control_latency(addr: SocketAddr, model_id: &str, index: usize, value: f64) -> LatencyReport {
    let body = serde_json::json!({ "model_id": model_id });
    let sa = create_session(addr, body.clone()).await;
    let sb = create_session(addr, body).await;
    let mut a = open_stream(addr, &sa).await;
    let mut b = open_stream(addr, &sb).await;
    let mut frames_a = read_frames(&mut a, 3).await;
    send_json(&mut a, serde_json::json!({ "v": 1, "seq": 1, "type": "set_control", "index": index, "value": value })).await;
    let mut ack = None;
    while ack.is_none() || (frames_a.len() as u64) < ack.unwrap() + 6 {
        match next(&mut a).await {
            Incoming::Frame(f) => frames_a.push(f),
            Incoming::Text(ServerMessage::Ack { seq: Some(1), frame, .. }) => ack = Some(frame),
            Incoming::Text(ServerMessage::Error { error, .. }) => panic!("control rejected: {error}"),
            Incoming::Text(_) => {}
            Incoming::Closed => panic!("stream closed"),
        }
    }
    let ack_frame = ack.unwrap();
    let frames_b = read_frames(&mut b, frames_a.len()).await;
    let mut first_changed = None;
    let mut max_rel = 0.0f64;
    for (i, (fa, fb)) in frames_a.iter().zip(&frames_b).enumerate() {
        let diff = rms(fa.iter().zip(fb).map(|(x, y)| (*x - *y) as f64));
        let reference = rms(fb.iter().map(|&v| v as f64)).max(1e-9);
        let rel = diff / reference;
        max_rel = max_rel.max(rel);
        if first_changed.is_none() && rel > 1e-3 {
            first_changed = Some(i as u64);
        }
    }
    let all_in_range = frames_a.iter().chain(&frames_b).flatten().all(|v| v.is_finite() && v.abs() <= 1.0);
    let _ = a.close(None).await;
    let _ = b.close(None).await;
    LatencyReport {
        ack_frame,
        first_changed,
        latency_frames: first_changed.filter(|&f| f >= ack_frame).map(|f| f - ack_frame + 1),
        max_relative_change: max_rel,
        frames_checked: frames_a.len(),
        all_in_range,
    }
}

pub struct CliRun {
    pub code: i32,
    pub summary: serde_json::Value,
    pub stderr: String,
}

pub fn foley(args: &[&str]) -> CliRun {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_foley")).args(args).output().expect("spawn foley");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let summary = stdout
        .lines()
        .rev()
        .find_map(|l| serde_json::from_str(l).ok())
        .unwrap_or(serde_json::Value::Null);
    CliRun {
        code: out.status.code().unwrap_or(-1),
        summary,
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub const PIPELINE_CONFIG: &str = r#"
seed = 5

[train]
batch_size = 2
steps_stage1 = 40
steps_stage2 = 3
validation_every = 10
max_validation_clips = 4

[latent]
prune_threshold = 0.0
perplexity = 3.0
"#;

/// Every offline step of the command line tool on a small synthetic corpus.
/// Returns `(step, run)` for each invocation in order and stops at the
/// first failure.
pub fn run_pipeline(dir: &std::path::Path, clips: usize) -> Vec<(&'static str, CliRun)> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    std::fs::write(dir.join("foley.toml"), PIPELINE_CONFIG).unwrap();
    let cfg = p("foley.toml");
    let clips = clips.to_string();
    let steps: Vec<(&'static str, Vec<String>)> = vec![
        ("synth-corpus", vec!["synth-corpus".into(), "--out".into(), p("raw"), "--clips".into(), clips]),
        (
            "ingest",
            vec![
                "ingest".into(),
                "--root".into(),
                p("raw"),
                "--out".into(),
                p("data"),
                "--segment-seconds".into(),
                "1".into(),
                "--min-keep-seconds".into(),
                "0.5".into(),
                "--test-fraction".into(),
                "0.25".into(),
            ],
        ),
        ("augment", vec!["augment".into(), "--manifest".into(), p("data/manifest.json"), "--out".into(), p("aug")]),
        (
            "train stage1",
            vec!["train".into(), "stage1".into(), "--manifest".into(), p("aug/manifest.json"), "--out".into(), p("model.fvae")],
        ),
        (
            "train stage2",
            vec![
                "train".into(),
                "stage2".into(),
                "--manifest".into(),
                p("aug/manifest.json"),
                "--checkpoint".into(),
                p("model.fvae"),
                "--out".into(),
                p("model2.fvae"),
            ],
        ),
        (
            "latent fit",
            vec![
                "latent".into(),
                "fit".into(),
                "--manifest".into(),
                p("aug/manifest.json"),
                "--checkpoint".into(),
                p("model2.fvae"),
                "--out".into(),
                p("model3.fvae"),
            ],
        ),
        (
            "eval",
            vec![
                "eval".into(),
                "--manifest".into(),
                p("aug/manifest.json"),
                "--checkpoint".into(),
                p("model3.fvae"),
                "--out".into(),
                p("eval"),
            ],
        ),
        (
            "latent embed",
            vec![
                "latent".into(),
                "embed".into(),
                "--manifest".into(),
                p("aug/manifest.json"),
                "--checkpoint".into(),
                p("model3.fvae"),
                "--out".into(),
                p("embed.csv"),
                "--split".into(),
                "train".into(),
            ],
        ),
        (
            "latent mix",
            vec![
                "latent".into(),
                "mix".into(),
                "--checkpoint".into(),
                p("model3.fvae"),
                "--input".into(),
                p("raw/metal/metal_0000.wav"),
                p("raw/cloth/cloth_0001.wav"),
                "--out".into(),
                p("mix.wav"),
            ],
        ),
    ];
    let mut runs = Vec::new();
    for (name, mut args) in steps {
        args.splice(0..0, ["--config".to_string(), cfg.clone()]);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let run = foley(&refs);
        let failed = run.code != 0;
        runs.push((name, run));
        if failed {
            return runs;
        }
    }
    // The control vector length depends on the fitted control space.
    let k = runs[5].1.summary["k"].as_u64().unwrap_or(1) as usize;
    let controls = vec!["0.5"; k].join(",");
    let run = foley(&[
        "--config",
        &cfg,
        "decode",
        "--checkpoint",
        &p("model3.fvae"),
        "--controls",
        &controls,
        "--duration",
        "0.5",
        "--out",
        &p("decoded.wav"),
    ]);
    runs.push(("decode", run));
    runs
}

/// Start `foley serve` on an ephemeral port and return the child with the
/// announced summary line.
pub fn spawn_serve(config: &std::path::Path, checkpoint: &std::path::Path) -> (std::process::Child, serde_json::Value) {
    use std::io::BufRead;
    let mut child = std::process::Command::new(env!("CARGO_BIN_EXE_foley"))
        .args(["--config", &config.to_string_lossy(), "--port", "0", "serve", "--checkpoint", &checkpoint.to_string_lossy()])
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::null())
        .spawn()
        .expect("spawn foley serve");
    let mut line = String::new();
    std::io::BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let v = serde_json::from_str(&line).unwrap_or(serde_json::Value::Null);
    (child, v)
}
