mod common;

use std::time::Duration;

use common::{create_session, next, open_stream, read_frames, send_json, spawn_server, untrained_model, Incoming};
use foley_core::audio_io::{read_wav, wav_bytes, AudioBuffer, BitDepth};
use foley_core::fx::PostChainParams;
use foley_core::synth::{metal_clip, white_noise};
use foley_service::model::render_trajectory;
use foley_service::protocol::ServerMessage;
use foley_service::server::ServerConfig;
use serde_json::{json, Value};

fn fast() -> ServerConfig {
    ServerConfig {
        realtime: false,
        ..ServerConfig::default()
    }
}

async fn post_json(url: String, body: Value) -> reqwest::Response {
    reqwest::Client::new().post(url).json(&body).send().await.unwrap()
}

async fn decode_wav(r: reqwest::Response) -> AudioBuffer {
    assert_eq!(r.status().as_u16(), 200);
    assert_eq!(r.headers()["content-type"], "audio/wav");
    read_wav(std::io::Cursor::new(r.bytes().await.unwrap().to_vec())).unwrap()
}

async fn error_code(r: reqwest::Response) -> (u16, String) {
    let status = r.status().as_u16();
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["v"], 1);
    assert!(body["error"]["message"].as_str().is_some_and(|m| !m.is_empty()));
    (status, body["error"]["code"].as_str().unwrap().to_string())
}

#[tokio::test]
async fn models_and_info() {
    let (addr, _) = spawn_server(vec![untrained_model("a", 1), untrained_model("b", 2)], fast()).await;
    let list: Value = reqwest::get(format!("http://{addr}/models")).await.unwrap().json().await.unwrap();
    let ids: Vec<&str> = list["models"].as_array().unwrap().iter().map(|m| m["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["a", "b"]);

    let info: Value = reqwest::get(format!("http://{addr}/models/a/info")).await.unwrap().json().await.unwrap();
    assert_eq!(info["v"], 1);
    assert_eq!(info["hop_samples"], 2048);
    assert_eq!(info["sample_rate"], 44100);
    assert_eq!(info["latent_dim"], 16);
    let k = info["k"].as_u64().unwrap() as usize;
    assert!(k >= 1);
    assert_eq!(info["control_ranges"].as_array().unwrap().len(), k);
    assert_eq!(info["explained_variance"].as_array().unwrap().len(), k);
    assert!((info["frame_rate_hz"].as_f64().unwrap() - 44100.0 / 2048.0).abs() < 1e-12);

    let r = reqwest::get(format!("http://{addr}/models/nope/info")).await.unwrap();
    assert_eq!(error_code(r).await, (404, "unknown_model".into()));
}

#[tokio::test]
async fn encode_is_deterministic_and_validates_input() {
    let (addr, _) = spawn_server(vec![untrained_model("m", 3)], fast()).await;
    let clip = metal_clip(22050, 4);
    let body = wav_bytes(&clip, BitDepth::Pcm16).unwrap();
    let client = reqwest::Client::new();
    let url = format!("http://{addr}/models/m/encode");
    let a: Value = client.post(&url).body(body.clone()).send().await.unwrap().json().await.unwrap();
    let b: Value = client.post(&url).body(body).send().await.unwrap().json().await.unwrap();
    assert_eq!(a, b);
    let frames = a["frames"].as_u64().unwrap() as usize;
    assert_eq!(a["latent"].as_array().unwrap().len(), frames);
    assert_eq!(a["controls"].as_array().unwrap().len(), frames);
    assert_eq!(a["latent"][0].as_array().unwrap().len(), 16);
    assert_eq!(a["input_samples"], 22050);
    // Half a second covers the bank delay plus eleven hops.
    assert!((11..=13).contains(&frames), "{frames}");

    let r = client.post(&url).body(b"RIFF not really a wave file".to_vec()).send().await.unwrap();
    assert_eq!(error_code(r).await, (400, "malformed_audio".into()));
    let r = client.post(&url).body(Vec::new()).send().await.unwrap();
    assert_eq!(error_code(r).await.0, 400);
}

#[tokio::test]
async fn decode_lengths_postchain_and_errors() {
    let model = untrained_model("m", 5);
    let k = model.k();
    let origin = model.latent.control_to_latent(&vec![0.0; k]).unwrap();
    let inner = model.model.clone();
    let (addr, _) = spawn_server(vec![model], fast()).await;
    let url = format!("http://{addr}/models/m/decode");

    let plain = decode_wav(post_json(url.clone(), json!({ "controls": vec![0.0; k], "duration_s": 0.5 })).await).await;
    assert_eq!(plain.len(), 22050);
    assert!(plain.is_finite() && plain.peak() <= 1.0);
    let default_len = decode_wav(post_json(url.clone(), json!({ "controls": vec![0.0; k] })).await).await;
    assert_eq!(default_len.len(), 44100);

    let identity = PostChainParams::default();
    let with_chain = decode_wav(
        post_json(url.clone(), json!({ "controls": vec![0.0; k], "duration_s": 0.5, "postchain": identity })).await,
    )
    .await;
    let dev = plain.samples.iter().zip(&with_chain.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-6, "{dev}");

    // Zero controls sit at the PCA mean; pruned dims stay at zero.
    let frames = foley_service::model::frames_for(&inner, 22050);
    assert_eq!(origin.len(), 16);
    let rows = vec![origin; frames];
    let via_latent = decode_wav(post_json(url.clone(), json!({ "latent": rows, "duration_s": 0.5 })).await).await;
    let dev = plain.samples.iter().zip(&via_latent.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-6, "{dev}");

    let r = post_json(url.clone(), json!({ "controls": vec![0.0; k + 1] })).await;
    assert_eq!(error_code(r).await, (422, "dimension_mismatch".into()));
    let r = post_json(url.clone(), json!({ "controls": vec![0.0; k], "duration_s": 600.0 })).await;
    assert_eq!(error_code(r).await, (422, "duration_exceeded".into()));
    let r = post_json(url.clone(), json!({ "controls": vec![0.0; k], "latent": vec![vec![0.0; 16]] })).await;
    assert_eq!(error_code(r).await, (400, "bad_request".into()));
    let r = post_json(url.clone(), json!({ "controls": vec![0.0; k], "volume": 3 })).await;
    assert_eq!(error_code(r).await, (400, "bad_request".into()));
    let r = post_json(url, json!({ "v": 9, "controls": vec![0.0; k] })).await;
    assert_eq!(error_code(r).await, (400, "unsupported_version".into()));
}

#[tokio::test]
async fn encode_then_decode_matches_direct_rendering() {
    let model = untrained_model("m", 6);
    let inner = model.model.clone();
    let (addr, _) = spawn_server(vec![model], fast()).await;
    let clip = white_noise(30000, 0.4, 8);
    let enc: Value = reqwest::Client::new()
        .post(format!("http://{addr}/models/m/encode"))
        .body(wav_bytes(&clip, BitDepth::Float32).unwrap())
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let rows: Vec<Vec<f64>> = serde_json::from_value(enc["latent"].clone()).unwrap();
    let duration = clip.len() as f64 / 44100.0;
    let served = decode_wav(post_json(format!("http://{addr}/models/m/decode"), json!({ "latent": rows, "duration_s": duration })).await).await;
    assert_eq!(served.len(), clip.len());

    let z = foley_core::vae::LatentTrajectory::from_rows(&rows, inner.frame_rate()).unwrap();
    let direct = render_trajectory(&inner, &z, clip.len(), None).unwrap();
    let dev = served.samples.iter().zip(&direct.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-6, "{dev}");
}

#[tokio::test]
async fn session_lifecycle_and_frames() {
    let model = untrained_model("m", 7);
    let k = model.k();
    let (addr, state) = spawn_server(vec![model], fast()).await;

    let r = post_json(format!("http://{addr}/sessions"), json!({ "model_id": "ghost" })).await;
    assert_eq!(error_code(r).await, (404, "unknown_model".into()));
    let r = post_json(format!("http://{addr}/sessions"), json!({ "model_id": "m", "controls": vec![0.0; k + 2] })).await;
    assert_eq!(error_code(r).await, (422, "dimension_mismatch".into()));

    let s = create_session(addr, json!({ "model_id": "m", "controls": vec![1e9; k] })).await;
    // Session controls are clamped to the widened fitting range.
    assert!(s["controls"].as_array().unwrap().iter().all(|c| c.as_f64().unwrap() < 1e9));
    assert_eq!(s["frame_samples"], 2048);
    let mut ws = open_stream(addr, &s).await;
    match next(&mut ws).await {
        Incoming::Text(ServerMessage::Ready { k: rk, frame_samples, sample_rate, .. }) => {
            assert_eq!((rk, frame_samples, sample_rate), (k, 2048, 44100));
        }
        _ => panic!("expected ready first"),
    }
    let second = tokio_tungstenite::connect_async(format!("ws://{addr}{}", s["stream_path"].as_str().unwrap())).await;
    match second {
        Err(tokio_tungstenite::tungstenite::Error::Http(resp)) => assert_eq!(resp.status().as_u16(), 409),
        _ => panic!("second attach must be refused"),
    }

    for f in read_frames(&mut ws, 8).await {
        assert_eq!(f.len(), 2048);
        assert!(f.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    // Malformed and invalid messages get error frames; the stream survives.
    send_json(&mut ws, json!({ "v": 1, "seq": 4, "type": "warp_drive" })).await;
    send_json(&mut ws, json!({ "v": 1, "seq": 5, "type": "set_control", "index": k, "value": 0.0 })).await;
    let mut errors = Vec::new();
    let mut frames_after = 0;
    while errors.len() < 2 || frames_after < 3 {
        match next(&mut ws).await {
            Incoming::Text(ServerMessage::Error { seq, error, .. }) => errors.push((seq, error.code)),
            Incoming::Frame(_) if errors.len() == 2 => frames_after += 1,
            Incoming::Closed => panic!("session dropped after a bad message"),
            _ => {}
        }
    }
    use foley_service::ErrorCode;
    assert_eq!(errors[0].1, ErrorCode::BadRequest);
    assert_eq!(errors[1], (Some(5), ErrorCode::DimensionMismatch));

    let list: Value = reqwest::get(format!("http://{addr}/sessions")).await.unwrap().json().await.unwrap();
    assert_eq!(list["count"], 1);
    assert_eq!(list["sessions"][0]["streaming"], true);

    let r = reqwest::Client::new()
        .delete(format!("http://{addr}/sessions/{}", s["session_id"].as_str().unwrap()))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status().as_u16(), 204);
    let mut saw_closed = false;
    loop {
        match tokio::time::timeout(Duration::from_secs(10), next(&mut ws)).await.expect("stream closes") {
            Incoming::Text(ServerMessage::Closed { .. }) => saw_closed = true,
            Incoming::Closed => break,
            _ => {}
        }
    }
    assert!(saw_closed);
    assert_eq!(state.session_count(), 0);
    let r = reqwest::Client::new()
        .delete(format!("http://{addr}/sessions/{}", s["session_id"].as_str().unwrap()))
        .send()
        .await
        .unwrap();
    assert_eq!(error_code(r).await, (404, "unknown_session".into()));
}

#[tokio::test]
async fn control_change_reaches_audio_within_two_frames() {
    let (addr, _) = spawn_server(vec![untrained_model("m", 8)], fast()).await;
    let report = common::measure_control_latency(addr, "m", 0, 1e3).await;
    assert!(report.all_in_range);
    let latency = report
        .latency_frames
        .unwrap_or_else(|| panic!("no audible change after frame {}: max relative change {:.2e}", report.ack_frame, report.max_relative_change));
    assert!(latency <= 2, "latency {latency} frames, ack {}", report.ack_frame);
}

#[tokio::test]
async fn thousand_sessions_leave_nothing_behind() {
    let (addr, state) = spawn_server(vec![untrained_model("m", 9)], fast()).await;
    for i in 0..1000 {
        let s = create_session(addr, json!({ "model_id": "m" })).await;
        if i % 2 == 0 {
            let mut ws = open_stream(addr, &s).await;
            assert!(matches!(next(&mut ws).await, Incoming::Text(ServerMessage::Ready { .. })));
            drop(ws);
        } else {
            let r = reqwest::Client::new()
                .delete(format!("http://{addr}/sessions/{}", s["session_id"].as_str().unwrap()))
                .send()
                .await
                .unwrap();
            assert_eq!(r.status().as_u16(), 204);
        }
    }
    let deadline = tokio::time::Instant::now() + Duration::from_secs(30);
    while state.session_count() > 0 && tokio::time::Instant::now() < deadline {
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn file_mode_session_streams_pushed_audio() {
    let (addr, _) = spawn_server(vec![untrained_model("m", 10)], fast()).await;
    let s = create_session(addr, json!({ "model_id": "m", "mode": "file" })).await;
    let mut ws = open_stream(addr, &s).await;
    let chunk = white_noise(4096, 0.5, 2).samples.iter().map(|&v| v as f32).collect::<Vec<f32>>();
    use futures::SinkExt;
    ws.send(tokio_tungstenite::tungstenite::Message::Binary(foley_service::protocol::encode_frame(&chunk).into()))
        .await
        .unwrap();
    send_json(&mut ws, json!({ "v": 1, "seq": 1, "type": "push_audio_chunk", "samples": vec![0.1f32; 512] })).await;
    let mut acked = false;
    let mut frames = 0;
    while !acked || frames < 4 {
        match next(&mut ws).await {
            Incoming::Text(ServerMessage::Ack { seq: Some(1), mode, .. }) => {
                assert_eq!(mode, foley_service::engine::ExcitationMode::File);
                acked = true;
            }
            Incoming::Text(ServerMessage::Error { error, .. }) => panic!("{error}"),
            Incoming::Frame(f) => {
                assert!(f.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
                frames += 1;
            }
            Incoming::Closed => panic!("closed"),
            _ => {}
        }
    }
}
