//! HTTP + WebSocket front end. Models are shared read-only; each streaming
//! session owns its engine inside one task, so its state has one writer.

use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use foley_core::audio_io::{read_wav, wav_bytes, BitDepth};
use foley_core::fx::PostChainParams;
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;
use tokio::time::MissedTickBehavior;

use crate::engine::{EngineConfig, ExcitationMode, StreamEngine};
use crate::error::{ErrorCode, ServiceError, ServiceResult};
use crate::model::{DecodeRequest, LoadedModel, ModelSummary, DEFAULT_MAX_DURATION_S, SCHEMA_VERSION, STREAM_FRAME_SAMPLES};
use crate::protocol::{decode_frame, encode_frame, ClientCommand, ClientMessage, ServerMessage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub max_duration_s: f64,
    pub engine: EngineConfig,
    /// Pace output at the audio rate; when false frames go out as fast as
    /// the client drains them.
    pub realtime: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            max_duration_s: DEFAULT_MAX_DURATION_S,
            engine: EngineConfig::default(),
            realtime: true,
        }
    }
}

struct SessionSlot {
    model_id: String,
    /// Taken by the stream task when a client attaches.
    pending: Option<(StreamEngine, oneshot::Receiver<()>)>,
    /// Dropping it stops an attached stream.
    _stop: oneshot::Sender<()>,
}

pub struct AppState {
    models: BTreeMap<String, Arc<LoadedModel>>,
    sessions: Mutex<HashMap<String, SessionSlot>>,
    cfg: ServerConfig,
}

impl AppState {
    pub fn new(models: Vec<LoadedModel>, cfg: ServerConfig) -> Arc<Self> {
        Arc::new(Self {
            models: models.into_iter().map(|m| (m.id.clone(), Arc::new(m))).collect(),
            sessions: Mutex::new(HashMap::new()),
            cfg,
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session lock").len()
    }

    fn model(&self, id: &str) -> ServiceResult<Arc<LoadedModel>> {
        self.models
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::new(ErrorCode::UnknownModel, format!("no model named {id:?}")))
    }
}

struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(serde_json::json!({ "v": SCHEMA_VERSION, "error": self.0 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_json<T: for<'a> Deserialize<'a>>(body: &[u8]) -> ServiceResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::bad_request(format!("invalid JSON body: {e}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/models", get(list_models))
        .route("/models/{id}/info", get(model_info))
        .route("/models/{id}/encode", post(encode))
        .route("/models/{id}/decode", post(decode))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/stream", get(stream))
        .fallback(|| async { ApiError(ServiceError::new(ErrorCode::BadRequest, "no such route")).into_response() })
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelList {
    pub v: u32,
    pub models: Vec<ModelSummary>,
}

async fn list_models(State(s): State<Arc<AppState>>) -> Json<ModelList> {
    Json(ModelList {
        v: SCHEMA_VERSION,
        models: s.models.values().map(|m| m.summary()).collect(),
    })
}

async fn model_info(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.model(&id)?.info()))
}

async fn encode(State(s): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let m = s.model(&id)?;
    let buf = read_wav(Cursor::new(&body[..]))
        .map_err(|e| ServiceError::new(ErrorCode::MalformedAudio, format!("could not read WAV payload: {e}")))?;
    Ok(Json(m.encode(&buf)?))
}

async fn decode(State(s): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let m = s.model(&id)?;
    let req: DecodeRequest = parse_json(&body)?;
    let y = m.render(&req, s.cfg.max_duration_s)?;
    let wav = wav_bytes(&y, BitDepth::Float32).map_err(ServiceError::from)?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], wav))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub v: Option<u32>,
    pub model_id: String,
    #[serde(default)]
    pub mode: Option<ExcitationMode>,
    #[serde(default)]
    pub controls: Option<Vec<f64>>,
    #[serde(default)]
    pub enabled: Option<Vec<bool>>,
    #[serde(default)]
    pub postchain: Option<PostChainParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub v: u32,
    pub session_id: String,
    pub model_id: String,
    pub k: usize,
    pub controls: Vec<f64>,
    pub stream_path: String,
    pub frame_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionList {
    pub v: u32,
    pub count: usize,
    pub sessions: Vec<SessionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub session_id: String,
    pub model_id: String,
    pub streaming: bool,
}

async fn create_session(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateSession = parse_json(&body)?;
    if req.v.is_some_and(|v| v != SCHEMA_VERSION) {
        return Err(ServiceError::new(ErrorCode::UnsupportedVersion, "unsupported schema version").into());
    }
    let m = s.model(&req.model_id)?;
    let mut e = StreamEngine::new(m.clone(), s.cfg.engine)?;
    if let Some(c) = &req.controls {
        e.set_controls(c)?;
    }
    if let Some(mask) = &req.enabled {
        if mask.len() != m.k() {
            return Err(ServiceError::new(ErrorCode::DimensionMismatch, format!("expected {} enable flags", m.k())).into());
        }
        for (i, &on) in mask.iter().enumerate() {
            e.set_enabled(i, on)?;
        }
    }
    if let Some(mode) = req.mode {
        e.set_mode(mode);
    }
    e.set_postchain(req.postchain)?;
    let id = uuid::Uuid::new_v4().to_string();
    let created = SessionCreated {
        v: SCHEMA_VERSION,
        session_id: id.clone(),
        model_id: m.id.clone(),
        k: m.k(),
        controls: e.controls().to_vec(),
        stream_path: format!("/sessions/{id}/stream"),
        frame_samples: STREAM_FRAME_SAMPLES,
    };
    let (tx, rx) = oneshot::channel();
    s.sessions.lock().expect("session lock").insert(
        id,
        SessionSlot {
            model_id: m.id.clone(),
            pending: Some((e, rx)),
            _stop: tx,
        },
    );
    Ok((StatusCode::CREATED, Json(created)))
}

async fn list_sessions(State(s): State<Arc<AppState>>) -> Json<SessionList> {
    let map = s.sessions.lock().expect("session lock");
    let mut sessions: Vec<SessionEntry> = map
        .iter()
        .map(|(id, slot)| SessionEntry {
            session_id: id.clone(),
            model_id: slot.model_id.clone(),
            streaming: slot.pending.is_none(),
        })
        .collect();
    sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    Json(SessionList {
        v: SCHEMA_VERSION,
        count: sessions.len(),
        sessions,
    })
}

async fn delete_session(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    match s.sessions.lock().expect("session lock").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ServiceError::new(ErrorCode::UnknownSession, format!("no session {id:?}")).into()),
    }
}

async fn stream(State(s): State<Arc<AppState>>, Path(id): Path<String>, ws: WebSocketUpgrade) -> ApiResult<Response> {
    let taken = {
        let mut map = s.sessions.lock().expect("session lock");
        let slot = map
            .get_mut(&id)
            .ok_or_else(|| ServiceError::new(ErrorCode::UnknownSession, format!("no session {id:?}")))?;
        slot.pending
            .take()
            .ok_or_else(|| ServiceError::new(ErrorCode::SessionBusy, "session already has a stream attached"))?
    };
    let (engine, stop) = taken;
    Ok(ws.on_upgrade(move |socket| run_stream(s, id, engine, stop, socket)))
}

fn apply_command(e: &mut StreamEngine, cmd: ClientCommand) -> ServiceResult<()> {
    match cmd {
        ClientCommand::SetControl { index, value, values } => match (index, value, values) {
            (Some(i), Some(v), None) => e.set_control(i, v).map(|_| ()),
            (None, None, Some(vs)) => e.set_controls(&vs),
            _ => Err(ServiceError::bad_request("set_control takes index+value or values")),
        },
        ClientCommand::SetEnabled { index, enabled } => e.set_enabled(index, enabled),
        ClientCommand::SetPostchain { params } => e.set_postchain(params),
        ClientCommand::SetMode { mode } => {
            e.set_mode(mode);
            Ok(())
        }
        ClientCommand::PushAudioChunk { samples } => e.push_audio(&samples),
    }
}

fn handle_text(e: &mut StreamEngine, text: &str) -> ServerMessage {
    let msg: ClientMessage = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(err) => return ServerMessage::error(None, ServiceError::bad_request(format!("malformed message: {err}"))),
    };
    if msg.v != SCHEMA_VERSION {
        return ServerMessage::error(
            msg.seq,
            ServiceError::new(ErrorCode::UnsupportedVersion, format!("schema version {} is not supported", msg.v)),
        );
    }
    match apply_command(e, msg.command) {
        Ok(()) => ServerMessage::Ack {
            v: SCHEMA_VERSION,
            seq: msg.seq,
            frame: e.next_frame_index(),
            controls: e.controls().to_vec(),
            enabled: e.enabled().to_vec(),
            mode: e.mode(),
        },
        Err(err) => ServerMessage::error(msg.seq, err),
    }
}

async fn run_stream(
    state: Arc<AppState>,
    id: String,
    mut engine: StreamEngine,
    mut stop: oneshot::Receiver<()>,
    socket: WebSocket,
) {
    let (mut tx, mut rx) = socket.split();
    let m = engine.model().clone();
    let ready = ServerMessage::Ready {
        v: SCHEMA_VERSION,
        session_id: id.clone(),
        model_id: m.id.clone(),
        k: m.k(),
        frame_samples: STREAM_FRAME_SAMPLES,
        sample_rate: m.sample_rate(),
        frame_rate_hz: m.frame_rate(),
    };
    let period = Duration::from_secs_f64(STREAM_FRAME_SAMPLES as f64 / m.sample_rate() as f64);
    let mut tick = tokio::time::interval(if state.cfg.realtime { period } else { Duration::from_micros(1) });
    // A client that cannot keep up gets fewer frames, never a backlog.
    tick.set_missed_tick_behavior(MissedTickBehavior::Skip);
    let mut reason = "client disconnected";
    if tx.send(Message::Text(ready.to_json().into())).await.is_ok() {
        loop {
            tokio::select! {
                biased;
                _ = &mut stop => {
                    reason = "session deleted";
                    let bye = ServerMessage::Closed { v: SCHEMA_VERSION, reason: reason.into(), stats: engine.stats() };
                    let _ = tx.send(Message::Text(bye.to_json().into())).await;
                    let _ = tx.send(Message::Close(None)).await;
                    break;
                }
                msg = rx.next() => {
                    let reply = match msg {
                        Some(Ok(Message::Text(t))) => Some(handle_text(&mut engine, t.as_str())),
                        Some(Ok(Message::Binary(b))) => match decode_frame(&b) {
                            Some(chunk) => engine.push_audio(&chunk).err().map(|e| ServerMessage::error(None, e)),
                            None => Some(ServerMessage::error(
                                None,
                                ServiceError::new(ErrorCode::MalformedAudio, "binary chunk length is not a multiple of 4"),
                            )),
                        },
                        Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                        Some(Ok(_)) => None,
                    };
                    if let Some(r) = reply {
                        if tx.send(Message::Text(r.to_json().into())).await.is_err() {
                            break;
                        }
                    }
                }
                _ = tick.tick() => {
                    match engine.next_frame() {
                        Ok(f) => {
                            if tx.send(Message::Binary(encode_frame(&f).into())).await.is_err() {
                                break;
                            }
                        }
                        Err(e) => {
                            reason = "render failure";
                            let _ = tx.send(Message::Text(ServerMessage::error(None, e).to_json().into())).await;
                            break;
                        }
                    }
                }
            }
        }
    }
    state.sessions.lock().expect("session lock").remove(&id);
    tracing::debug!(session = %id, reason, "stream closed");
}
