//! HTTP and WebSocket service over live sessions.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::broadcast;
use udsbench::codec::{from_hex, DtcCode};
use udsbench::conformance::{generate_matrix, run, Report};
use udsbench::ecu::{EcuConfig, KeyFunction};
use udsbench::tester::PollSpec;
use udsbench::Sample;

use crate::live::{parse_u8, Live};

const STREAM_BUFFER: usize = 4096;
const TICK_EVERY: Duration = Duration::from_millis(20);

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Conflict,
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, msg) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Conflict => (StatusCode::CONFLICT, "a request is already outstanding on this session".into()),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (code, Json(json!({ "error": msg }))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn body<T: DeserializeOwned + Default>(raw: &Bytes) -> Result<T, ApiError> {
    if raw.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(raw).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))
}

fn to_json<T: serde::Serialize>(v: T) -> Json<Value> {
    Json(serde_json::to_value(v).expect("API types serialize"))
}

pub struct SessionHandle {
    pub id: u64,
    pub ecu: String,
    live: Arc<tokio::sync::Mutex<Live>>,
    busy: AtomicBool,
    events: broadcast::Sender<String>,
    started: Instant,
}

impl SessionHandle {
    fn publish(&self, events: Vec<Value>) {
        for e in events {
            // no subscribers is fine
            let _ = self.events.send(e.to_string());
        }
    }
}

/// Clears the outstanding-request flag however the request ends.
struct Outstanding(Arc<SessionHandle>);

impl Drop for Outstanding {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::SeqCst);
    }
}

pub struct AppState {
    ecus: Vec<(String, EcuConfig)>,
    sessions: Mutex<HashMap<u64, Arc<SessionHandle>>>,
    reports: Mutex<HashMap<u64, Arc<Report>>>,
    next_id: AtomicU64,
    turbo: bool,
}

impl AppState {
    /// `ecus` must be non-empty; the first is the default for new sessions.
    pub fn new(ecus: Vec<(String, EcuConfig)>, turbo: bool) -> Arc<Self> {
        assert!(!ecus.is_empty(), "at least one ECU configuration");
        Arc::new(AppState {
            ecus,
            sessions: Mutex::new(HashMap::new()),
            reports: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            turbo,
        })
    }

    fn session(&self, id: u64) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id}")))
    }

    fn all_sessions(&self) -> Vec<Arc<SessionHandle>> {
        self.sessions.lock().expect("sessions lock").values().cloned().collect()
    }

    /// Run `f` on the session's connection as its one outstanding request.
    async fn exclusive<R, F>(&self, h: Arc<SessionHandle>, f: F) -> Result<R, ApiError>
    where
        R: Send + 'static,
        F: FnOnce(&mut Live) -> (R, Vec<Sample>) + Send + 'static,
    {
        if h.busy.swap(true, Ordering::SeqCst) {
            return Err(ApiError::Conflict);
        }
        let _outstanding = Outstanding(h.clone());
        let mut guard = h.live.clone().lock_owned().await;
        let realtime = !self.turbo;
        let (r, events) = tokio::task::spawn_blocking(move || {
            guard.set_realtime(realtime);
            let (r, samples) = f(&mut guard);
            guard.set_realtime(false);
            let events = guard.drain_events(&samples);
            (r, events)
        })
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
        h.publish(events);
        Ok(r)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/ecus", get(list_ecus))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(session_state).delete(delete_session))
        .route("/sessions/{id}/request", post(request))
        .route("/sessions/{id}/session-control", post(session_control))
        .route("/sessions/{id}/unlock", post(unlock))
        .route("/sessions/{id}/poll-list", get(get_poll_list).post(set_poll_list))
        .route("/sessions/{id}/dtc", get(read_dtcs))
        .route("/sessions/{id}/dtc/clear", post(clear_dtcs))
        .route("/sessions/{id}/fault-inject", post(fault_inject))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/fuzz", post(fuzz))
        .route("/sessions/{id}/stream", get(stream))
        .route("/reports/{id}", get(get_report))
        .with_state(state)
}

/// Advance every idle session to wall-clock time. Only used outside turbo
/// mode.
async fn ticker(state: Arc<AppState>) {
    let mut every = tokio::time::interval(TICK_EVERY);
    loop {
        every.tick().await;
        for h in state.all_sessions() {
            if h.busy.load(Ordering::SeqCst) {
                continue;
            }
            let Ok(mut live) = h.live.clone().try_lock_owned() else { continue };
            let started = h.started;
            let hc = h.clone();
            tokio::task::spawn_blocking(move || {
                let target = started.elapsed();
                let now = Duration::from_nanos(live.now().as_nanos());
                if target > now {
                    let samples = live.advance(target - now).unwrap_or_default();
                    let events = live.drain_events(&samples);
                    hc.publish(events);
                }
            });
        }
    }
}

/// Bind and serve until the process is stopped.
pub async fn serve(state: Arc<AppState>, bind: SocketAddr) -> std::io::Result<()> {
    let listener = TcpListener::bind(bind).await?;
    eprintln!("diagd listening on {}", listener.local_addr()?);
    serve_on(state, listener).await
}

pub async fn serve_on(state: Arc<AppState>, listener: TcpListener) -> std::io::Result<()> {
    if !state.turbo {
        tokio::spawn(ticker(state.clone()));
    }
    axum::serve(listener, router(state)).await
}

async fn list_ecus(State(st): State<Arc<AppState>>) -> Json<Value> {
    let list: Vec<Value> = st
        .ecus
        .iter()
        .map(|(name, cfg)| {
            json!({
                "name": name,
                "request_id": cfg.request_can_id().to_string(),
                "response_id": cfg.response_can_id().to_string(),
                "gateway_mode": cfg.gateway_mode,
                "sessions": cfg.sessions.iter().map(|s| json!({
                    "id": s.id,
                    "name": s.name,
                    "services": s.services.iter().map(|a| a.sid).collect::<Vec<_>>(),
                })).collect::<Vec<_>>(),
                "dids": cfg.dids.iter().map(|d| json!({ "did": format!("{:04x}", d.did), "name": d.name })).collect::<Vec<_>>(),
            })
        })
        .collect();
    Json(Value::Array(list))
}

#[derive(Debug, Default, Deserialize)]
struct CreateSession {
    ecu: Option<String>,
    gateway: Option<bool>,
}

async fn create_session(State(st): State<Arc<AppState>>, raw: Bytes) -> ApiResult {
    let req: CreateSession = body(&raw)?;
    let (name, cfg) = match &req.ecu {
        None => st.ecus[0].clone(),
        Some(n) => st
            .ecus
            .iter()
            .find(|(name, _)| name == n)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no ECU named {n:?}")))?,
    };
    let mut live = Live::new(&cfg);
    if let Some(g) = req.gateway {
        live.tester_mut().link_mut().set_gateway_mode(g);
    }
    let id = st.next_id.fetch_add(1, Ordering::SeqCst);
    let (events, _) = broadcast::channel(STREAM_BUFFER);
    let handle = Arc::new(SessionHandle {
        id,
        ecu: name.clone(),
        live: Arc::new(tokio::sync::Mutex::new(live)),
        busy: AtomicBool::new(false),
        events,
        started: Instant::now(),
    });
    st.sessions.lock().expect("sessions lock").insert(id, handle);
    Ok(Json(json!({ "id": id, "ecu": name })))
}

async fn list_sessions(State(st): State<Arc<AppState>>) -> Json<Value> {
    let mut list: Vec<(u64, String)> = st.all_sessions().iter().map(|h| (h.id, h.ecu.clone())).collect();
    list.sort();
    Json(Value::Array(list.into_iter().map(|(id, ecu)| json!({ "id": id, "ecu": ecu })).collect()))
}

async fn session_state(State(st): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult {
    let h = st.session(id)?;
    let live = h.live.lock().await;
    let mut v = serde_json::to_value(live.state()).expect("state serializes");
    v["id"] = json!(id);
    v["ecu"] = json!(h.ecu);
    Ok(Json(v))
}

async fn delete_session(State(st): State<Arc<AppState>>, Path(id): Path<u64>) -> Result<StatusCode, ApiError> {
    st.sessions
        .lock()
        .expect("sessions lock")
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::NotFound(format!("no session {id}")))
}

#[derive(Debug, Default, Deserialize)]
struct HexBody {
    hex: String,
}

async fn request(State(st): State<Arc<AppState>>, Path(id): Path<u64>, raw: Bytes) -> ApiResult {
    let h = st.session(id)?;
    let req: HexBody = body(&raw)?;
    let pdu = from_hex(&req.hex).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    if pdu.is_empty() || pdu.len() > udsbench::isotp::MAX_PAYLOAD {
        return Err(ApiError::BadRequest("request must be 1 to 4095 bytes".into()));
    }
    let view = st.exclusive(h, move |l| (l.request(&pdu), Vec::new())).await?;
    Ok(to_json(view))
}

#[derive(Debug, Default, Deserialize)]
struct ByteBody {
    session: Option<Value>,
    level: Option<Value>,
    key_fn: Option<KeyFunction>,
    group: Option<String>,
}

#[derive(Debug, Deserialize)]
struct MaskQuery {
    mask: Option<String>,
}

fn required_u8(v: &Option<Value>, field: &str) -> Result<u8, ApiError> {
    v.as_ref()
        .and_then(parse_u8)
        .ok_or_else(|| ApiError::BadRequest(format!("{field} must be a byte (number or hex string)")))
}

async fn session_control(State(st): State<Arc<AppState>>, Path(id): Path<u64>, raw: Bytes) -> ApiResult {
    let h = st.session(id)?;
    let session = required_u8(&body::<ByteBody>(&raw)?.session, "session")?;
    let view = st.exclusive(h, move |l| (l.session_control(session), Vec::new())).await?;
    Ok(to_json(view))
}

async fn unlock(State(st): State<Arc<AppState>>, Path(id): Path<u64>, raw: Bytes) -> ApiResult {
    let h = st.session(id)?;
    let b: ByteBody = body(&raw)?;
    let level = match &b.level {
        None => 0x01,
        Some(_) => required_u8(&b.level, "level")?,
    };
    let key_fn = b.key_fn.unwrap_or_default();
    let view = st.exclusive(h, move |l| (l.unlock(level, key_fn), Vec::new())).await?;
    Ok(to_json(view))
}

async fn get_poll_list(State(st): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult {
    let h = st.session(id)?;
    let live = h.live.lock().await;
    Ok(to_json(live.poll_specs()))
}

async fn set_poll_list(State(st): State<Arc<AppState>>, Path(id): Path<u64>, raw: Bytes) -> ApiResult {
    let h = st.session(id)?;
    let specs: Vec<PollSpec> = body(&raw)?;
    let mut live = h.live.lock().await;
    live.set_poll_list(&specs).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    Ok(to_json(live.poll_specs()))
}

async fn read_dtcs(State(st): State<Arc<AppState>>, Path(id): Path<u64>, Query(q): Query<MaskQuery>) -> ApiResult {
    let h = st.session(id)?;
    let mask = match q.mask {
        None => 0xFF,
        Some(m) => parse_u8(&Value::String(m)).ok_or_else(|| ApiError::BadRequest("mask must be a hex byte".into()))?,
    };
    let view = st.exclusive(h, move |l| (l.read_dtcs(mask), Vec::new())).await?;
    Ok(to_json(view))
}

async fn clear_dtcs(State(st): State<Arc<AppState>>, Path(id): Path<u64>, raw: Bytes) -> ApiResult {
    let h = st.session(id)?;
    let b: ByteBody = body(&raw)?;
    let group = match b.group.as_deref() {
        None => [0xFF, 0xFF, 0xFF],
        Some(g) => from_hex(g)
            .ok()
            .and_then(|v| <[u8; 3]>::try_from(v).ok())
            .ok_or_else(|| ApiError::BadRequest("group must be three hex bytes".into()))?,
    };
    let view = st.exclusive(h, move |l| (l.clear_dtcs(group), Vec::new())).await?;
    Ok(to_json(view))
}

#[derive(Debug, Default, Deserialize)]
struct FaultBody {
    dtc: String,
    status: Option<Value>,
}

async fn fault_inject(State(st): State<Arc<AppState>>, Path(id): Path<u64>, raw: Bytes) -> ApiResult {
    let h = st.session(id)?;
    let b: FaultBody = body(&raw)?;
    let code: DtcCode = b.dtc.parse().map_err(|e: udsbench::codec::DtcParseError| ApiError::BadRequest(e.to_string()))?;
    let status = match &b.status {
        None => 0x09,
        Some(_) => required_u8(&b.status, "status")?,
    };
    let record = st.exclusive(h, move |l| (l.inject_fault(code, status), Vec::new())).await?;
    Ok(to_json(record))
}

#[derive(Debug, Default, Deserialize)]
struct AdvanceBody {
    ms: u64,
}

async fn advance(State(st): State<Arc<AppState>>, Path(id): Path<u64>, raw: Bytes) -> ApiResult {
    let h = st.session(id)?;
    let b: AdvanceBody = body(&raw)?;
    let d = Duration::from_millis(b.ms);
    let res = st
        .exclusive(h, move |l| {
            l.set_realtime(false);
            match l.advance(d) {
                Ok(samples) => (Ok(samples.len()), samples),
                Err(e) => (Err(e.to_string()), Vec::new()),
            }
        })
        .await?;
    match res {
        Ok(n) => Ok(Json(json!({ "advanced_ms": b.ms, "samples": n }))),
        Err(e) => Err(ApiError::Internal(e)),
    }
}

async fn fuzz(State(st): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult {
    let h = st.session(id)?;
    let cfg = {
        let live = h.live.lock().await;
        live.tester().link().ecu().ecu().config().clone()
    };
    let report = tokio::task::spawn_blocking(move || run(&generate_matrix(&cfg), &cfg))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let report_id = st.next_id.fetch_add(1, Ordering::SeqCst);
    let summary = json!({
        "report_id": report_id,
        "total": report.total(),
        "passed": report.passed(),
        "failed": report.total() - report.passed(),
    });
    st.reports.lock().expect("reports lock").insert(report_id, Arc::new(report));
    Ok(Json(summary))
}

async fn get_report(State(st): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult {
    let report = st
        .reports
        .lock()
        .expect("reports lock")
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("no report {id}")))?;
    Ok(Json(json!({
        "id": id,
        "total": report.total(),
        "passed": report.passed(),
        "summary": report.summary(),
        "results": report.results,
    })))
}

async fn stream(
    State(st): State<Arc<AppState>>,
    Path(id): Path<u64>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let h = st.session(id)?;
    Ok(ws.on_upgrade(move |socket| pump(socket, h)))
}

async fn pump(mut socket: WebSocket, h: Arc<SessionHandle>) {
    let mut rx = h.events.subscribe();
    let hello = {
        let live = h.live.lock().await;
        let mut v = serde_json::to_value(live.state()).expect("state serializes");
        v["type"] = json!("state");
        v.to_string()
    };
    if socket.send(Message::Text(hello.into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            ev = rx.recv() => match ev {
                Ok(text) => {
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                // slow consumer: skip what was dropped
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return,
            },
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
