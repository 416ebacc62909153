// SPDX-License-Identifier: Apache-2.0

//! HTTP service: `/receive-files` and `/predict` run the triage pipeline on
//! Base64 or multipart uploads behind bearer-token auth; `/healthz` and
//! `/stats` report readiness and latency percentiles.

pub mod audit;
pub mod auth;
pub mod latency;

use std::future::Future;
use std::sync::{Arc, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::body::{to_bytes, Body};
use axum::extract::{FromRequest, Multipart, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use shellgate_core::pipeline::PIPELINE_VERSION;
use shellgate_core::{triage, GateConfig, Status, TriageContext, TriageVerdict, VerdictJson};

pub use audit::{AuditLine, AuditLog};
pub use auth::{mint_token, Auth, AuthError, Claims, DEFAULT_ISSUER, SECRET_ENV};
pub use latency::{LatencyStats, LatencyWindow};

/// Largest accepted decoded image.
pub const MAX_IMAGE_BYTES: usize = 10 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_image_bytes: usize,
    /// When set, `/receive-files` forwards to this `/predict` URL instead of
    /// running the pipeline in-process.
    pub proxy_predict_url: Option<String>,
    pub latency_window: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            max_image_bytes: MAX_IMAGE_BYTES,
            proxy_predict_url: None,
            latency_window: latency::DEFAULT_WINDOW,
        }
    }
}

impl ServiceConfig {
    /// Cap on the raw request body: Base64 of the largest image plus room
    /// for JSON or multipart framing.
    pub fn max_body_bytes(&self) -> usize {
        self.max_image_bytes.div_ceil(3) * 4 + 64 * 1024
    }
}

/// JSON request body for both prediction routes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    pub image_b64: String,
}

impl PredictRequest {
    pub fn new(request_id: Option<String>, image: &[u8]) -> Self {
        PredictRequest {
            request_id,
            image_b64: STANDARD.encode(image),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub index_fingerprint: Option<String>,
    pub pipeline_version: String,
}

#[derive(Debug)]
pub struct AppState {
    pipeline: RwLock<Option<Arc<TriageContext>>>,
    gate: GateConfig,
    auth: Auth,
    config: ServiceConfig,
    latency: LatencyWindow,
    audit: Option<AuditLog>,
    client: reqwest::Client,
}

impl AppState {
    /// A server with no pipeline yet; prediction routes answer 503 until
    /// [`AppState::set_pipeline`] is called.
    pub fn new(
        auth: Auth,
        gate: GateConfig,
        config: ServiceConfig,
        audit: Option<AuditLog>,
    ) -> Self {
        AppState {
            pipeline: RwLock::new(None),
            gate,
            auth,
            latency: LatencyWindow::new(config.latency_window),
            config,
            audit,
            client: reqwest::Client::new(),
        }
    }

    pub fn ready(
        auth: Auth,
        ctx: TriageContext,
        config: ServiceConfig,
        audit: Option<AuditLog>,
    ) -> Self {
        let state = Self::new(auth, *ctx.gate_config(), config, audit);
        state.set_pipeline(ctx);
        state
    }

    pub fn set_pipeline(&self, ctx: TriageContext) {
        *self.pipeline.write().expect("pipeline lock") = Some(Arc::new(ctx));
    }

    fn pipeline(&self) -> Option<Arc<TriageContext>> {
        self.pipeline.read().expect("pipeline lock").clone()
    }

    pub fn latency(&self) -> &LatencyWindow {
        &self.latency
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/receive-files", post(receive_files))
        .route("/predict", post(predict))
        .route("/healthz", get(healthz))
        .route("/stats", get(stats))
        .layer(axum::extract::DefaultBodyLimit::disable())
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Route {
    ReceiveFiles,
    Predict,
}

impl Route {
    fn path(self) -> &'static str {
        match self {
            Route::ReceiveFiles => "/receive-files",
            Route::Predict => "/predict",
        }
    }
}

async fn receive_files(State(state): State<Arc<AppState>>, req: Request) -> Response {
    handle(state, Route::ReceiveFiles, req).await
}

async fn predict(State(state): State<Arc<AppState>>, req: Request) -> Response {
    handle(state, Route::Predict, req).await
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Health> {
    let ctx = state.pipeline();
    Json(Health {
        status: if ctx.is_some() { "ok" } else { "starting" }.into(),
        index_fingerprint: ctx.map(|c| c.index().fingerprint_hex()),
        pipeline_version: PIPELINE_VERSION.into(),
    })
}

async fn stats(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    if let Err(e) = check_auth(&state, &headers) {
        return unauthorized(e);
    }
    Json(state.latency.stats()).into_response()
}

fn check_auth(state: &AppState, headers: &HeaderMap) -> Result<Claims, AuthError> {
    let h = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok());
    state.auth.verify_header(h)
}

fn unauthorized(e: AuthError) -> Response {
    let mut r = (
        StatusCode::UNAUTHORIZED,
        Json(serde_json::json!({ "error": e.to_string() })),
    )
        .into_response();
    r.headers_mut()
        .insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
    r
}

/// Request-level failures that happen before the pipeline runs.
struct Rejection {
    status: StatusCode,
    request_id: Option<String>,
    message: String,
}

impl Rejection {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Rejection {
            status,
            request_id: None,
            message: message.into(),
        }
    }
}

struct Upload {
    request_id: String,
    image: Vec<u8>,
}

async fn handle(state: Arc<AppState>, route: Route, req: Request) -> Response {
    if let Err(e) = check_auth(&state, req.headers()) {
        return unauthorized(e);
    }
    let start = Instant::now();
    let auth_header = req.headers().get(header::AUTHORIZATION).cloned();

    let (status, verdict, body) = match read_upload(&state, route, req).await {
        Err(r) => {
            let id = r.request_id.unwrap_or_else(new_request_id);
            let v = TriageVerdict::rejected(id, &state.gate, r.message).to_wire();
            (r.status, v, None)
        }
        Ok(upload) => match (&state.config.proxy_predict_url, route) {
            (Some(url), Route::ReceiveFiles) => forward(&state, url, auth_header, upload).await,
            _ => run_pipeline(&state, upload).await,
        },
    };

    state.latency.record(start.elapsed().as_secs_f64() * 1000.0);
    if let Some(log) = &state.audit {
        let line = AuditLine {
            ts_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            route: route.path(),
            http_status: status.as_u16(),
            verdict: &verdict,
        };
        if let Err(e) = log.append(&line) {
            tracing::error!(error = %e, "audit log write failed");
        }
    }
    match body {
        Some(raw) => (
            status,
            [(
                header::CONTENT_TYPE,
                HeaderValue::from_static("application/json"),
            )],
            raw,
        )
            .into_response(),
        None => (status, Json(verdict)).into_response(),
    }
}

async fn run_pipeline(
    state: &AppState,
    upload: Upload,
) -> (StatusCode, VerdictJson, Option<Vec<u8>>) {
    let Some(ctx) = state.pipeline() else {
        let v = TriageVerdict::rejected(upload.request_id, &state.gate, "pipeline not ready");
        return (StatusCode::SERVICE_UNAVAILABLE, v.to_wire(), None);
    };
    let id = upload.request_id.clone();
    let joined =
        tokio::task::spawn_blocking(move || triage(&upload.image, &upload.request_id, &ctx)).await;
    match joined {
        Ok(v) => {
            let code = if v.status == Status::Error {
                StatusCode::BAD_REQUEST
            } else {
                StatusCode::OK
            };
            (code, v.to_wire(), None)
        }
        Err(e) => {
            let v = TriageVerdict::rejected(id, &state.gate, format!("pipeline task failed: {e}"));
            (StatusCode::INTERNAL_SERVER_ERROR, v.to_wire(), None)
        }
    }
}

/// Relays the upload to the remote predict route and passes its answer
/// through unchanged.
async fn forward(
    state: &AppState,
    url: &str,
    auth: Option<HeaderValue>,
    upload: Upload,
) -> (StatusCode, VerdictJson, Option<Vec<u8>>) {
    let body = PredictRequest::new(Some(upload.request_id.clone()), &upload.image);
    let mut req = state.client.post(url).json(&body);
    if let Some(a) = auth {
        req = req.header(reqwest::header::AUTHORIZATION, a.as_bytes());
    }
    let failed = |msg: String| {
        let v = TriageVerdict::rejected(upload.request_id.clone(), &state.gate, msg);
        (StatusCode::BAD_GATEWAY, v.to_wire(), None)
    };
    let resp = match req.send().await {
        Ok(r) => r,
        Err(e) => return failed(format!("predict upstream unreachable: {e}")),
    };
    let code = StatusCode::from_u16(resp.status().as_u16()).unwrap_or(StatusCode::BAD_GATEWAY);
    let bytes = match resp.bytes().await {
        Ok(b) => b.to_vec(),
        Err(e) => return failed(format!("predict upstream read failed: {e}")),
    };
    match serde_json::from_slice::<VerdictJson>(&bytes) {
        Ok(v) => (code, v, Some(bytes)),
        Err(e) => failed(format!(
            "predict upstream sent an invalid verdict ({code}): {e}"
        )),
    }
}

fn new_request_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

async fn read_upload(state: &AppState, route: Route, req: Request) -> Result<Upload, Rejection> {
    let limit = state.config.max_body_bytes();
    let declared = req
        .headers()
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok());
    if declared.is_some_and(|n| n > limit as u64) {
        return Err(Rejection::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "payload too large",
        ));
    }
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));

    let (parts, body) = req.into_parts();
    let bytes = to_bytes(body, limit)
        .await
        .map_err(|_| Rejection::new(StatusCode::PAYLOAD_TOO_LARGE, "payload too large"))?;

    let max = state.config.max_image_bytes;
    if is_multipart {
        if route != Route::ReceiveFiles {
            return Err(Rejection::new(
                StatusCode::BAD_REQUEST,
                "multipart uploads are accepted on /receive-files only",
            ));
        }
        let req = Request::from_parts(parts, Body::from(bytes));
        let mp = Multipart::from_request(req, &()).await.map_err(|e| {
            Rejection::new(StatusCode::BAD_REQUEST, format!("bad multipart body: {e}"))
        })?;
        return read_multipart(mp, max).await;
    }

    let body: PredictRequest = serde_json::from_slice(&bytes)
        .map_err(|e| Rejection::new(StatusCode::BAD_REQUEST, format!("bad request body: {e}")))?;
    let request_id = body.request_id.clone();
    let image = decode_b64(&body.image_b64, max).map_err(|mut r| {
        r.request_id = request_id.clone();
        r
    })?;
    Ok(Upload {
        request_id: request_id.unwrap_or_else(new_request_id),
        image,
    })
}

/// Strict standard-alphabet Base64 with padding, checked against the size
/// cap before decoding.
fn decode_b64(text: &str, max: usize) -> Result<Vec<u8>, Rejection> {
    let text = text.trim();
    if text.len() / 4 * 3 > max + 2 {
        return Err(Rejection::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "image exceeds size limit",
        ));
    }
    let image = STANDARD
        .decode(text)
        .map_err(|e| Rejection::new(StatusCode::BAD_REQUEST, format!("invalid base64: {e}")))?;
    if image.len() > max {
        return Err(Rejection::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "image exceeds size limit",
        ));
    }
    Ok(image)
}

/// Accepts a `request_id` text field and either a `file` part with raw
/// image bytes or an `image_b64` text field.
async fn read_multipart(mut mp: Multipart, max: usize) -> Result<Upload, Rejection> {
    let bad = |e: axum::extract::multipart::MultipartError| {
        Rejection::new(StatusCode::BAD_REQUEST, format!("bad multipart body: {e}"))
    };
    let mut request_id = None;
    let mut image = None;
    while let Some(field) = mp.next_field().await.map_err(bad)? {
        match field.name().unwrap_or_default() {
            "request_id" => request_id = Some(field.text().await.map_err(bad)?),
            "image_b64" => image = Some(decode_b64(&field.text().await.map_err(bad)?, max)),
            "file" | "image" => image = Some(Ok(field.bytes().await.map_err(bad)?.to_vec())),
            _ => {}
        }
    }
    let image = match image {
        None => Err(Rejection::new(
            StatusCode::BAD_REQUEST,
            "no image field in upload",
        )),
        Some(Ok(img)) if img.len() > max => Err(Rejection::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "image exceeds size limit",
        )),
        Some(r) => r,
    };
    match image {
        Ok(image) => Ok(Upload {
            request_id: request_id.unwrap_or_else(new_request_id),
            image,
        }),
        Err(mut r) => {
            r.request_id = request_id;
            Err(r)
        }
    }
}
