//! HTTP completion service over the hybrid engine.
//!
//! Routes: `POST /v1/completions`, `GET /metrics`, `GET /healthz`.

use std::collections::VecDeque;
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hydec_core::decoder::{DecodeTrace, HybridConfig, HybridEngine};
use hydec_core::generators::remote::{CompletionChoice, CompletionRequest};
use hydec_core::generators::{SamplingMode, SamplingParams};
use hydec_core::num::{extended_f64, parse_threshold};
use hydec_core::{Error, TokenId};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

pub const THRESHOLD_HEADER: &str = "x-hybrid-threshold";
pub const MAX_REQUEST_TOKENS: usize = 4096;
const LATENCY_WINDOW: usize = 4096;

#[derive(Default)]
pub struct Metrics {
    requests: AtomicU64,
    errors: AtomicU64,
    tokens_slm: AtomicU64,
    tokens_llm: AtomicU64,
    latencies: Mutex<VecDeque<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub requests: u64,
    pub errors: u64,
    pub tokens_slm: u64,
    pub tokens_llm: u64,
    pub activation_ratio_frac: f64,
    pub latency_ms_p50: f64,
    pub latency_ms_p95: f64,
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Metrics {
    fn record_latency(&self, ms: f64) {
        let mut w = self.latencies.lock().expect("latency window");
        if w.len() == LATENCY_WINDOW {
            w.pop_front();
        }
        w.push_back(ms);
    }

    fn record_success(&self, trace: &DecodeTrace) {
        self.tokens_slm.fetch_add(trace.slm_steps as u64, Ordering::Relaxed);
        self.tokens_llm.fetch_add(trace.llm_steps as u64, Ordering::Relaxed);
    }

    /// Latency percentiles cover the most recent requests only.
    pub fn snapshot(&self) -> MetricsSnapshot {
        let slm = self.tokens_slm.load(Ordering::Relaxed);
        let llm = self.tokens_llm.load(Ordering::Relaxed);
        let mut lat: Vec<f64> = self.latencies.lock().expect("latency window").iter().copied().collect();
        lat.sort_by(f64::total_cmp);
        MetricsSnapshot {
            requests: self.requests.load(Ordering::Relaxed),
            errors: self.errors.load(Ordering::Relaxed),
            tokens_slm: slm,
            tokens_llm: llm,
            activation_ratio_frac: if slm + llm == 0 {
                0.0
            } else {
                llm as f64 / (slm + llm) as f64
            },
            latency_ms_p50: nearest_rank(&lat, 0.50),
            latency_ms_p95: nearest_rank(&lat, 0.95),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<HybridEngine>,
    pub cfg: HybridConfig,
    pub model_name: String,
    pub metrics: Arc<Metrics>,
    permits: Arc<Semaphore>,
    next_id: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(engine: Arc<HybridEngine>, cfg: HybridConfig, model_name: String, max_concurrency: usize) -> Self {
        Self {
            engine,
            cfg,
            model_name,
            metrics: Arc::new(Metrics::default()),
            permits: Arc::new(Semaphore::new(max_concurrency)),
            next_id: Arc::new(AtomicU64::new(0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    pub total_tokens: usize,
}

/// Decode details beyond the standard completion schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridInfo {
    pub token_ids: Vec<TokenId>,
    pub slm_steps: usize,
    pub llm_steps: usize,
    #[serde(with = "extended_f64")]
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionReply {
    pub id: String,
    pub object: String,
    pub model: String,
    pub choices: Vec<CompletionChoice>,
    pub usage: Usage,
    pub hybrid: HybridInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub message: String,
    #[serde(rename = "type")]
    pub kind: String,
}

struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "invalid_request",
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                message: self.message,
                kind: self.kind.into(),
            },
        };
        (self.status, Json(body)).into_response()
    }
}

fn request_config(state: &AppState, req: &CompletionRequest, headers: &HeaderMap) -> Result<HybridConfig, ApiError> {
    let mut cfg = state.cfg.clone();
    if let Some(v) = headers.get(THRESHOLD_HEADER) {
        let s = v
            .to_str()
            .map_err(|_| ApiError::bad_request("X-Hybrid-Threshold is not valid text"))?;
        cfg.threshold = parse_threshold(s.trim()).map_err(|e| ApiError::bad_request(e.to_string()))?;
    }
    if let Some(n) = req.max_tokens {
        if n == 0 || n > MAX_REQUEST_TOKENS {
            return Err(ApiError::bad_request(format!(
                "max_tokens must be in 1..={MAX_REQUEST_TOKENS}"
            )));
        }
        cfg.max_tokens = n;
    }
    match req.temperature {
        Some(t) if t > 0.0 => {
            let top_p = req.top_p.unwrap_or(1.0);
            for p in [&mut cfg.slm_params, &mut cfg.llm_params] {
                *p = SamplingParams::sample(t, top_p, p.seed).map_err(|e| ApiError::bad_request(e.to_string()))?;
            }
        }
        Some(0.0) => {
            for p in [&mut cfg.slm_params, &mut cfg.llm_params] {
                p.mode = SamplingMode::Greedy;
            }
        }
        Some(t) => return Err(ApiError::bad_request(format!("temperature {t} is negative"))),
        None => {}
    }
    if let Some(p) = req.top_p {
        if !(p > 0.0 && p <= 1.0) {
            return Err(ApiError::bad_request(format!("top_p {p} outside (0, 1]")));
        }
    }
    Ok(cfg)
}

async fn completions(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let start = Instant::now();
    state.metrics.requests.fetch_add(1, Ordering::Relaxed);
    let out = complete(&state, &headers, &body).await;
    state.metrics.record_latency(start.elapsed().as_secs_f64() * 1e3);
    match out {
        Ok(reply) => Json(reply).into_response(),
        Err(e) => {
            state.metrics.errors.fetch_add(1, Ordering::Relaxed);
            e.into_response()
        }
    }
}

async fn complete(state: &AppState, headers: &HeaderMap, body: &[u8]) -> Result<CompletionReply, ApiError> {
    let req: CompletionRequest =
        serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))?;
    if req.stream == Some(true) {
        return Err(ApiError::bad_request("streaming is not supported"));
    }
    let cfg = request_config(state, &req, headers)?;
    let _permit = state.permits.clone().try_acquire_owned().map_err(|_| ApiError {
        status: StatusCode::TOO_MANY_REQUESTS,
        kind: "overloaded",
        message: "too many concurrent requests".into(),
    })?;
    let engine = state.engine.clone();
    let prompt = engine.vocab().encode_prompt(&req.prompt);
    let prompt_len = prompt.len();
    let c = cfg.clone();
    let res = tokio::task::spawn_blocking(move || engine.decode(&c, &prompt))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal",
            message: e.to_string(),
        })?;
    let (out, trace) = res.map_err(|e| match e {
        Error::LlmFailure { .. } => ApiError {
            status: StatusCode::BAD_GATEWAY,
            kind: "llm_failure",
            message: e.to_string(),
        },
        other => ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal",
            message: other.to_string(),
        },
    })?;
    state.metrics.record_success(&trace);
    let n = state.next_id.fetch_add(1, Ordering::Relaxed);
    let finish = if out.ends_with_eos() { "stop" } else { "length" };
    Ok(CompletionReply {
        id: format!("cmpl-{n}"),
        object: "text_completion".into(),
        model: state.model_name.clone(),
        choices: vec![CompletionChoice {
            text: state.engine.vocab().detokenize(&out),
            index: 0,
            finish_reason: Some(finish.into()),
        }],
        usage: Usage {
            prompt_tokens: prompt_len,
            completion_tokens: out.len(),
            total_tokens: prompt_len + out.len(),
        },
        hybrid: HybridInfo {
            token_ids: out.into_vec(),
            slm_steps: trace.slm_steps,
            llm_steps: trace.llm_steps,
            threshold: cfg.threshold,
        },
    })
}

async fn metrics(State(state): State<AppState>) -> Json<MetricsSnapshot> {
    Json(state.metrics.snapshot())
}

async fn healthz() -> &'static str {
    "ok"
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/completions", post(completions))
        .route("/metrics", get(metrics))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve_with_shutdown(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown requested, draining in-flight requests");
}
