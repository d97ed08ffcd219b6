//! HTTP service exposing the full pipeline: query execution, dry-run
//! routing, corpus ingestion, emission reporting, liveness, and an admin
//! endpoint that atomically swaps the router configuration.
//!
//! Requests are handled fully concurrently. Shared state is limited to the
//! store snapshot (readers clone an `Arc`, ingestion publishes a new one),
//! the append-only ledger, and the atomically swappable router config.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendHealth};
use crate::config::{build_backend, ServiceConfig};
use crate::deep::{run_deep, DeepConfig, ReasoningTrace};
use crate::energy::{
    Component, EmissionReport, EnergyEstimate, EnergyRecord, HardwareProfile, Ledger, PathKind,
    ReportFilter, TokenStats,
};
use crate::error::{Error, Result};
use crate::green::{answer_green, GreenConfig};
use crate::router::{route, GenParams, Mode, Query, RouterConfig, RoutePath, RoutingDecision};
use crate::store::{IngestStats, KnowledgeStore, RetrievalConfig};

/// Service-level failure, mapped onto an HTTP status.
#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::BadRequest(_) => 400,
            ServiceError::BackendUnavailable(_) => 503,
            ServiceError::Internal(_) => 500,
        }
    }
}

fn classify(source: &Error) -> ServiceError {
    match source {
        Error::Backend(e) => ServiceError::BackendUnavailable(e.to_string()),
        Error::Domain(msg) | Error::Usage(msg) => ServiceError::BadRequest(msg.clone()),
        other => ServiceError::Internal(other.to_string()),
    }
}

/// Body of `POST /v1/query`.
#[derive(Debug, Clone, Deserialize)]
pub struct QueryRequest {
    pub text: String,
    #[serde(default)]
    pub params: GenParams,
    #[serde(default)]
    pub include_trace: bool,
}

/// Energy summary attached to responses.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergySummary {
    pub joules: f64,
    pub grams_co2e: f64,
}

impl From<EnergyEstimate> for EnergySummary {
    fn from(e: EnergyEstimate) -> Self {
        EnergySummary { joules: e.joules, grams_co2e: e.grams_co2e }
    }
}

/// Degradation flags carried on query responses.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct DegradedFlags {
    /// External scorer fell back to the built-in features.
    pub scorer: bool,
    /// Retrieval ran against an empty store or a fallen-back embedder.
    pub retrieval: bool,
}

/// Body of the `POST /v1/query` response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryResponse {
    pub request_id: String,
    pub answer: String,
    pub path: RoutePath,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub score: f64,
    pub energy: EnergySummary,
    pub degraded: DegradedFlags,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub citations: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<ReasoningTrace>,
}

/// Body of the `POST /v1/route` response: the decision plus the request id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteResponse {
    pub request_id: String,
    #[serde(flatten)]
    pub decision: RoutingDecision,
}

/// Body of `GET /healthz`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: &'static str,
    pub backends: std::collections::BTreeMap<String, BackendHealth>,
}

/// The pipeline engine behind the HTTP surface. All handlers are safe to
/// call from many threads at once.
pub struct Gateway {
    config_path: Option<PathBuf>,
    router: RwLock<Arc<RouterConfig>>,
    retrieval: RetrievalConfig,
    deep: DeepConfig,
    green: GreenConfig,
    green_profile: HardwareProfile,
    deep_profile: HardwareProfile,
    router_profile: HardwareProfile,
    store: RwLock<Arc<KnowledgeStore>>,
    snapshot_path: Option<PathBuf>,
    /// Audit log for deep traces not returned inline; writes are serialized.
    trace_audit: Option<std::sync::Mutex<PathBuf>>,
    ledger: Arc<Ledger>,
    green_backend: Arc<dyn Backend>,
    deep_backend: Arc<dyn Backend>,
    router_overhead_tokens: u64,
    meter_dry_run_routing: bool,
    auth_token: Option<String>,
    counter: AtomicU64,
}

impl Gateway {
    /// Builds the engine from configuration, instantiating backends from
    /// their specs and loading the corpus snapshot when one exists.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Gateway> {
        cfg.validate()?;
        let green_backend = build_backend("green", &cfg.backends["green"])?;
        let deep_backend = build_backend("deep", &cfg.backends["deep"])?;
        Gateway::with_backends(cfg, green_backend, deep_backend)
    }

    /// Builds the engine with caller-supplied backends (used by tests and
    /// examples to inject in-process mocks).
    pub fn with_backends(
        cfg: &ServiceConfig,
        green_backend: Arc<dyn Backend>,
        deep_backend: Arc<dyn Backend>,
    ) -> Result<Gateway> {
        cfg.validate()?;
        let store = match &cfg.store_snapshot_path {
            Some(path) if path.exists() => KnowledgeStore::load_snapshot(path)?,
            _ => KnowledgeStore::new(cfg.retrieval.embedder.clone()),
        };
        let auth_token = cfg
            .auth_token_env
            .as_ref()
            .and_then(|name| std::env::var(name).ok())
            .filter(|t| !t.is_empty());
        let trace_audit = cfg.audit_traces.then(|| {
            let path = cfg.trace_audit_path.clone().unwrap_or_else(|| {
                let mut name = cfg.ledger_path.file_name().unwrap_or_default().to_os_string();
                name.push(".traces.jsonl");
                cfg.ledger_path.with_file_name(name)
            });
            std::sync::Mutex::new(path)
        });
        Ok(Gateway {
            config_path: None,
            router: RwLock::new(Arc::new(cfg.router.clone())),
            retrieval: cfg.retrieval.clone(),
            deep: cfg.deep.clone(),
            green: cfg.green.clone(),
            green_profile: cfg.profile("green").clone(),
            deep_profile: cfg.profile("deep").clone(),
            router_profile: cfg.profile("router").clone(),
            store: RwLock::new(Arc::new(store)),
            snapshot_path: cfg.store_snapshot_path.clone(),
            trace_audit,
            ledger: Arc::new(Ledger::open(&cfg.ledger_path)?),
            green_backend,
            deep_backend,
            router_overhead_tokens: cfg.router_overhead_tokens,
            meter_dry_run_routing: cfg.meter_dry_run_routing,
            auth_token,
            counter: AtomicU64::new(1),
        })
    }

    /// Remembers where the config came from so `/admin/reload` can re-read it.
    pub fn set_config_path(&mut self, path: impl Into<PathBuf>) {
        self.config_path = Some(path.into());
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn store_snapshot(&self) -> Arc<KnowledgeStore> {
        self.store.read().expect("store lock poisoned").clone()
    }

    pub fn router_config(&self) -> Arc<RouterConfig> {
        self.router.read().expect("router lock poisoned").clone()
    }

    /// Atomically swaps the router configuration; in-flight requests keep
    /// the snapshot they already took.
    pub fn reload_router(&self, new: RouterConfig) -> Result<()> {
        new.validate()?;
        *self.router.write().expect("router lock poisoned") = Arc::new(new);
        Ok(())
    }

    /// Re-reads the config file and swaps the router section.
    pub fn reload_from_config_file(&self) -> Result<()> {
        let path = self.config_path.as_ref().ok_or_else(|| {
            Error::Config("no config file is associated with this service".into())
        })?;
        let cfg = ServiceConfig::from_toml_file(path)?;
        self.reload_router(cfg.router)
    }

    fn next_request_id(&self) -> String {
        format!("q-{:06}", self.counter.fetch_add(1, Ordering::SeqCst))
    }

    /// Appends a deep trace to the audit log when auditing is enabled.
    /// Audit failures are swallowed: the response already carries the
    /// answer and the ledger holds the energy records.
    fn audit_trace(&self, request_id: &str, trace: &ReasoningTrace) {
        let Some(path) = &self.trace_audit else { return };
        let guard = path.lock().expect("trace audit lock poisoned");
        let line = match serde_json::to_string(&serde_json::json!({
            "request_id": request_id,
            "trace": trace,
        })) {
            Ok(l) => l,
            Err(_) => return,
        };
        if let Ok(mut file) =
            std::fs::OpenOptions::new().create(true).append(true).open(&*guard)
        {
            use std::io::Write;
            let _ = file.write_all(line.as_bytes());
            let _ = file.write_all(b"\n");
        }
    }

    fn meter_router_overhead(&self, query_id: &str) -> Result<EnergyRecord> {
        let record = EnergyRecord::meter(
            query_id,
            PathKind::RouterOverhead,
            Component::Routing,
            TokenStats::new(self.router_overhead_tokens, 0),
            &self.router_profile,
        )?;
        self.ledger.record(&record)?;
        Ok(record)
    }

    /// Full pipeline for one query: route, execute the chosen path, meter.
    pub fn handle_query(&self, req: QueryRequest) -> std::result::Result<QueryResponse, ServiceError> {
        if req.text.trim().is_empty() {
            return Err(ServiceError::BadRequest("query text must be non-empty".into()));
        }
        let request_id = self.next_request_id();
        let mut query = Query::new(request_id.clone(), req.text)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        query.params = req.params;

        let router_cfg = self.router_config();
        let decision = route(&query, &router_cfg);
        let overhead = self
            .meter_router_overhead(&request_id)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;

        match decision.path {
            RoutePath::Green => {
                let store = self.store_snapshot();
                let result = answer_green(
                    &query,
                    &store,
                    &self.retrieval,
                    &self.green,
                    self.green_backend.as_ref(),
                    &self.ledger,
                    &self.green_profile,
                )
                .map_err(|e| classify(&e.source))?;
                Ok(QueryResponse {
                    request_id,
                    answer: result.answer,
                    path: RoutePath::Green,
                    mode: None,
                    score: decision.score,
                    energy: (overhead.estimate + result.energy).into(),
                    degraded: DegradedFlags { scorer: decision.degraded, retrieval: result.degraded },
                    citations: Some(result.citations),
                    trace: None,
                })
            }
            RoutePath::Deep => {
                let mode = decision.mode.expect("deep decisions carry a mode");
                let trace = run_deep(
                    &query,
                    mode,
                    &self.deep,
                    self.deep_backend.as_ref(),
                    &self.ledger,
                    &self.deep_profile,
                )
                .map_err(|e| classify(&e.source))?;
                let answer = trace.final_answer.clone();
                let energy = (overhead.estimate + trace.energy).into();
                // traces are large: return inline only on request, else audit
                let inline_trace = if req.include_trace {
                    Some(trace)
                } else {
                    self.audit_trace(&request_id, &trace);
                    None
                };
                Ok(QueryResponse {
                    request_id,
                    answer,
                    path: RoutePath::Deep,
                    mode: Some(mode),
                    score: decision.score,
                    energy,
                    degraded: DegradedFlags { scorer: decision.degraded, retrieval: false },
                    citations: None,
                    trace: inline_trace,
                })
            }
        }
    }

    /// Dry-run routing: never touches a generation backend or the indexes.
    pub fn handle_route(&self, text: &str) -> std::result::Result<RouteResponse, ServiceError> {
        if text.trim().is_empty() {
            return Err(ServiceError::BadRequest("query text must be non-empty".into()));
        }
        let request_id = self.next_request_id();
        let query = Query::new(request_id.clone(), text)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let decision = route(&query, &self.router_config());
        if self.meter_dry_run_routing {
            self.meter_router_overhead(&request_id)
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
        }
        Ok(RouteResponse { request_id, decision })
    }

    /// Ingests line-delimited documents and atomically publishes the new
    /// store snapshot. Writes no energy records.
    pub fn handle_ingest(&self, body: &[u8]) -> std::result::Result<IngestStats, ServiceError> {
        let mut guard = self.store.write().expect("store lock poisoned");
        let mut next = (**guard).clone();
        let stats = next
            .ingest_jsonl(body)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        if let Some(path) = &self.snapshot_path {
            next.save_snapshot(path).map_err(|e| ServiceError::Internal(e.to_string()))?;
        }
        *guard = Arc::new(next);
        Ok(stats)
    }

    pub fn handle_report(&self, filter: &ReportFilter) -> std::result::Result<EmissionReport, ServiceError> {
        self.ledger.aggregate(filter).map_err(|e| ServiceError::Internal(e.to_string()))
    }

    /// Liveness plus backend reachability; never touches the ledger.
    pub fn handle_health(&self) -> HealthResponse {
        let mut backends = std::collections::BTreeMap::new();
        backends.insert("green".to_string(), self.green_backend.health());
        backends.insert("deep".to_string(), self.deep_backend.health());
        HealthResponse { status: "ok", backends }
    }
}

// ---------------------------------------------------------------------------
// HTTP layer
// ---------------------------------------------------------------------------

/// A running HTTP service; dropping the handle leaves the server running
/// until `shutdown` is called.
pub struct ServiceHandle {
    server: Arc<tiny_http::Server>,
    workers: Vec<std::thread::JoinHandle<()>>,
    addr: std::net::SocketAddr,
}

impl ServiceHandle {
    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(self) {
        // unblock wakes one blocked recv() per call
        for _ in &self.workers {
            self.server.unblock();
        }
        for worker in self.workers {
            let _ = worker.join();
        }
    }
}

/// Starts the HTTP service on `listen` with a fixed worker pool.
pub fn serve(gateway: Arc<Gateway>, listen: &str, workers: usize) -> Result<ServiceHandle> {
    let server = tiny_http::Server::http(listen)
        .map_err(|e| Error::Config(format!("cannot bind {listen}: {e}")))?;
    let addr = match server.server_addr() {
        tiny_http::ListenAddr::IP(a) => a,
        other => return Err(Error::Config(format!("unsupported listen address {other:?}"))),
    };
    let server = Arc::new(server);
    let workers = (1..=workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let gateway = Arc::clone(&gateway);
            std::thread::spawn(move || {
                // recv fails once the server is unblocked for shutdown
                while let Ok(request) = server.recv() {
                    handle_http(&gateway, request);
                }
            })
        })
        .collect();
    Ok(ServiceHandle { server, workers, addr })
}

fn respond_json<T: Serialize>(request: tiny_http::Request, status: u16, body: &T) {
    let payload = serde_json::to_string(body).unwrap_or_else(|e| {
        format!("{{\"error\":\"serialization failure: {e}\"}}")
    });
    let response = tiny_http::Response::from_string(payload)
        .with_status_code(status)
        .with_header(
            "Content-Type: application/json".parse::<tiny_http::Header>().expect("static header"),
        );
    let _ = request.respond(response);
}

fn respond_error(request: tiny_http::Request, status: u16, message: &str) {
    respond_json(request, status, &serde_json::json!({ "error": message }));
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' if i + 2 < bytes.len() => {
                let hex = &s[i + 1..i + 3];
                match u8::from_str_radix(hex, 16) {
                    Ok(b) => {
                        out.push(b);
                        i += 3;
                    }
                    Err(_) => {
                        out.push(bytes[i]);
                        i += 1;
                    }
                }
            }
            b'+' => {
                out.push(b' ');
                i += 1;
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn parse_query_params(raw: &str) -> Vec<(String, String)> {
    raw.split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| match kv.split_once('=') {
            Some((k, v)) => (percent_decode(k), percent_decode(v)),
            None => (percent_decode(kv), String::new()),
        })
        .collect()
}

fn parse_report_filter(raw_query: &str) -> std::result::Result<ReportFilter, String> {
    let mut filter = ReportFilter::default();
    for (key, value) in parse_query_params(raw_query) {
        match key.as_str() {
            "from" => {
                let ts = DateTime::parse_from_rfc3339(&value)
                    .map_err(|e| format!("bad `from` timestamp: {e}"))?;
                filter.from = Some(ts.with_timezone(&Utc));
            }
            "to" => {
                let ts = DateTime::parse_from_rfc3339(&value)
                    .map_err(|e| format!("bad `to` timestamp: {e}"))?;
                filter.to = Some(ts.with_timezone(&Utc));
            }
            "path" => {
                let mut paths = BTreeSet::new();
                for part in value.split(',').filter(|p| !p.is_empty()) {
                    let path = PathKind::parse(part)
                        .ok_or_else(|| format!("unknown path `{part}`"))?;
                    paths.insert(path);
                }
                filter.paths = Some(paths);
            }
            other => return Err(format!("unknown report parameter `{other}`")),
        }
    }
    Ok(filter)
}

fn authorized(gateway: &Gateway, request: &tiny_http::Request) -> bool {
    let Some(expected) = &gateway.auth_token else { return true };
    request
        .headers()
        .iter()
        .find(|h| h.field.equiv("authorization"))
        .map(|h| h.value.as_str() == format!("Bearer {expected}"))
        .unwrap_or(false)
}

fn handle_http(gateway: &Gateway, mut request: tiny_http::Request) {
    let url = request.url().to_string();
    let (path, raw_query) = match url.split_once('?') {
        Some((p, q)) => (p.to_string(), q.to_string()),
        None => (url, String::new()),
    };
    let method = request.method().clone();

    if path != "/healthz" && !authorized(gateway, &request) {
        return respond_error(request, 401, "missing or invalid bearer token");
    }

    let mut body = Vec::new();
    if request.as_reader().read_to_end(&mut body).is_err() {
        return respond_error(request, 400, "unreadable request body");
    }

    use tiny_http::Method;
    match (&method, path.as_str()) {
        (Method::Post, "/v1/query") => {
            let parsed: QueryRequest = match serde_json::from_slice(&body) {
                Ok(p) => p,
                Err(e) => return respond_error(request, 400, &format!("bad request body: {e}")),
            };
            match gateway.handle_query(parsed) {
                Ok(response) => respond_json(request, 200, &response),
                Err(e) => respond_error(request, e.status(), &e.to_string()),
            }
        }
        (Method::Post, "/v1/route") => {
            #[derive(Deserialize)]
            struct RouteRequest {
                text: String,
            }
            let parsed: RouteRequest = match serde_json::from_slice(&body) {
                Ok(p) => p,
                Err(e) => return respond_error(request, 400, &format!("bad request body: {e}")),
            };
            match gateway.handle_route(&parsed.text) {
                Ok(response) => respond_json(request, 200, &response),
                Err(e) => respond_error(request, e.status(), &e.to_string()),
            }
        }
        (Method::Post, "/v1/ingest") => match gateway.handle_ingest(&body) {
            Ok(stats) => respond_json(request, 200, &stats),
            Err(e) => respond_error(request, e.status(), &e.to_string()),
        },
        (Method::Get, "/v1/report") => {
            let filter = match parse_report_filter(&raw_query) {
                Ok(f) => f,
                Err(msg) => return respond_error(request, 400, &msg),
            };
            match gateway.handle_report(&filter) {
                Ok(report) => respond_json(request, 200, &report),
                Err(e) => respond_error(request, e.status(), &e.to_string()),
            }
        }
        (Method::Get, "/healthz") => respond_json(request, 200, &gateway.handle_health()),
        (Method::Post, "/admin/reload") => match gateway.reload_from_config_file() {
            Ok(()) => respond_json(request, 200, &serde_json::json!({ "reloaded": true })),
            Err(e) => respond_error(request, 400, &e.to_string()),
        },
        _ => respond_error(request, 404, "not found"),
    }
}
