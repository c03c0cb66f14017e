//! Local HTTP JSON API over trained artifacts.
//!
//! A session pins a model spec, a fitted ensemble and a [`SamplingPlan`]; the
//! design-prior sample and its per-state `log lambda` predictions are computed
//! once at creation, and every evaluation reuses them, so identical requests
//! get identical answers.

mod error;

pub use error::ApiError;

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use bvmdesign_core::bart::BartPosterior;
use bvmdesign_core::oc::{
    integrated_power_curve, psi_grid, CostSpec, Curve, Evaluator, FieldError, OcReport,
    SamplingPlan, TrialDesign,
};
use bvmdesign_core::{ModelSpec, ParameterPoint};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};
use uuid::Uuid;

pub const DEFAULT_PORT: u16 = 8787;
pub const DEFAULT_SEED: u64 = 20_240_601;
/// Grid size when a curve request does not give one.
pub const DEFAULT_GRID_POINTS: usize = 21;

/// Immutable once created.
pub struct Session {
    pub id: Uuid,
    pub spec: ModelSpec,
    pub ensemble: BartPosterior,
    pub plan: SamplingPlan,
    prior_sample: Vec<ParameterPoint>,
    evaluator: Evaluator,
    created_unix: u64,
}

impl Session {
    pub fn new(spec: ModelSpec, ensemble: BartPosterior, plan: SamplingPlan) -> Result<Self, ApiError> {
        plan.validate().map_err(ApiError::bad_request)?;
        let prior_sample = plan.prior_sample(&spec).map_err(ApiError::bad_request)?;
        let evaluator = Evaluator::new(&prior_sample, spec.model.psi_index(), &ensemble)
            .map_err(ApiError::bad_request)?;
        Ok(Self {
            id: Uuid::new_v4(),
            spec,
            ensemble,
            plan,
            prior_sample,
            evaluator,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })
    }

    pub fn metadata(&self) -> SessionMetadata {
        SessionMetadata {
            id: self.id,
            model: self.spec.model.as_str().to_string(),
            psi0: self.spec.psi0,
            parameters: self.ensemble.names.clone(),
            psi_index: self.spec.model.psi_index(),
            plan: self.plan,
            ensemble: EnsembleSummary {
                n_train: self.ensemble.n_train,
                n_states: self.ensemble.n_states(),
                training_box: self.ensemble.training_box.clone(),
            },
            n_extrapolated: self.evaluator.n_extrapolated(),
            created_unix: self.created_unix,
        }
    }

    pub fn evaluate(&self, req: &EvaluateRequest) -> Result<OcReport, ApiError> {
        let design = parse_design(&req.design)?;
        let cost = match &req.cost {
            None | Some(Value::Null) => None,
            Some(v) => {
                let c: CostSpec = serde_json::from_value(v.clone())
                    .map_err(|e| ApiError::field("cost", e.to_string()))?;
                let errs = c.field_errors();
                if !errs.is_empty() {
                    return Err(ApiError::Unprocessable(errs));
                }
                Some(c)
            }
        };
        self.evaluator
            .assurance(&design, &self.plan.mvn(), cost.as_ref(), req.uncertainty)
            .map_err(ApiError::from_core)
    }

    pub fn curve(&self, req: &CurveRequest) -> Result<Curve, ApiError> {
        let design = parse_design(&req.design)?;
        let grid = match &req.grid {
            Some(g) if g.is_empty() => return Err(ApiError::field("grid", "grid is empty")),
            Some(g) => g.clone(),
            None => psi_grid(&self.spec, DEFAULT_GRID_POINTS),
        };
        integrated_power_curve(
            &grid,
            &design,
            &self.prior_sample,
            self.spec.model.psi_index(),
            &self.ensemble,
            &self.plan.mvn(),
        )
        .map_err(|e| match e {
            bvmdesign_core::Error::InvalidParameter(m) => ApiError::field("grid", m),
            other => ApiError::from_core(other),
        })
    }
}

fn parse_design(v: &Value) -> Result<TrialDesign, ApiError> {
    let d: TrialDesign =
        serde_json::from_value(v.clone()).map_err(|e| ApiError::field("design", e.to_string()))?;
    let errs: Vec<FieldError> = d
        .field_errors()
        .into_iter()
        .map(|e| FieldError {
            field: format!("design.{}", e.field),
            message: e.message,
        })
        .collect();
    if errs.is_empty() {
        Ok(d)
    } else {
        Err(ApiError::Unprocessable(errs))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_train: usize,
    pub n_states: usize,
    pub training_box: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionMetadata {
    pub id: Uuid,
    pub model: String,
    pub psi0: f64,
    pub parameters: Vec<String>,
    pub psi_index: usize,
    pub plan: SamplingPlan,
    pub ensemble: EnsembleSummary,
    pub n_extrapolated: usize,
    pub created_unix: u64,
}

/// `model` and `ensemble` are either a path (relative to the server's
/// artifact root) or the JSON document itself.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateSession {
    pub model: Option<Value>,
    pub ensemble: Option<Value>,
    pub seed: Option<u64>,
    pub prior_draws: Option<usize>,
    pub mvn_draws: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub design: Value,
    #[serde(default)]
    pub cost: Option<Value>,
    #[serde(default)]
    pub uncertainty: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRequest {
    pub design: Value,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
}

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<Uuid, Arc<Session>>>>,
    root: Arc<PathBuf>,
    workers: Arc<Semaphore>,
}

impl AppState {
    /// Relative artifact paths in requests resolve against `root`.
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(2).clamp(1, 4);
        Self {
            sessions: Arc::default(),
            root: Arc::new(root.into()),
            workers: Arc::new(Semaphore::new(workers)),
        }
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let id = Uuid::parse_str(id).map_err(|_| ApiError::NotFound(format!("no session {id}")))?;
        self.sessions
            .read()
            .map_err(|_| ApiError::Internal("session table poisoned".into()))?
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id}")))
    }

    fn load_session(&self, req: CreateSession) -> Result<Session, ApiError> {
        let model = req.model.ok_or_else(|| ApiError::BadRequest("missing model".into()))?;
        let ensemble = req.ensemble.ok_or_else(|| ApiError::BadRequest("missing ensemble".into()))?;
        let spec = match model {
            Value::String(p) => ModelSpec::from_path(&self.resolve(&p)),
            v => ModelSpec::from_json_str(&v.to_string()),
        }
        .map_err(ApiError::bad_request)?;
        let ensemble = match ensemble {
            Value::String(p) => BartPosterior::load(&self.resolve(&p)),
            v => BartPosterior::from_json(&v.to_string()),
        }
        .map_err(ApiError::bad_request)?;
        let fast = SamplingPlan::fast(req.seed.unwrap_or(DEFAULT_SEED));
        let plan = SamplingPlan {
            prior_draws: req.prior_draws.unwrap_or(fast.prior_draws),
            mvn_draws: req.mvn_draws.unwrap_or(fast.mvn_draws),
            ..fast
        };
        Session::new(spec, ensemble, plan)
    }

    /// Run `f` on the blocking pool, at most a few at a time.
    async fn blocking<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    {
        let _permit = self
            .workers
            .clone()
            .acquire_owned()
            .await
            .map_err(|_| ApiError::Internal("worker pool closed".into()))?;
        tokio::task::spawn_blocking(f)
            .await
            .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/evaluate", post(evaluate))
        .route("/sessions/{id}/curve", post(curve))
        .layer(cors())
        .with_state(state)
}

fn cors() -> CorsLayer {
    CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin: &HeaderValue, _| is_local_origin(origin)))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
}

/// `http(s)://localhost`, `127.0.0.1` or `[::1]`, any port.
pub fn is_local_origin(origin: &HeaderValue) -> bool {
    let Ok(s) = origin.to_str() else {
        return false;
    };
    let Some(rest) = s.strip_prefix("http://").or_else(|| s.strip_prefix("https://")) else {
        return false;
    };
    let host = if rest.starts_with('[') {
        rest.split_inclusive(']').next().unwrap_or("")
    } else {
        rest.split(':').next().unwrap_or("")
    };
    matches!(host, "localhost" | "127.0.0.1" | "[::1]")
}

async fn healthz() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<Value>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<SessionMetadata>), ApiError> {
    let Json(body) = body.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let req: CreateSession =
        serde_json::from_value(body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let st = state.clone();
    let session = state.blocking(move || st.load_session(req)).await?;
    let meta = session.metadata();
    log::info!("session {} created ({} prior draws)", meta.id, meta.plan.prior_draws);
    state
        .sessions
        .write()
        .map_err(|_| ApiError::Internal("session table poisoned".into()))?
        .insert(session.id, Arc::new(session));
    Ok((StatusCode::CREATED, Json(meta)))
}

async fn get_session(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionMetadata>, ApiError> {
    Ok(Json(state.session(&id)?.metadata()))
}

async fn evaluate(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<Value>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<OcReport>, ApiError> {
    let session = state.session(&id)?;
    let req: EvaluateRequest = typed_body(body)?;
    Ok(Json(state.blocking(move || session.evaluate(&req)).await?))
}

async fn curve(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<Value>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<Curve>, ApiError> {
    let session = state.session(&id)?;
    let req: CurveRequest = typed_body(body)?;
    Ok(Json(state.blocking(move || session.curve(&req)).await?))
}

fn typed_body<T: serde::de::DeserializeOwned>(
    body: Result<Json<Value>, axum::extract::rejection::JsonRejection>,
) -> Result<T, ApiError> {
    let Json(v) = body.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    serde_json::from_value(v).map_err(|e| ApiError::field("body", e.to_string()))
}

/// Bind `addr` and serve until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
