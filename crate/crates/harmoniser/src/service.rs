//! HTTP API over a corpus, a set of precomputed runs and the annotation log.
//!
//! Every response is a projection of those three inputs, so a restarted
//! server answers identically. Errors are `{"code", "message"}` bodies.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::SystemTime;

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, Request, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{async_trait, Json, Router};
use harmoniser_core::evaluation::{
    label_distribution, sample_for_review, topic_match_metrics_with, Annotation, Averaging,
    EvalError, Label, MetricsReport,
};
use harmoniser_core::pipeline::{PipelineError, RankingRun};
use harmoniser_core::{Corpus, Question, QuestionId};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::annotations::{AnnotationStore, StoreError};

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 1000;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    fn unknown_question(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownQuestion", format!("unknown question {id}"))
    }

    fn unknown_run(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownRun", format!("unknown run {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({"code": self.code, "message": self.message}));
        (self.status, body).into_response()
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        let (status, code) = match &e {
            EvalError::InvalidLabel(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidLabel"),
            EvalError::NoAnnotations => (StatusCode::NOT_FOUND, "NoAnnotations"),
            EvalError::SampleTooLarge { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "SampleTooLarge"),
            EvalError::EmptyRun => (StatusCode::UNPROCESSABLE_ENTITY, "EmptyRun"),
            EvalError::MissingTopic(_) => (StatusCode::INTERNAL_SERVER_ERROR, "MissingTopic"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Duplicate { .. } => Self::new(StatusCode::CONFLICT, "DuplicateAnnotation", e.to_string()),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "StorageError", e.to_string()),
        }
    }
}

/// `Query` with rejections reported as API errors.
pub struct ApiQuery<T>(pub T);

#[async_trait]
impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for ApiQuery<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| Self(v))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

/// `Path` with rejections reported as API errors.
pub struct ApiPath<T>(pub T);

#[async_trait]
impl<S: Send + Sync, T: DeserializeOwned + Send> FromRequestParts<S> for ApiPath<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        Path::<T>::from_request_parts(parts, state)
            .await
            .map(|Path(v)| Self(v))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

pub struct AppState {
    pub corpus: Corpus,
    pub runs: BTreeMap<String, RankingRun>,
    pub store: AnnotationStore,
    pub token: Option<String>,
    pub review_n: usize,
    pub review_seed: u64,
}

impl AppState {
    /// Checks that every run only mentions questions present in the corpus.
    pub fn new(
        corpus: Corpus,
        runs: Vec<RankingRun>,
        store: AnnotationStore,
        token: Option<String>,
    ) -> anyhow::Result<Self> {
        let mut by_id = BTreeMap::new();
        for run in runs {
            for (q, list) in &run.per_query {
                for id in std::iter::once(q).chain(list.iter().map(|c| &c.id)) {
                    anyhow::ensure!(corpus.contains(id), "run {} mentions unknown question {id}", run.run_id);
                }
            }
            let id = run.run_id.clone();
            anyhow::ensure!(by_id.insert(id.clone(), run).is_none(), "run {id} loaded twice");
        }
        Ok(Self {
            corpus,
            runs: by_id,
            store,
            token,
            review_n: 203,
            review_seed: 0,
        })
    }

    fn run(&self, id: &str) -> Result<&RankingRun, ApiError> {
        self.runs.get(id).ok_or_else(|| ApiError::unknown_run(id))
    }

    fn question(&self, id: &str) -> Result<&Question, ApiError> {
        self.corpus
            .get(&QuestionId::new(id))
            .ok_or_else(|| ApiError::unknown_question(id))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/questions", get(list_questions))
        .route("/api/questions/:id", get(get_question))
        .route("/api/runs", get(list_runs))
        .route("/api/runs/:run_id/candidates/:query_id", get(get_candidates))
        .route("/api/sample", get(get_sample))
        .route("/api/annotations", get(export_annotations).post(submit_annotation))
        .route("/api/annotations/stats", get(annotation_stats))
        .route("/api/eval/:run_id", get(evaluate_run))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint") })
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(
    State(state): State<Arc<AppState>>,
    request: Request<axum::body::Body>,
    next: Next,
) -> Response {
    if let Some(token) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(request).await
}

#[derive(Deserialize)]
struct Page {
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn list_questions(
    State(state): State<Arc<AppState>>,
    ApiQuery(page): ApiQuery<Page>,
) -> Result<Json<Value>, ApiError> {
    let offset = page.offset.unwrap_or(0);
    let limit = page.limit.unwrap_or(DEFAULT_PAGE);
    if limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!("limit must be at most {MAX_PAGE}")));
    }
    let all = state.corpus.questions();
    let questions: Vec<&Question> = all.iter().skip(offset).take(limit).collect();
    Ok(Json(json!({
        "total": all.len(),
        "offset": offset,
        "limit": limit,
        "questions": questions,
    })))
}

async fn get_question(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
) -> Result<Json<Question>, ApiError> {
    state.question(&id).cloned().map(Json)
}

fn run_summary(run: &RankingRun) -> Value {
    json!({
        "run_id": run.run_id,
        "model": run.model,
        "mode": run.mode,
        "k": run.k,
        "queries": run.query_count(),
        "config": run.config,
    })
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Json<Vec<Value>> {
    Json(state.runs.values().map(run_summary).collect())
}

#[derive(Deserialize)]
struct CandidateQuery {
    k: Option<usize>,
}

#[derive(Serialize)]
struct HydratedCandidate<'a> {
    rank: usize,
    score: f64,
    question: &'a Question,
}

async fn get_candidates(
    State(state): State<Arc<AppState>>,
    ApiPath((run_id, query_id)): ApiPath<(String, String)>,
    ApiQuery(params): ApiQuery<CandidateQuery>,
) -> Result<Json<Value>, ApiError> {
    let run = state.run(&run_id)?;
    let list = run
        .candidates(&QuestionId::new(query_id.as_str()))
        .ok_or_else(|| ApiError::unknown_question(&query_id))?;
    let k = params.k.unwrap_or(run.k);
    if k == 0 {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidK", PipelineError::InvalidK.to_string()));
    }
    let candidates = list
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, c)| {
            Ok(HydratedCandidate {
                rank: i + 1,
                score: c.score,
                question: state.question(c.id.as_str())?,
            })
        })
        .collect::<Result<Vec<_>, ApiError>>()?;
    Ok(Json(json!({
        "run_id": run.run_id,
        "query": state.question(&query_id)?,
        "k": k,
        "candidates": candidates,
    })))
}

#[derive(Deserialize)]
struct SampleQuery {
    run_id: Option<String>,
    n: Option<usize>,
    seed: Option<u64>,
}

async fn get_sample(
    State(state): State<Arc<AppState>>,
    ApiQuery(params): ApiQuery<SampleQuery>,
) -> Result<Json<Value>, ApiError> {
    let run_id = params
        .run_id
        .ok_or_else(|| ApiError::bad_request("run_id is required"))?;
    let run = state.run(&run_id)?;
    let n = params.n.unwrap_or(state.review_n);
    let seed = params.seed.unwrap_or(state.review_seed);
    let pairs = sample_for_review(run, n, seed)?;
    let items = pairs
        .iter()
        .map(|(q, c)| {
            let top = run.top1(q).expect("sampled queries have a top-1 candidate");
            Ok(json!({
                "query_id": q,
                "candidate_id": c,
                "score": top.score,
                "query": state.question(q.as_str())?,
                "candidate": state.question(c.as_str())?,
            }))
        })
        .collect::<Result<Vec<_>, ApiError>>()?;
    Ok(Json(json!({"run_id": run.run_id, "n": n, "seed": seed, "pairs": items})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRequest {
    query_id: String,
    candidate_id: String,
    label: String,
    annotator: String,
    run_id: String,
    timestamp: Option<String>,
}

async fn submit_annotation(
    State(state): State<Arc<AppState>>,
    body: axum::body::Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let req: AnnotationRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let label: Label = req.label.parse()?;
    state.question(&req.query_id)?;
    state.question(&req.candidate_id)?;
    state.run(&req.run_id)?;
    if req.annotator.trim().is_empty() {
        return Err(ApiError::bad_request("annotator must not be empty"));
    }
    let annotation = Annotation {
        query_id: QuestionId(req.query_id),
        candidate_id: QuestionId(req.candidate_id),
        label,
        annotator: req.annotator,
        run_id: req.run_id,
        timestamp: req
            .timestamp
            .unwrap_or_else(|| humantime::format_rfc3339_seconds(SystemTime::now()).to_string()),
    };
    let writer = state.clone();
    let stored = annotation.clone();
    let id = tokio::task::spawn_blocking(move || writer.store.append(stored))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StorageError", e.to_string()))??;
    Ok((StatusCode::CREATED, Json(json!({"id": id, "annotation": annotation}))))
}

#[derive(Deserialize)]
struct RunFilter {
    run_id: Option<String>,
}

async fn export_annotations(
    State(state): State<Arc<AppState>>,
    ApiQuery(filter): ApiQuery<RunFilter>,
) -> Response {
    let mut out = String::new();
    for a in state.store.snapshot(filter.run_id.as_deref()) {
        out.push_str(&serde_json::to_string(&a).expect("annotation serialises"));
        out.push('\n');
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response()
}

async fn annotation_stats(
    State(state): State<Arc<AppState>>,
    ApiQuery(filter): ApiQuery<RunFilter>,
) -> Result<Json<Value>, ApiError> {
    if let Some(run_id) = &filter.run_id {
        state.run(run_id)?;
    }
    let annotations = state.store.snapshot(filter.run_id.as_deref());
    let distribution = label_distribution(&annotations)?;
    Ok(Json(json!({"run_id": filter.run_id, "distribution": distribution})))
}

#[derive(Deserialize)]
struct EvalQuery {
    averaging: Option<String>,
}

async fn evaluate_run(
    State(state): State<Arc<AppState>>,
    ApiPath(run_id): ApiPath<String>,
    ApiQuery(params): ApiQuery<EvalQuery>,
) -> Result<Json<MetricsReport>, ApiError> {
    let run = state.run(&run_id)?;
    let averaging: Averaging = match params.averaging {
        None => Averaging::Macro,
        Some(s) => s.parse().map_err(|e| ApiError::bad_request(format!("{e}")))?,
    };
    let metrics = topic_match_metrics_with(run, &state.corpus, averaging)?;
    Ok(Json(MetricsReport::new(run, metrics)))
}
