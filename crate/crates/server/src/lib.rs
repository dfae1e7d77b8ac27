//! HTTP front end of the cloze study.
//!
//! One study is active per server. Every state change is appended to an
//! optional JSON-lines event log before the response is sent, so the log
//! can be replayed into the exact same state after a restart.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lexsel_core::study::{
    read_events, write_event, AnnotationReceipt, Event, Feedback, LearnerWord, NextAnnotation, NextQuestion, RulesView,
    Study, StudyConfig,
};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Core(#[from] lexsel_core::Error),
    #[error("event log: {0}")]
    Log(#[from] std::io::Error),
    #[error("event log belongs to a different study")]
    LogMismatch,
}

impl ServerError {
    fn status(&self) -> StatusCode {
        use lexsel_core::Error as E;
        match self {
            ServerError::Core(e) => match e {
                E::NoStudy | E::UnknownWord(_) | E::UnknownLearner(_) | E::UnknownChoice(_) => StatusCode::NOT_FOUND,
                E::StudyExists | E::SessionClosed { .. } | E::StaleAnswer(_) => StatusCode::CONFLICT,
                E::RulesHidden { .. } => StatusCode::FORBIDDEN,
                E::InvalidConfidence(_) | E::Config(_) | E::Infeasible(_) => StatusCode::UNPROCESSABLE_ENTITY,
                E::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::BAD_REQUEST,
            },
            ServerError::Log(_) | ServerError::LogMismatch => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ServerError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (
            status,
            Json(ErrorBody {
                error: self.to_string(),
            }),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServerError>;

/// Append-only JSONL sink that remembers how many events it has written.
struct EventLog {
    out: BufWriter<File>,
    written: usize,
}

impl EventLog {
    fn sync(&mut self, events: &[Event]) -> Result<(), ServerError> {
        for e in &events[self.written..] {
            write_event(&mut self.out, e)?;
        }
        self.out.flush()?;
        self.written = events.len();
        Ok(())
    }
}

#[derive(Default)]
struct Inner {
    study: Option<Study>,
    log: Option<EventLog>,
}

impl Inner {
    fn study(&self) -> Result<&Study, ServerError> {
        self.study.as_ref().ok_or(lexsel_core::Error::NoStudy.into())
    }

    /// Runs a mutation and persists whatever events it produced.
    fn mutate<T>(&mut self, f: impl FnOnce(&mut Study) -> lexsel_core::Result<T>) -> Result<T, ServerError> {
        let study = self.study.as_mut().ok_or(lexsel_core::Error::NoStudy)?;
        let out = f(study)?;
        if let Some(log) = &mut self.log {
            log.sync(study.events())?;
        }
        Ok(out)
    }
}

/// Shared server state.
#[derive(Clone, Default)]
pub struct AppState {
    inner: Arc<RwLock<Inner>>,
}

impl AppState {
    /// State without a study and without persistence.
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens `log_path` for appending. A non-empty log is replayed; when
    /// `config` is also given it must match the logged study. An empty log
    /// with a config creates the study and writes its first event.
    pub fn open(config: Option<StudyConfig>, log_path: Option<&Path>) -> Result<Self, ServerError> {
        let mut inner = Inner::default();
        let logged = match log_path {
            Some(p) if p.exists() => read_events(BufReader::new(File::open(p)?))?,
            _ => Vec::new(),
        };
        if !logged.is_empty() {
            let study = Study::replay(&logged)?;
            if config.as_ref().is_some_and(|c| c != study.config()) {
                return Err(ServerError::LogMismatch);
            }
            log::info!("replayed {} events", logged.len());
            inner.study = Some(study);
        } else if let Some(c) = config {
            inner.study = Some(Study::create(c)?);
        }
        if let Some(p) = log_path {
            let file = OpenOptions::new().create(true).append(true).open(p)?;
            inner.log = Some(EventLog {
                out: BufWriter::new(file),
                written: logged.len(),
            });
            if let Some(study) = &inner.study {
                let events = study.events().to_vec();
                inner.log.as_mut().expect("log opened above").sync(&events)?;
            }
        }
        Ok(AppState {
            inner: Arc::new(RwLock::new(inner)),
        })
    }

    /// Copy of the full event history.
    pub fn events(&self) -> Vec<Event> {
        self.inner
            .read()
            .study
            .as_ref()
            .map(|s| s.events().to_vec())
            .unwrap_or_default()
    }

    /// Serialized study state, if a study exists.
    pub fn snapshot(&self) -> Option<String> {
        self.inner.read().study.as_ref().map(Study::snapshot)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerBody {
    pub example_id: String,
    pub choice: String,
    pub confidence: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RulesQuery {
    pub learner: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyCreated {
    pub learners: usize,
    pub words: usize,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

async fn create_study(
    State(app): State<AppState>,
    Json(config): Json<StudyConfig>,
) -> Result<(StatusCode, Json<StudyCreated>), ServerError> {
    let mut inner = app.inner.write();
    if inner.study.is_some() {
        return Err(lexsel_core::Error::StudyExists.into());
    }
    let created = StudyCreated {
        learners: config.learners.len(),
        words: config.words.len(),
    };
    inner.study = Some(Study::create(config)?);
    inner.mutate(|_| Ok(()))?;
    log::info!("study created: {} learners, {} words", created.learners, created.words);
    Ok((StatusCode::CREATED, Json(created)))
}

async fn learner_words(State(app): State<AppState>, UrlPath(learner): UrlPath<String>) -> ApiResult<Vec<LearnerWord>> {
    Ok(Json(app.inner.read().study()?.learner_words(&learner)?))
}

async fn next_question(
    State(app): State<AppState>,
    UrlPath((learner, word)): UrlPath<(String, String)>,
) -> ApiResult<NextQuestion> {
    Ok(Json(app.inner.write().mutate(|s| s.next_question(&learner, &word))?))
}

async fn answer(
    State(app): State<AppState>,
    UrlPath((learner, word)): UrlPath<(String, String)>,
    Json(body): Json<AnswerBody>,
) -> ApiResult<Feedback> {
    let ts = now_ms();
    Ok(Json(app.inner.write().mutate(|s| {
        s.record_answer(&learner, &word, &body.example_id, &body.choice, body.confidence, ts)
    })?))
}

async fn rules(
    State(app): State<AppState>,
    UrlPath(word): UrlPath<String>,
    Query(q): Query<RulesQuery>,
) -> ApiResult<RulesView> {
    Ok(Json(app.inner.read().study()?.rules_view(&word, &q.learner)?))
}

async fn next_annotation(
    State(app): State<AppState>,
    UrlPath(annotator): UrlPath<String>,
) -> ApiResult<NextAnnotation> {
    Ok(Json(app.inner.write().mutate(|s| s.next_annotation(&annotator))?))
}

async fn annotate(
    State(app): State<AppState>,
    UrlPath(annotator): UrlPath<String>,
    Json(body): Json<AnswerBody>,
) -> ApiResult<AnnotationReceipt> {
    Ok(Json(app.inner.write().mutate(|s| {
        s.record_annotation(&annotator, &body.example_id, &body.choice, body.confidence)
    })?))
}

async fn export_events(State(app): State<AppState>) -> Result<Response, ServerError> {
    let inner = app.inner.read();
    let mut body = Vec::new();
    for e in inner.study()?.events() {
        write_event(&mut body, e)?;
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/studies", post(create_study))
        .route("/sessions/{learner}", get(learner_words))
        .route("/sessions/{learner}/{word}/next", get(next_question))
        .route("/sessions/{learner}/{word}/answer", post(answer))
        .route("/rules/{word}", get(rules))
        .route("/annotate/{annotator}/next", get(next_annotation))
        .route("/annotate/{annotator}/answer", post(annotate))
        .route("/export/events", get(export_events))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
