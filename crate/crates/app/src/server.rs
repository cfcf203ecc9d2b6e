//! HTTP chat and evaluation service.
//!
//! | method | path                      | body / query                                | response |
//! |--------|---------------------------|---------------------------------------------|----------|
//! | POST   | `/api/session`            |                                             | `{session_id}` |
//! | POST   | `/api/chat`               | `{session_id, message, beam_width?}`        | `{reply, logprob, candidates: [{text, logprob}]}` |
//! | GET    | `/api/session/{id}`       |                                             | session summary and transcript |
//! | POST   | `/api/compare`            | `{questions: [..], external_url?}`          | `{items: [{item_id, question, answer_a, answer_b}], unavailable: [{question_index, question}]}` |
//! | GET    | `/api/compare/{item_id}`  | `?judge_id=..`                              | `{item_id, judge_id, question, left, right}` |
//! | POST   | `/api/votes`              | `[{item_id, judge_id, choice? , side?}]`    | `{tally, pending, scored}` |
//! | GET    | `/api/votes`              |                                             | `{tally, pending, scored}` |
//! | GET    | `/api/health`             |                                             | `{status, vocab_size, sessions}` |
//!
//! Errors are `{error, field?, id?}` with status 400 (malformed body, `field`
//! names the offending field), 404 (unknown session or item), 409 (duplicate
//! or surplus vote) or 500 (`id` matches the logged details).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ncm_core::decode::DecodeConfig;
use ncm_core::eval::{
    build_comparison, partial_tally, Choice, ComparisonSet, ComparisonTally, EvalError,
    ExportRecord, JudgeVote, Presentation, Responder, Side,
};
use ncm_core::text::DEFAULT_CONTEXT_CAP;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::engine::{Candidate, Engine};
use crate::responder::{HttpResponder, DEFAULT_TIMEOUT};
use crate::session::{ChatSession, Speaker, TranscriptEntry};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub context_cap: usize,
    pub max_len: usize,
    pub max_beam: usize,
    /// Beam width of the local B responder when no external URL is given.
    pub compare_beam: usize,
    /// Seed for the per-judge left/right presentation.
    pub judge_seed: u64,
    pub external_timeout: Duration,
    /// Append-only JSONL log, one record per turn.
    pub transcript_path: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            context_cap: DEFAULT_CONTEXT_CAP,
            max_len: 32,
            max_beam: 20,
            compare_beam: 5,
            judge_seed: 0,
            external_timeout: DEFAULT_TIMEOUT,
            transcript_path: None,
        }
    }
}

pub struct AppState {
    engine: Engine,
    options: ServeOptions,
    sessions: RwLock<HashMap<String, Arc<Mutex<ChatSession>>>>,
    next_session: AtomicU64,
    next_error: AtomicU64,
    comparison: Mutex<Option<ComparisonSet>>,
    votes: Mutex<Vec<JudgeVote>>,
    transcript: Option<Mutex<File>>,
}

pub type SharedState = Arc<AppState>;

#[derive(Debug)]
pub enum ApiError {
    BadRequest {
        message: String,
        field: Option<String>,
    },
    NotFound(String),
    Conflict(String),
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest { message, field } => (
                StatusCode::BAD_REQUEST,
                ErrorBody {
                    error: message,
                    field,
                    id: None,
                },
            ),
            ApiError::NotFound(m) => (
                StatusCode::NOT_FOUND,
                ErrorBody {
                    error: m,
                    field: None,
                    id: None,
                },
            ),
            ApiError::Conflict(m) => (
                StatusCode::CONFLICT,
                ErrorBody {
                    error: m,
                    field: None,
                    id: None,
                },
            ),
            ApiError::Internal(id) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                ErrorBody {
                    error: "internal error".into(),
                    field: None,
                    id: Some(id),
                },
            ),
        };
        (status, Json(body)).into_response()
    }
}

fn bad_field(field: &str, message: impl Into<String>) -> ApiError {
    ApiError::BadRequest {
        message: message.into(),
        field: Some(field.to_string()),
    }
}

/// Decodes a JSON body, naming the offending field on failure.
pub fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        let field = if path != "." {
            Some(path)
        } else {
            // Missing fields are reported at the parent, named in backticks.
            message
                .strip_prefix("missing field `")
                .and_then(|rest| rest.split('`').next())
                .map(str::to_string)
        };
        ApiError::BadRequest { message, field }
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRequest {
    pub session_id: String,
    pub message: String,
    pub beam_width: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct ChatResponse {
    pub reply: String,
    pub logprob: f64,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub created_ms: u64,
    pub last_active_ms: u64,
    pub turn_count: usize,
    pub context_tokens: usize,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRequest {
    pub questions: Vec<String>,
    pub external_url: Option<String>,
}

/// Unavailable questions without the reason, which names the responder.
#[derive(Debug, Serialize)]
pub struct UnavailableView {
    pub question_index: usize,
    pub question: String,
}

#[derive(Debug, Serialize)]
pub struct CompareResponse {
    pub items: Vec<ExportRecord>,
    pub unavailable: Vec<UnavailableView>,
}

#[derive(Debug, Deserialize)]
pub struct JudgeQuery {
    pub judge_id: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct PresentedItem {
    pub item_id: String,
    pub judge_id: String,
    pub question: String,
    pub left: String,
    pub right: String,
}

/// A vote names either the underlying answer (`choice`) or the side the
/// judge saw it on (`side`), never both.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteInput {
    pub item_id: String,
    pub judge_id: String,
    pub choice: Option<Choice>,
    pub side: Option<Side>,
}

#[derive(Debug, Serialize)]
pub struct TallyResponse {
    pub tally: ComparisonTally,
    pub pending: usize,
    pub scored: usize,
}

#[derive(Serialize)]
struct TranscriptRecord<'a> {
    session_id: &'a str,
    turn: usize,
    speaker: Speaker,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprob: Option<f64>,
    timestamp_ms: u64,
}

impl AppState {
    pub fn new(engine: Engine, options: ServeOptions) -> anyhow::Result<Self> {
        let transcript = match &options.transcript_path {
            Some(p) => Some(Mutex::new(
                OpenOptions::new().create(true).append(true).open(p)?,
            )),
            None => None,
        };
        Ok(AppState {
            engine,
            options,
            sessions: RwLock::new(HashMap::new()),
            next_session: AtomicU64::new(1),
            next_error: AtomicU64::new(1),
            comparison: Mutex::new(None),
            votes: Mutex::new(Vec::new()),
            transcript,
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn options(&self) -> &ServeOptions {
        &self.options
    }

    fn internal(&self, err: impl std::fmt::Display) -> ApiError {
        let id = format!("err-{:06}", self.next_error.fetch_add(1, Ordering::Relaxed));
        log::error!("{id}: {err}");
        ApiError::Internal(id)
    }

    pub fn create_session(&self) -> String {
        let id = format!("s{:08}", self.next_session.fetch_add(1, Ordering::Relaxed));
        let session = ChatSession::new(id.clone(), self.options.context_cap);
        self.sessions
            .write()
            .unwrap()
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        id
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<ChatSession>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session {id:?}")))
    }

    fn decode_config(&self, beam_width: usize) -> DecodeConfig {
        DecodeConfig {
            max_len: self.options.max_len,
            beam_width,
            ..DecodeConfig::default()
        }
    }

    /// One chat exchange. The session changes only if decoding succeeds.
    fn chat_turn(
        &self,
        session: &Mutex<ChatSession>,
        message: &str,
        beam_width: usize,
    ) -> Result<ChatResponse, ApiError> {
        let mut guard = session.lock().unwrap();
        let mut next = guard.clone();
        let user_ids = self.engine.encode(message);
        next.push_turn(Speaker::User, &user_ids, message, None);
        let candidates = self
            .engine
            .decode(&next.context(), &self.decode_config(beam_width))
            .map_err(|e| self.internal(format!("decode failed in session {}: {e}", next.id)))?;
        let best = candidates[0].clone();
        next.push_turn(Speaker::Model, &best.tokens, &best.text, Some(best.logprob));
        let start = guard.transcript.len();
        *guard = next;
        self.log_turns(&guard, start);
        Ok(ChatResponse {
            reply: best.text,
            logprob: best.logprob,
            candidates,
        })
    }

    fn log_turns(&self, session: &ChatSession, start: usize) {
        let Some(file) = &self.transcript else { return };
        let mut file = file.lock().unwrap();
        let first_turn = session.turn_count - (session.transcript.len() - start);
        for (k, entry) in session.transcript[start..].iter().enumerate() {
            let record = TranscriptRecord {
                session_id: &session.id,
                turn: first_turn + k + 1,
                speaker: entry.speaker,
                text: &entry.text,
                logprob: entry.logprob,
                timestamp_ms: session.last_active_ms,
            };
            let line = serde_json::to_string(&record).expect("transcript record serializes");
            if let Err(e) = writeln!(file, "{line}") {
                log::warn!("transcript write failed: {e}");
            }
        }
    }

    fn compare(&self, req: &CompareRequest) -> Result<CompareResponse, ApiError> {
        let local_a = self.engine.responder("local-greedy", self.decode_config(1));
        let set = match &req.external_url {
            Some(url) => {
                let external =
                    HttpResponder::new("external", url.clone(), self.options.external_timeout)
                        .map_err(|e| self.internal(e))?;
                build_comparison(&req.questions, &local_a, &external as &dyn Responder)
            }
            None => {
                let local_b = self
                    .engine
                    .responder("local-beam", self.decode_config(self.options.compare_beam));
                build_comparison(&req.questions, &local_a, &local_b)
            }
        };
        for u in &set.unavailable {
            log::warn!("question {} unavailable: {}", u.question_index, u.reason);
        }
        let response = CompareResponse {
            items: set.items.iter().map(ExportRecord::from).collect(),
            unavailable: set
                .unavailable
                .iter()
                .map(|u| UnavailableView {
                    question_index: u.question_index,
                    question: u.question.clone(),
                })
                .collect(),
        };
        *self.comparison.lock().unwrap() = Some(set);
        Ok(response)
    }

    fn present(&self, item_id: &str, judge_id: &str) -> Result<PresentedItem, ApiError> {
        let guard = self.comparison.lock().unwrap();
        let item = guard
            .as_ref()
            .and_then(|set| set.items.iter().find(|i| i.item_id == item_id))
            .ok_or_else(|| ApiError::NotFound(format!("unknown item {item_id:?}")))?;
        let p = Presentation::for_judge(item_id, judge_id, self.options.judge_seed);
        let (left, right) = p.arrange(item);
        Ok(PresentedItem {
            item_id: item_id.to_string(),
            judge_id: judge_id.to_string(),
            question: item.question.clone(),
            left: left.to_string(),
            right: right.to_string(),
        })
    }

    /// Adds a batch atomically: either every vote is accepted or none is.
    pub fn add_votes(&self, batch: &[VoteInput]) -> Result<TallyResponse, ApiError> {
        let mut resolved = Vec::with_capacity(batch.len());
        for (k, v) in batch.iter().enumerate() {
            let choice = match (v.choice, v.side) {
                (Some(c), None) => c,
                (None, Some(side)) => {
                    Presentation::for_judge(&v.item_id, &v.judge_id, self.options.judge_seed)
                        .resolve(side)
                }
                _ => {
                    return Err(bad_field(
                        &format!("[{k}].choice"),
                        "exactly one of choice or side is required",
                    ))
                }
            };
            resolved.push(JudgeVote {
                item_id: v.item_id.clone(),
                judge_id: v.judge_id.clone(),
                choice,
            });
        }
        let mut votes = self.votes.lock().unwrap();
        let mut candidate = votes.clone();
        candidate.extend(resolved);
        let response = tally_response(&candidate)?;
        *votes = candidate;
        Ok(response)
    }

    pub fn tally(&self) -> Result<TallyResponse, ApiError> {
        tally_response(&self.votes.lock().unwrap())
    }
}

fn tally_response(votes: &[JudgeVote]) -> Result<TallyResponse, ApiError> {
    match partial_tally(votes) {
        Ok((tally, pending)) => Ok(TallyResponse {
            scored: tally.total(),
            tally,
            pending,
        }),
        Err(e @ (EvalError::DuplicateVote { .. } | EvalError::VoteCount { .. })) => {
            Err(ApiError::Conflict(e.to_string()))
        }
        Err(e) => Err(ApiError::BadRequest {
            message: e.to_string(),
            field: None,
        }),
    }
}

async fn blocking<T: Send + 'static>(
    state: &SharedState,
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| state.internal(e))?
}

async fn create_session(State(state): State<SharedState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "session_id": state.create_session() }))
}

async fn chat(
    State(state): State<SharedState>,
    body: Bytes,
) -> Result<Json<ChatResponse>, ApiError> {
    let req: ChatRequest = parse_body(&body)?;
    if req.message.trim().is_empty() {
        return Err(bad_field("message", "message must not be empty"));
    }
    let width = req.beam_width.unwrap_or(1);
    if width == 0 || width > state.options.max_beam {
        return Err(bad_field(
            "beam_width",
            format!(
                "beam_width must be between 1 and {}",
                state.options.max_beam
            ),
        ));
    }
    let session = state.session(&req.session_id)?;
    let st = state.clone();
    blocking(&state, move || st.chat_turn(&session, &req.message, width))
        .await
        .map(Json)
}

async fn get_session(
    State(state): State<SharedState>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id)?;
    let s = session.lock().unwrap();
    Ok(Json(SessionView {
        session_id: s.id.clone(),
        created_ms: s.created_ms,
        last_active_ms: s.last_active_ms,
        turn_count: s.turn_count,
        context_tokens: s.context_len(),
        transcript: s.transcript.clone(),
    }))
}

async fn compare(
    State(state): State<SharedState>,
    body: Bytes,
) -> Result<Json<CompareResponse>, ApiError> {
    let req: CompareRequest = parse_body(&body)?;
    if req.questions.is_empty() {
        return Err(bad_field("questions", "at least one question is required"));
    }
    let st = state.clone();
    blocking(&state, move || st.compare(&req)).await.map(Json)
}

async fn present_item(
    State(state): State<SharedState>,
    Path(item_id): Path<String>,
    Query(q): Query<JudgeQuery>,
) -> Result<Json<PresentedItem>, ApiError> {
    let judge = q
        .judge_id
        .ok_or_else(|| bad_field("judge_id", "judge_id query parameter is required"))?;
    state.present(&item_id, &judge).map(Json)
}

async fn post_votes(
    State(state): State<SharedState>,
    body: Bytes,
) -> Result<Json<TallyResponse>, ApiError> {
    let batch: Vec<VoteInput> = parse_body(&body)?;
    state.add_votes(&batch).map(Json)
}

async fn get_votes(State(state): State<SharedState>) -> Result<Json<TallyResponse>, ApiError> {
    state.tally().map(Json)
}

async fn health(State(state): State<SharedState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "vocab_size": state.engine.checkpoint.vocab.len(),
        "sessions": state.sessions.read().unwrap().len(),
    }))
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}", get(get_session))
        .route("/api/chat", post(chat))
        .route("/api/compare", post(compare))
        .route("/api/compare/{item_id}", get(present_item))
        .route("/api/votes", post(post_votes).get(get_votes))
        .route("/api/health", get(health))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: SharedState, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
