use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use tokio_stream::wrappers::BroadcastStream;
use uuid::Uuid;

use posecal_core::{BoardPose, Error, ImageSize};

use crate::rig::{GuidanceSnapshot, Reveal, RigConfig, RigSession};

const EVENT_BUFFER: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("unknown session {0}")]
    NotFound(Uuid),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("session has not converged")]
    NotConverged,
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) => ApiError::BadRequest(e.to_string()),
            _ => ApiError::Unprocessable(e.to_string()),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::NotConverged => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

struct Entry {
    session: Mutex<RigSession>,
    events: broadcast::Sender<GuidanceSnapshot>,
}

/// Live sessions keyed by id.
#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<Uuid, Arc<Entry>>>>,
}

impl AppState {
    fn entry(&self, id: Uuid) -> Result<Arc<Entry>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(&id)
            .cloned()
            .ok_or(ApiError::NotFound(id))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: Uuid,
    pub image_size: ImageSize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRequest {
    /// Axis-angle rotation followed by translation, in board units.
    pub pose: [f64; 6],
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/session", post(create))
        .route("/v1/session/{id}", get(status))
        .route("/v1/session/{id}/board-pose", post(submit))
        .route("/v1/session/{id}/events", get(events))
        .route("/v1/session/{id}/reveal", get(reveal))
        .with_state(state)
}

async fn create(
    State(state): State<AppState>,
    body: Option<Json<RigConfig>>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let config = body.map(|Json(c)| c).unwrap_or_default();
    let session = tokio::task::spawn_blocking(move || RigSession::new(config))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let id = Uuid::new_v4();
    let image_size = session.rig().camera.image_size;
    let (events, _) = broadcast::channel(EVENT_BUFFER);
    let entry = Arc::new(Entry {
        session: Mutex::new(session),
        events,
    });
    state.sessions.write().expect("session table poisoned").insert(id, entry);
    log::info!("created session {id} with {config:?}");
    Ok((StatusCode::CREATED, Json(Created { id, image_size })))
}

async fn status(State(state): State<AppState>, Path(id): Path<Uuid>) -> Result<Json<GuidanceSnapshot>, ApiError> {
    let entry = state.entry(id)?;
    let snap = entry.session.lock().expect("session poisoned").snapshot();
    Ok(Json(snap))
}

async fn submit(
    State(state): State<AppState>,
    Path(id): Path<Uuid>,
    Json(req): Json<PoseRequest>,
) -> Result<Json<GuidanceSnapshot>, ApiError> {
    if req.pose.iter().any(|v| !v.is_finite()) {
        return Err(ApiError::BadRequest("pose must be finite".into()));
    }
    let entry = state.entry(id)?;
    let pose = BoardPose::from_array(req.pose);
    // calibration runs on the blocking pool; the mutex serializes submissions
    let (snap, accepted) = tokio::task::spawn_blocking(move || {
        let mut session = entry.session.lock().expect("session poisoned");
        let out = session.submit(&pose)?;
        if out.1 {
            // no subscribers is fine
            let _ = entry.events.send(out.0.clone());
        }
        Ok::<_, Error>(out)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    if accepted {
        log::debug!("session {id}: frame accepted, {} keyframes", snap.frames_captured);
    }
    Ok(Json(snap))
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<Uuid>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let rx = state.entry(id)?.events.subscribe();
    let stream = BroadcastStream::new(rx).filter_map(|msg| async move {
        match msg {
            Ok(snap) => Some(Ok(Event::default()
                .event("transition")
                .id(snap.revision.to_string())
                .json_data(&snap)
                .expect("snapshot serializes"))),
            Err(e) => {
                log::warn!("event stream lagged: {e}");
                None
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn reveal(State(state): State<AppState>, Path(id): Path<Uuid>) -> Result<Json<Reveal>, ApiError> {
    let entry = state.entry(id)?;
    let out = entry.session.lock().expect("session poisoned").reveal();
    out.map(Json).ok_or(ApiError::NotConverged)
}
