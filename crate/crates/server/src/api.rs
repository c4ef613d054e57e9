//! JSON-over-HTTP API, versioned under `/v1`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use trackfill_core::controls::{compute_controls, duration_range, polyphony_range, ControlSpec, ControlTable};
use trackfill_core::predictor::TokenPredictor;
use trackfill_core::sampler::{generate_tracks, infill_bars, SampleError, SampleParams, TrackRequest};
use trackfill_core::score::{Piece, Track};
use trackfill_core::tokenizer::vocab::ids;
use trackfill_core::tokenizer::{encode_barfill, EncodeError, EncodeOptions, Vocab};

use crate::workspace::{Workspace, WorkspaceError};

#[derive(Clone)]
pub struct AppState {
    pub workspace: Arc<Workspace>,
    pub predictor: Arc<dyn TokenPredictor>,
    pub vocab: Arc<Vocab>,
    pub table: Option<Arc<ControlTable>>,
    pub defaults: SampleParams,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/pieces", post(upload))
        .route("/v1/pieces/{id}", get(summary))
        .route("/v1/pieces/{id}/infill", post(infill))
        .route("/v1/pieces/{id}/tracks:generate", post(generate))
        .route("/v1/pieces/{id}/midi", get(download))
        .route("/v1/meta/vocab", get(vocab_table))
        .route("/v1/meta/density-table", get(density_table))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    class: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, class: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, class, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no piece with id {id:?}"))
    }

    fn unprocessable(class: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, class, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(class = self.class, "{}", self.message);
        }
        (self.status, Json(json!({ "error": { "class": self.class, "message": self.message } }))).into_response()
    }
}

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> Self {
        match e {
            WorkspaceError::Midi(m) => ApiError::bad_request(format!("not a MIDI file: {m}")),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "workspace", other.to_string()),
        }
    }
}

impl From<SampleError> for ApiError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::RetriesExhausted { .. } => {
                ApiError::new(StatusCode::CONFLICT, "retries_exhausted", e.to_string())
            }
            SampleError::EmptyMask
            | SampleError::Encode(EncodeError::EmptyMask | EncodeError::MaskOutOfRange { .. }) => {
                ApiError::unprocessable("invalid_mask", e.to_string())
            }
            SampleError::InvalidRequest(_) | SampleError::Temperature(_) | SampleError::Encode(_) => {
                ApiError::unprocessable("invalid_request", e.to_string())
            }
            SampleError::Budget { .. } => ApiError::unprocessable("budget_exhausted", e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "generation", other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TrackSummary {
    pub index: usize,
    pub program: String,
    pub is_drum: bool,
    pub notes: usize,
    /// Note onsets per bar, for drawing a piano-roll overview.
    pub bar_notes: Vec<usize>,
    pub controls: ControlSpec,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PieceSummary {
    pub id: String,
    pub bars: usize,
    pub meters: Vec<String>,
    pub ticks_per_quarter: u16,
    pub tracks: Vec<TrackSummary>,
}

fn track_controls(track: &Track, table: Option<&ControlTable>) -> ControlSpec {
    match table {
        Some(t) => compute_controls(track, t),
        None => ControlSpec {
            density: None,
            poly_range: polyphony_range(track).ok(),
            dur_range: duration_range(track).ok(),
        },
    }
}

fn summarize(id: String, piece: &Piece, table: Option<&ControlTable>) -> PieceSummary {
    PieceSummary {
        id,
        bars: piece.bar_count(),
        meters: piece.meters().iter().map(ToString::to_string).collect(),
        ticks_per_quarter: piece.ticks_per_quarter,
        tracks: piece
            .tracks
            .iter()
            .enumerate()
            .map(|(index, t)| TrackSummary {
                index,
                program: t.program.key(),
                is_drum: t.program.is_drum(),
                notes: t.note_count(),
                bar_notes: t.bars.iter().map(|b| b.notes().len()).collect(),
                controls: track_controls(t, table),
            })
            .collect(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UploadJson {
    midi_base64: String,
}

/// Accepts `{"midi_base64": ...}` or a multipart form with a `file` field.
async fn upload(State(state): State<AppState>, req: Request) -> ApiResult<(StatusCode, Json<PieceSummary>)> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let bytes: Vec<u8> = if is_multipart {
        let mut form = Multipart::from_request(req, &state).await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        let mut file = None;
        while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.body_text()))? {
            if field.name() == Some("file") {
                file = Some(field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?.to_vec());
            }
        }
        file.ok_or_else(|| ApiError::bad_request("multipart upload needs a `file` field"))?
    } else {
        let Json(body) =
            Json::<UploadJson>::from_request(req, &state).await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        base64::engine::general_purpose::STANDARD
            .decode(body.midi_base64.trim())
            .map_err(|e| ApiError::bad_request(format!("midi_base64 is not base64: {e}")))?
    };
    let ws = state.workspace.clone();
    let (id, piece) = tokio::task::spawn_blocking(move || ws.put_midi(&bytes)).await.map_err(join_error)??;
    Ok((StatusCode::CREATED, Json(summarize(id, &piece, state.table.as_deref()))))
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

fn load(state: &AppState, id: &str) -> ApiResult<Arc<Piece>> {
    state.workspace.get(id)?.ok_or_else(|| ApiError::not_found(id))
}

async fn summary(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<PieceSummary>> {
    let piece = load(&state, &id)?;
    Ok(Json(summarize(id, &piece, state.table.as_deref())))
}

#[derive(Deserialize)]
struct MidiQuery {
    #[serde(default)]
    expressive: bool,
}

async fn download(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<MidiQuery>,
) -> ApiResult<Response> {
    let bytes = if q.expressive {
        state.workspace.midi(&id)?.ok_or_else(|| ApiError::not_found(&id))?
    } else {
        trackfill_core::midi::write_midi(&*load(&state, &id)?, false)
    };
    Ok(([(header::CONTENT_TYPE, "audio/midi")], Bytes::from(bytes)).into_response())
}

#[derive(Deserialize)]
struct TrackControls {
    track: usize,
    #[serde(flatten)]
    spec: ControlSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InfillRequest {
    mask: Vec<(usize, usize)>,
    temperature: Option<f64>,
    l_poly: Option<u32>,
    #[serde(default)]
    controls: Vec<TrackControls>,
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct InfillResponse {
    pub id: String,
    pub changed: Vec<(usize, usize)>,
    /// Tokens of the accepted fill section.
    pub tokens_used: usize,
}

/// Annotates every track when controls are in play, then applies the
/// per-track overrides.
fn with_controls(piece: &Piece, table: Option<&ControlTable>, overrides: &[TrackControls]) -> ApiResult<Option<Piece>> {
    let Some(table) = table else {
        if overrides.is_empty() {
            return Ok(None);
        }
        return Err(ApiError::unprocessable("no_density_table", "controls need a density table in the config"));
    };
    let mut out = trackfill_core::controls::annotate(piece, table);
    for o in overrides {
        let track = out
            .tracks
            .get_mut(o.track)
            .ok_or_else(|| ApiError::unprocessable("invalid_request", format!("no track {}", o.track)))?;
        let current = track.controls.take().unwrap_or_default();
        track.controls = Some(o.spec.or(&current));
    }
    Ok(Some(out))
}

fn params(
    state: &AppState,
    temperature: Option<f64>,
    seed: Option<u64>,
    l_poly: Option<u32>,
    controls: bool,
) -> SampleParams {
    SampleParams {
        temperature: temperature.unwrap_or(state.defaults.temperature),
        seed: seed.unwrap_or(state.defaults.seed),
        l_poly: l_poly.or(state.defaults.l_poly),
        with_controls: controls,
        ..state.defaults.clone()
    }
}

fn strip_controls(mut piece: Piece) -> Piece {
    for t in &mut piece.tracks {
        t.controls = None;
    }
    piece
}

async fn infill(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<InfillRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<(StatusCode, Json<InfillResponse>)> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let piece = load(&state, &id)?;
    if req.mask.is_empty() {
        return Err(ApiError::unprocessable("invalid_mask", "mask is empty"));
    }
    if let Some(&(t, b)) = req.mask.iter().find(|&&(t, b)| t >= piece.tracks.len() || b >= piece.bar_count()) {
        return Err(ApiError::unprocessable("invalid_mask", format!("cell (track {t}, bar {b}) is outside the piece")));
    }
    let annotated = with_controls(&piece, state.table.as_deref(), &req.controls)?;
    let p = params(&state, req.temperature, req.seed, req.l_poly, annotated.is_some());
    let source = annotated.unwrap_or_else(|| (*piece).clone());
    let st = state.clone();
    let mask = req.mask.clone();
    let (result, tokens_used) = tokio::task::spawn_blocking(move || -> Result<(Piece, usize), SampleError> {
        let out = infill_bars(&source, &mask, st.predictor.as_ref(), &st.vocab, &p)?;
        let opts = EncodeOptions { expressive: p.expressive, with_controls: p.with_controls };
        let seq = encode_barfill(&out, &st.vocab, &mask, opts)?;
        let fills = seq.ids.iter().position(|&i| i == ids::FILL_START).map_or(0, |cut| seq.ids.len() - cut);
        Ok((out, fills))
    })
    .await
    .map_err(join_error)??;
    let ws = state.workspace.clone();
    let (new_id, _) =
        tokio::task::spawn_blocking(move || ws.put_piece(&strip_controls(result))).await.map_err(join_error)??;
    let mut changed = req.mask;
    changed.sort_unstable();
    changed.dedup();
    Ok((StatusCode::CREATED, Json(InfillResponse { id: new_id, changed, tokens_used })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateRequest {
    n_new: usize,
    #[serde(default)]
    overrides: Vec<TrackRequest>,
    temperature: Option<f64>,
    l_poly: Option<u32>,
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GenerateResponse {
    pub id: String,
    pub new_track_indices: Vec<usize>,
}

async fn generate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<GenerateRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<(StatusCode, Json<GenerateResponse>)> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let piece = load(&state, &id)?;
    if req.n_new == 0 {
        return Err(ApiError::unprocessable("invalid_request", "n_new must be at least 1"));
    }
    let wants_controls = req.overrides.iter().any(|o| !o.controls.is_empty());
    if wants_controls && state.table.is_none() {
        return Err(ApiError::unprocessable("no_density_table", "controls need a density table in the config"));
    }
    let annotated = state.table.as_deref().map(|t| trackfill_core::controls::annotate(&piece, t));
    let p = params(&state, req.temperature, req.seed, req.l_poly, annotated.is_some());
    let source = annotated.unwrap_or_else(|| (*piece).clone());
    let existing = piece.tracks.len();
    let st = state.clone();
    let result = tokio::task::spawn_blocking(move || {
        generate_tracks(&source, req.n_new, &req.overrides, st.predictor.as_ref(), &st.vocab, &p)
    })
    .await
    .map_err(join_error)??;
    let total = result.tracks.len();
    let ws = state.workspace.clone();
    let (new_id, _) =
        tokio::task::spawn_blocking(move || ws.put_piece(&strip_controls(result))).await.map_err(join_error)??;
    Ok((StatusCode::CREATED, Json(GenerateResponse { id: new_id, new_track_indices: (existing..total).collect() })))
}

async fn vocab_table(State(state): State<AppState>) -> Json<serde_json::Value> {
    let mut v = serde_json::to_value(state.vocab.table()).expect("vocab table serializes");
    v["hash"] = json!(state.vocab.hash());
    Json(v)
}

async fn density_table(State(state): State<AppState>) -> ApiResult<Response> {
    let table = state
        .table
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", "no density table is configured"))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], table.to_json()).into_response())
}
