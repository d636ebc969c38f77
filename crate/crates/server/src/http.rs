//! REST API and the `/api/feed` stream.

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use gatekeeper_core::{AccessDecision, ContentHash, EventFilter, GateId, PolicyError, ServerGuid, UserId};
use serde::{Deserialize, Serialize};

use crate::feed::{FeedFrame, FeedItem};
use crate::service::{AccessService, CheckInRequest, ServiceError};
use crate::storage::{StorageError, MAX_PHOTO_BYTES};

/// Header carrying an RFC 3339 decision time; honoured only in test mode.
pub const VIRTUAL_TIME_HEADER: &str = "x-gatekeeper-virtual-time";

type AppState = Arc<AccessService>;

pub fn router(service: Arc<AccessService>) -> Router {
    Router::new()
        .route("/api/gates", post(register_gate).get(list_gates))
        .route("/api/gates/{id}/policies", get(list_policies))
        .route("/api/gates/{id}/policies/{user}", put(upsert_policy))
        .route("/api/users", post(register_user).get(list_users))
        .route("/api/users/{id}/active", put(set_user_active))
        .route("/api/checkin", post(check_in))
        .route("/api/events", get(query_events))
        .route("/api/photos/{hash}", get(get_photo))
        .route("/api/feed", get(feed))
        .route("/api/health", get(|| async { "ok" }))
        // room for multipart framing around a maximum-size photo
        .layer(DefaultBodyLimit::max(MAX_PHOTO_BYTES * 2))
        .with_state(service)
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

#[derive(Debug)]
pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(ServiceError::BadRequest(msg.into()))
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use ServiceError as E;
        let (status, code) = match &self.0 {
            E::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
            E::VirtualTimeRefused => (StatusCode::FORBIDDEN, "virtual_time_refused"),
            E::Policy(PolicyError::DuplicateName(_)) => (StatusCode::CONFLICT, "duplicate_name"),
            E::Policy(PolicyError::MissingName(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "missing_name"),
            E::Policy(PolicyError::MissingExpiration) => (StatusCode::UNPROCESSABLE_ENTITY, "missing_expiration"),
            E::Policy(PolicyError::UnknownUser(_)) => (StatusCode::NOT_FOUND, "unknown_user"),
            E::Policy(PolicyError::UnknownGate(_)) => (StatusCode::NOT_FOUND, "unknown_gate"),
            E::Policy(PolicyError::GateIdsExhausted) => (StatusCode::INSUFFICIENT_STORAGE, "gate_ids_exhausted"),
            E::InvalidPhoto(StorageError::TooLarge(_)) => (StatusCode::PAYLOAD_TOO_LARGE, "too_large"),
            E::InvalidPhoto(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_photo"),
            E::BadTimeRange => (StatusCode::BAD_REQUEST, "bad_time_range"),
            E::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            E::NotFound => (StatusCode::NOT_FOUND, "not_found"),
            E::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        if status.is_server_error() {
            tracing::error!("{}", self.0);
        }
        let body = ErrorBody {
            error: code,
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bearer(headers: &HeaderMap) -> Option<String> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(|t| t.trim().to_owned())
}

/// Runs blocking service work (file I/O, fsync) off the async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| bad_request(format!("worker failed: {e}")))?
        .map_err(ApiError)
}

#[derive(Deserialize)]
struct GateForm {
    name: String,
    #[serde(default)]
    location: String,
}

async fn register_gate(State(svc): State<AppState>, headers: HeaderMap, Json(form): Json<GateForm>) -> ApiResult<impl IntoResponse> {
    let token = bearer(&headers);
    let reg = blocking(move || svc.register_gate(token.as_deref(), &form.name, &form.location)).await?;
    Ok((StatusCode::CREATED, Json(reg)))
}

async fn list_gates(State(svc): State<AppState>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.list_gates(bearer(&headers).as_deref())?))
}

async fn list_users(State(svc): State<AppState>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.list_users(bearer(&headers).as_deref())?))
}

/// Text fields and the single `photo` file of a multipart body.
struct Form {
    fields: HashMap<String, String>,
    photo: Option<Vec<u8>>,
}

async fn read_form(mut multipart: Multipart) -> ApiResult<Form> {
    let mut form = Form {
        fields: HashMap::new(),
        photo: None,
    };
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| bad_request(format!("multipart: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_owned();
        let data = field
            .bytes()
            .await
            .map_err(|e| bad_request(format!("multipart field `{name}`: {e}")))?;
        if name == "photo" {
            form.photo = Some(data.to_vec());
        } else {
            let text = String::from_utf8(data.to_vec())
                .map_err(|_| bad_request(format!("field `{name}` is not UTF-8")))?;
            form.fields.insert(name, text);
        }
    }
    Ok(form)
}

async fn register_user(State(svc): State<AppState>, headers: HeaderMap, multipart: Multipart) -> ApiResult<impl IntoResponse> {
    let token = bearer(&headers);
    svc.authorize_admin(token.as_deref())?;
    let form = read_form(multipart).await?;
    let first = form.fields.get("first_name").cloned().unwrap_or_default();
    let last = form.fields.get("last_name").cloned().unwrap_or_default();
    let photo = form.photo.unwrap_or_default();
    let reg = blocking(move || svc.register_user(token.as_deref(), &first, &last, &photo)).await?;
    Ok((StatusCode::CREATED, Json(reg)))
}

#[derive(Deserialize)]
struct ActiveForm {
    active: bool,
}

async fn set_user_active(
    State(svc): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<u64>,
    Json(form): Json<ActiveForm>,
) -> ApiResult<impl IntoResponse> {
    let token = bearer(&headers);
    let user = blocking(move || svc.set_user_active(token.as_deref(), UserId(id), form.active)).await?;
    Ok(Json(user))
}

#[derive(Serialize, Deserialize)]
pub struct CheckInResponse {
    #[serde(flatten)]
    pub decision: AccessDecision,
    pub event_seq: u64,
}

fn parse_time(field: &str, value: &str) -> ApiResult<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(value)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| bad_request(format!("`{field}` is not an RFC 3339 time: {e}")))
}

async fn check_in(State(svc): State<AppState>, headers: HeaderMap, multipart: Multipart) -> ApiResult<impl IntoResponse> {
    let token = bearer(&headers);
    let virtual_time = headers
        .get(VIRTUAL_TIME_HEADER)
        .map(|v| {
            v.to_str()
                .map_err(|_| bad_request("virtual time header is not text"))
                .and_then(|s| parse_time(VIRTUAL_TIME_HEADER, s))
        })
        .transpose()?;
    let now = svc.decision_time(virtual_time)?;

    let form = read_form(multipart).await?;
    let guid = form.fields.get("guid").and_then(|g| ServerGuid::from_hex(g.trim()));
    let gate_id: GateId = form
        .fields
        .get("gate_id")
        .ok_or_else(|| bad_request("missing `gate_id`"))?
        .trim()
        .parse()
        .map_err(|_| bad_request("`gate_id` is not an unsigned 32-bit integer"))?;
    let client_time = form
        .fields
        .get("client_time")
        .filter(|s| !s.is_empty())
        .map(|s| parse_time("client_time", s))
        .transpose()?;
    let req = CheckInRequest {
        server_guid: guid,
        gate_id,
        photo: form.photo.unwrap_or_default(),
        client_time,
    };
    let event = blocking(move || svc.check_in(token.as_deref(), req, now)).await?;
    Ok(Json(CheckInResponse {
        decision: event.decision,
        event_seq: event.event_seq,
    }))
}

fn parse_flag(value: &str) -> ApiResult<bool> {
    match value {
        "" | "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(bad_request(format!("`denied_only` must be a boolean, got `{other}`"))),
    }
}

fn parse_filter(params: &HashMap<String, String>) -> ApiResult<EventFilter> {
    let num = |key: &str| -> ApiResult<Option<u64>> {
        params
            .get(key)
            .filter(|v| !v.is_empty())
            .map(|v| v.parse().map_err(|_| bad_request(format!("`{key}` is not a number"))))
            .transpose()
    };
    let gate_id = num("gate")?
        .map(|g| GateId::try_from(g).map_err(|_| bad_request("`gate` out of range")))
        .transpose()?;
    Ok(EventFilter {
        time_from: params.get("from").filter(|v| !v.is_empty()).map(|v| parse_time("from", v)).transpose()?,
        time_to: params.get("to").filter(|v| !v.is_empty()).map(|v| parse_time("to", v)).transpose()?,
        gate_id,
        user_id: num("user")?.map(UserId),
        denied_only: params.get("denied_only").map(|v| parse_flag(v)).transpose()?.unwrap_or(false),
    })
}

async fn query_events(
    State(svc): State<AppState>,
    headers: HeaderMap,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<impl IntoResponse> {
    let token = bearer(&headers);
    svc.authorize_admin(token.as_deref())?;
    let filter = parse_filter(&params)?;
    let parse_usize = |key: &str| -> ApiResult<Option<usize>> {
        params
            .get(key)
            .map(|v| v.parse().map_err(|_| bad_request(format!("`{key}` is not a number"))))
            .transpose()
    };
    let page = parse_usize("page")?.unwrap_or(0);
    let per_page = parse_usize("per_page")?;
    Ok(Json(svc.query_events(token.as_deref(), &filter, page, per_page)?))
}

async fn list_policies(State(svc): State<AppState>, headers: HeaderMap, Path(id): Path<GateId>) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.list_policies_for_gate(bearer(&headers).as_deref(), id)?))
}

#[derive(Deserialize)]
struct PolicyForm {
    #[serde(default = "enabled_by_default")]
    enabled: bool,
    #[serde(default)]
    expires_at: Option<DateTime<Utc>>,
}

fn enabled_by_default() -> bool {
    true
}

async fn upsert_policy(
    State(svc): State<AppState>,
    headers: HeaderMap,
    Path((gate, user)): Path<(GateId, u64)>,
    Json(form): Json<PolicyForm>,
) -> ApiResult<impl IntoResponse> {
    let token = bearer(&headers);
    let policy =
        blocking(move || svc.upsert_policy(token.as_deref(), UserId(user), gate, form.enabled, form.expires_at)).await?;
    Ok(Json(policy))
}

async fn get_photo(State(svc): State<AppState>, headers: HeaderMap, Path(hash): Path<String>) -> ApiResult<impl IntoResponse> {
    let token = bearer(&headers);
    svc.authorize_admin(token.as_deref())?;
    let hash: ContentHash = hash.parse().map_err(|_| ApiError(ServiceError::NotFound))?;
    let blob = blocking(move || svc.get_photo(token.as_deref(), &hash)).await?;
    Ok((
        [
            (header::CONTENT_TYPE, blob.media_type.mime()),
            (header::CACHE_CONTROL, "private, max-age=31536000, immutable"),
        ],
        blob.bytes,
    ))
}

async fn feed(
    State(svc): State<AppState>,
    headers: HeaderMap,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let token = bearer(&headers);
    svc.authorize_admin(token.as_deref())?;
    let mut filter = parse_filter(&params)?;
    filter.time_from = None;
    filter.time_to = None;
    let sub = svc.subscribe(token.as_deref(), filter)?;
    let period = svc.config().heartbeat;
    let ticker = tokio::time::interval_at(tokio::time::Instant::now() + period, period);

    // An immediate heartbeat flushes the response head, so a client that has
    // read one frame knows the subscription is live.
    let first = futures::stream::once(async { Ok::<_, Infallible>(FeedFrame::Heartbeat.to_line()) });
    let rest = futures::stream::unfold((sub, ticker, false), |(sub, mut ticker, done)| async move {
        if done {
            return None;
        }
        tokio::select! {
            item = sub.next() => match item {
                Some(FeedItem::Event(e)) => Some((Ok(FeedFrame::Event(e).to_line()), (sub, ticker, false))),
                Some(FeedItem::Overflow) => {
                    let frame = FeedFrame::Error { reason: "overflow".into() };
                    Some((Ok(frame.to_line()), (sub, ticker, true)))
                }
                None => None,
            },
            _ = ticker.tick() => Some((Ok(FeedFrame::Heartbeat.to_line()), (sub, ticker, false))),
        }
    });
    let body = Body::from_stream(futures::StreamExt::chain(first, rest));
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-ndjson"),
            (header::CACHE_CONTROL, "no-cache"),
        ],
        body,
    )
        .into_response())
}
