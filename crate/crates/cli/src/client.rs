//! Blocking HTTP client for the organization server.

use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use gatekeeper_core::{AccessDecision, AccessEvent, AccessPolicy, Gate, GateId, GateTagPayload, ServerGuid, User, UserId};
use reqwest::blocking::multipart::{Form, Part};
use reqwest::blocking::{Client, RequestBuilder, Response};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VIRTUAL_TIME_HEADER: &str = "x-gatekeeper-virtual-time";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("server answered {status}: {code}: {message}")]
    Api { status: u16, code: String, message: String },
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned an unexpected body: {0}")]
    BadBody(String),
}

impl ClientError {
    /// Machine-readable error code, when the server sent one.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateRegistration {
    pub gate: Gate,
    pub server_guid: String,
    pub gate_id: GateId,
    pub android_app_id: String,
    pub universal_link: String,
    pub tag_password: String,
}

impl GateRegistration {
    pub fn payload(&self) -> Result<GateTagPayload> {
        let server_guid = ServerGuid::from_hex(&self.server_guid)
            .ok_or_else(|| ClientError::BadBody(format!("server_guid `{}` is not 32 hex digits", self.server_guid)))?;
        Ok(GateTagPayload {
            server_guid,
            gate_id: self.gate_id,
            android_app_id: self.android_app_id.clone(),
            universal_link: self.universal_link.clone(),
        })
    }

    pub fn password(&self) -> Result<[u8; 4]> {
        hex::decode(&self.tag_password)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| ClientError::BadBody("tag_password is not 4 hex-encoded bytes".into()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserRegistration {
    pub user: User,
    pub device_token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckInResponse {
    #[serde(flatten)]
    pub decision: AccessDecision,
    pub event_seq: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventPage {
    pub events: Vec<AccessEvent>,
    pub page: usize,
    pub per_page: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyRow {
    pub user: User,
    pub policy: AccessPolicy,
}

/// Query for `GET /api/events`.
#[derive(Debug, Clone, Default)]
pub struct EventQuery {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
    pub gate: Option<GateId>,
    pub user: Option<UserId>,
    pub denied_only: bool,
    pub page: usize,
    pub per_page: Option<usize>,
}

impl EventQuery {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut q = vec![("page", self.page.to_string())];
        if let Some(t) = self.from {
            q.push(("from", rfc3339(t)));
        }
        if let Some(t) = self.to {
            q.push(("to", rfc3339(t)));
        }
        if let Some(g) = self.gate {
            q.push(("gate", g.to_string()));
        }
        if let Some(u) = self.user {
            q.push(("user", u.to_string()));
        }
        if self.denied_only {
            q.push(("denied_only", "true".into()));
        }
        if let Some(n) = self.per_page {
            q.push(("per_page", n.to_string()));
        }
        q
    }
}

/// What a phone submits after reading a gate tag.
#[derive(Debug, Clone)]
pub struct CheckIn<'a> {
    pub guid: String,
    pub gate_id: GateId,
    pub photo: &'a [u8],
    pub client_time: Option<DateTime<Utc>>,
    /// Decision time override; only honoured by servers in test mode.
    pub virtual_time: Option<DateTime<Utc>>,
}

pub fn rfc3339(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

#[derive(Debug, Clone)]
pub struct ApiClient {
    base: String,
    http: Client,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
    #[serde(default)]
    message: String,
}

impl ApiClient {
    pub fn new(base: &str) -> Result<Self> {
        let http = Client::builder().timeout(Duration::from_secs(60)).build()?;
        Ok(Self {
            base: base.trim_end_matches('/').to_owned(),
            http,
        })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn send<T: DeserializeOwned>(req: RequestBuilder) -> Result<T> {
        let resp: Response = req.send()?;
        let status = resp.status();
        let body = resp.bytes()?;
        if status.is_success() {
            return serde_json::from_slice(&body).map_err(|e| ClientError::BadBody(e.to_string()));
        }
        match serde_json::from_slice::<ErrorBody>(&body) {
            Ok(e) => Err(ClientError::Api {
                status: status.as_u16(),
                code: e.error,
                message: e.message,
            }),
            Err(_) => Err(ClientError::Api {
                status: status.as_u16(),
                code: "http".into(),
                message: String::from_utf8_lossy(&body).into_owned(),
            }),
        }
    }

    pub fn register_gate(&self, admin: &str, name: &str, location: &str) -> Result<GateRegistration> {
        let body = serde_json::json!({ "name": name, "location": location });
        Self::send(self.http.post(self.url("/api/gates")).bearer_auth(admin).json(&body))
    }

    pub fn list_gates(&self, admin: &str) -> Result<Vec<Gate>> {
        Self::send(self.http.get(self.url("/api/gates")).bearer_auth(admin))
    }

    pub fn register_user(&self, admin: &str, first: &str, last: &str, photo: &[u8]) -> Result<UserRegistration> {
        let form = Form::new()
            .text("first_name", first.to_owned())
            .text("last_name", last.to_owned())
            .part("photo", Part::bytes(photo.to_vec()).file_name("registration"));
        Self::send(self.http.post(self.url("/api/users")).bearer_auth(admin).multipart(form))
    }

    pub fn list_users(&self, admin: &str) -> Result<Vec<User>> {
        Self::send(self.http.get(self.url("/api/users")).bearer_auth(admin))
    }

    pub fn set_user_active(&self, admin: &str, user: UserId, active: bool) -> Result<User> {
        let body = serde_json::json!({ "active": active });
        Self::send(
            self.http
                .put(self.url(&format!("/api/users/{user}/active")))
                .bearer_auth(admin)
                .json(&body),
        )
    }

    pub fn upsert_policy(
        &self,
        admin: &str,
        user: UserId,
        gate: GateId,
        enabled: bool,
        expires_at: Option<DateTime<Utc>>,
    ) -> Result<AccessPolicy> {
        let body = serde_json::json!({ "enabled": enabled, "expires_at": expires_at.map(rfc3339) });
        Self::send(
            self.http
                .put(self.url(&format!("/api/gates/{gate}/policies/{user}")))
                .bearer_auth(admin)
                .json(&body),
        )
    }

    pub fn list_policies(&self, admin: &str, gate: GateId) -> Result<Vec<PolicyRow>> {
        Self::send(self.http.get(self.url(&format!("/api/gates/{gate}/policies"))).bearer_auth(admin))
    }

    pub fn check_in(&self, device_token: &str, req: &CheckIn<'_>) -> Result<CheckInResponse> {
        let mut form = Form::new()
            .text("guid", req.guid.clone())
            .text("gate_id", req.gate_id.to_string())
            .part("photo", Part::bytes(req.photo.to_vec()).file_name("gate"));
        if let Some(t) = req.client_time {
            form = form.text("client_time", rfc3339(t));
        }
        let mut builder = self.http.post(self.url("/api/checkin")).bearer_auth(device_token).multipart(form);
        if let Some(t) = req.virtual_time {
            builder = builder.header(VIRTUAL_TIME_HEADER, rfc3339(t));
        }
        Self::send(builder)
    }

    pub fn events(&self, admin: &str, query: &EventQuery) -> Result<EventPage> {
        Self::send(self.http.get(self.url("/api/events")).bearer_auth(admin).query(&query.pairs()))
    }

    /// Every event matching `query`, oldest first, fetched page by page.
    pub fn all_events(&self, admin: &str, query: &EventQuery) -> Result<Vec<AccessEvent>> {
        let mut q = query.clone();
        q.per_page = Some(1000);
        q.page = 0;
        let mut out = Vec::new();
        loop {
            let page = self.events(admin, &q)?;
            let n = page.events.len();
            out.extend(page.events);
            if n == 0 || out.len() >= page.total {
                break;
            }
            q.page += 1;
        }
        out.reverse();
        Ok(out)
    }
}

/// Reads a photo from disk, failing before any request is made.
pub fn read_photo(path: &Path) -> std::io::Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{} is empty", path.display()),
        ));
    }
    Ok(bytes)
}
