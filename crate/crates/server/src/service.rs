//! Organization server logic, independent of the HTTP transport.

use std::path::PathBuf;
use std::time::Duration;

use chrono::{DateTime, Utc};
use gatekeeper_core::{
    AccessDecision, AccessEvent, AccessPolicy, ContentHash, DenyReason, EventFilter, Gate, GateId,
    GateTagPayload, PolicyError, ServerGuid, User, UserId,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feed::{EventFeed, Subscription, DEFAULT_BUFFER};
use crate::storage::{DirectoryState, PhotoBlob, Store, StorageError};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 1000;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Replaces the stored admin token when set.
    pub admin_token: Option<String>,
    pub android_app_id: String,
    pub universal_link: String,
    /// Allows callers to override the decision clock.
    pub test_mode: bool,
    pub feed_buffer: usize,
    pub heartbeat: Duration,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            admin_token: None,
            android_app_id: gatekeeper_core::DEFAULT_ANDROID_APP_ID.to_owned(),
            universal_link: gatekeeper_core::DEFAULT_UNIVERSAL_LINK.to_owned(),
            test_mode: false,
            feed_buffer: DEFAULT_BUFFER,
            heartbeat: Duration::from_secs(15),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("missing or invalid credentials")]
    Unauthorized,
    #[error("virtual time is only accepted in test mode")]
    VirtualTimeRefused,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid photo: {0}")]
    InvalidPhoto(StorageError),
    #[error("time_from is after time_to")]
    BadTimeRange,
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("not found")]
    NotFound,
    #[error("storage failure: {0}")]
    Storage(StorageError),
}

impl From<StorageError> for ServiceError {
    fn from(e: StorageError) -> Self {
        match e {
            StorageError::EmptyPhoto | StorageError::TooLarge(_) | StorageError::UndecodableImage => {
                ServiceError::InvalidPhoto(e)
            }
            other => ServiceError::Storage(other),
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

/// Everything an administrator needs to program a tag for a new gate.
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
    pub fn payload(&self) -> GateTagPayload {
        GateTagPayload {
            server_guid: ServerGuid::from_hex(&self.server_guid).expect("server guid is valid hex"),
            gate_id: self.gate_id,
            android_app_id: self.android_app_id.clone(),
            universal_link: self.universal_link.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserRegistration {
    pub user: User,
    pub device_token: String,
}

/// What the phone sends after reading a gate tag.
#[derive(Debug, Clone)]
pub struct CheckInRequest {
    /// GUID read from the tag; `None` when it was not valid hex.
    pub server_guid: Option<ServerGuid>,
    pub gate_id: GateId,
    pub photo: Vec<u8>,
    pub client_time: Option<DateTime<Utc>>,
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

pub struct AccessService {
    store: Store,
    feed: EventFeed,
    config: ServiceConfig,
}

impl AccessService {
    pub fn open(config: ServiceConfig) -> Result<Self> {
        let store = Store::open(&config.data_dir, config.admin_token.as_deref()).map_err(ServiceError::Storage)?;
        GateTagPayload {
            server_guid: store.credentials().guid(),
            gate_id: 0,
            android_app_id: config.android_app_id.clone(),
            universal_link: config.universal_link.clone(),
        }
        .validate()
        .map_err(|e| ServiceError::BadRequest(format!("configured tag identifiers: {e}")))?;
        Ok(Self {
            store,
            feed: EventFeed::new(),
            config,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn feed(&self) -> &EventFeed {
        &self.feed
    }

    pub fn server_guid(&self) -> ServerGuid {
        self.store.credentials().guid()
    }

    pub fn admin_token(&self) -> String {
        self.store.credentials().admin_token
    }

    pub fn authorize_admin(&self, token: Option<&str>) -> Result<()> {
        let expected = self.store.credentials().admin_token;
        match token {
            Some(t) if constant_time_eq(t.as_bytes(), expected.as_bytes()) => Ok(()),
            _ => Err(ServiceError::Unauthorized),
        }
    }

    /// Resolves the decision clock. An override is refused outside test mode.
    pub fn decision_time(&self, virtual_time: Option<DateTime<Utc>>) -> Result<DateTime<Utc>> {
        match virtual_time {
            Some(_) if !self.config.test_mode => Err(ServiceError::VirtualTimeRefused),
            Some(t) => Ok(t),
            None => Ok(Utc::now()),
        }
    }

    pub fn register_gate(&self, admin_token: Option<&str>, name: &str, location: &str) -> Result<GateRegistration> {
        self.authorize_admin(admin_token)?;
        let gate = self
            .store
            .update_directory(|s| s.directory.add_gate(name, location).map_err(ServiceError::from))?;
        let creds = self.store.credentials();
        tracing::info!(gate_id = gate.gate_id, name = %gate.name, "gate registered");
        Ok(GateRegistration {
            gate_id: gate.gate_id,
            gate,
            server_guid: creds.server_guid,
            android_app_id: self.config.android_app_id.clone(),
            universal_link: self.config.universal_link.clone(),
            tag_password: creds.tag_password,
        })
    }

    pub fn register_user(
        &self,
        admin_token: Option<&str>,
        first_name: &str,
        last_name: &str,
        photo: &[u8],
    ) -> Result<UserRegistration> {
        self.authorize_admin(admin_token)?;
        // name errors take precedence over photo errors
        if first_name.trim().is_empty() {
            return Err(PolicyError::MissingName("first name").into());
        }
        if last_name.trim().is_empty() {
            return Err(PolicyError::MissingName("last name").into());
        }
        let photo_hash = self.store.put_photo(photo, None)?;
        let device_token = hex::encode(rand::rng().random::<[u8; 32]>());
        let user = self.store.update_directory(|s| {
            let user = s.directory.add_user(first_name, last_name, photo_hash)?;
            s.devices
                .insert(DirectoryState::token_digest(&device_token), user.user_id);
            Ok::<_, ServiceError>(user)
        })?;
        tracing::info!(user_id = %user.user_id, "user registered");
        Ok(UserRegistration { user, device_token })
    }

    pub fn set_user_active(&self, admin_token: Option<&str>, user_id: UserId, active: bool) -> Result<User> {
        self.authorize_admin(admin_token)?;
        self.store
            .update_directory(|s| s.directory.set_user_active(user_id, active).map_err(ServiceError::from))
    }

    pub fn list_users(&self, admin_token: Option<&str>) -> Result<Vec<User>> {
        self.authorize_admin(admin_token)?;
        Ok(self.store.directory().directory.users().cloned().collect())
    }

    pub fn list_gates(&self, admin_token: Option<&str>) -> Result<Vec<Gate>> {
        self.authorize_admin(admin_token)?;
        Ok(self.store.directory().directory.gates().cloned().collect())
    }

    pub fn upsert_policy(
        &self,
        admin_token: Option<&str>,
        user_id: UserId,
        gate_id: GateId,
        enabled: bool,
        expires_at: Option<DateTime<Utc>>,
    ) -> Result<AccessPolicy> {
        self.authorize_admin(admin_token)?;
        self.store.update_directory(|s| {
            s.directory
                .upsert_policy(user_id, gate_id, enabled, expires_at)
                .map_err(ServiceError::from)
        })
    }

    pub fn list_policies_for_gate(&self, admin_token: Option<&str>, gate_id: GateId) -> Result<Vec<PolicyRow>> {
        self.authorize_admin(admin_token)?;
        let rows = self.store.directory().directory.list_policies_for_gate(gate_id)?;
        Ok(rows.into_iter().map(|(user, policy)| PolicyRow { user, policy }).collect())
    }

    /// Handles a check-in. Every request from a known device produces exactly
    /// one logged and published event; unknown devices are rejected without
    /// one.
    pub fn check_in(&self, device_token: Option<&str>, req: CheckInRequest, now: DateTime<Utc>) -> Result<AccessEvent> {
        let token = device_token.ok_or(ServiceError::Unauthorized)?;
        let state = self.store.directory();
        let user_id = state.user_for_token(token).ok_or(ServiceError::Unauthorized)?;
        let user = state.directory.user(user_id).cloned().ok_or(ServiceError::Unauthorized)?;
        let gate = state.directory.gate(req.gate_id).cloned();
        let policy_decision = state.directory.decide_access(user_id, req.gate_id, now);
        drop(state);

        let gate_photo = match self.store.put_photo(&req.photo, None) {
            Ok(hash) => Some(hash),
            Err(StorageError::EmptyPhoto | StorageError::TooLarge(_) | StorageError::UndecodableImage) => None,
            Err(e) => return Err(ServiceError::Storage(e)),
        };

        let decision = if !user.active {
            AccessDecision::denied(DenyReason::UnknownUser)
        } else if req.server_guid != Some(self.server_guid()) {
            AccessDecision::denied(DenyReason::UnknownOrg)
        } else if gate.is_none() {
            AccessDecision::denied(DenyReason::UnknownGate)
        } else if gate_photo.is_none() {
            AccessDecision::denied(DenyReason::MissingPhoto)
        } else {
            policy_decision
        };

        let event = AccessEvent {
            event_seq: 0,
            user_id,
            gate_id: req.gate_id,
            gate_name: gate.map(|g| g.name),
            timestamp: now,
            client_time: req.client_time,
            decision,
            gate_photo,
            registration_photo: user.registration_photo,
        };
        let feed = &self.feed;
        let event = self.store.append_event(event, |e| feed.publish(e))?;
        tracing::info!(seq = event.event_seq, user = %user_id, gate = req.gate_id, %decision, "check-in");
        Ok(event)
    }

    /// Events matching `filter`, newest first, `per_page` at a time.
    pub fn query_events(
        &self,
        admin_token: Option<&str>,
        filter: &EventFilter,
        page: usize,
        per_page: Option<usize>,
    ) -> Result<EventPage> {
        self.authorize_admin(admin_token)?;
        filter.validate().map_err(|_| ServiceError::BadTimeRange)?;
        let per_page = per_page.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);
        let mut events = self.store.scan_events(filter);
        let total = events.len();
        events.reverse();
        let events = events.into_iter().skip(page.saturating_mul(per_page)).take(per_page).collect();
        Ok(EventPage {
            events,
            page,
            per_page,
            total,
        })
    }

    pub fn get_photo(&self, admin_token: Option<&str>, hash: &ContentHash) -> Result<PhotoBlob> {
        self.authorize_admin(admin_token)?;
        self.store.get_photo(hash)?.ok_or(ServiceError::NotFound)
    }

    pub fn subscribe(&self, admin_token: Option<&str>, filter: EventFilter) -> Result<Subscription> {
        self.authorize_admin(admin_token)?;
        Ok(self.feed.subscribe(filter, self.config.feed_buffer))
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
