//! Check-in events and the monitoring filter.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ContentHash, GateId, UserId};
use crate::policy::AccessDecision;

/// One check-in attempt by an identified user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub event_seq: u64,
    pub user_id: UserId,
    /// Gate id as read from the tag. Does not resolve for `unknown_gate`
    /// or `unknown_org` denials.
    pub gate_id: GateId,
    /// Gate name at event time, when the gate resolved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_name: Option<String>,
    /// Server time the decision was made at.
    pub timestamp: DateTime<Utc>,
    /// Time reported by the device. Untrusted, kept for diagnostics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_time: Option<DateTime<Utc>>,
    pub decision: AccessDecision,
    /// Picture taken at the gate; absent only when none decodable arrived.
    pub gate_photo: Option<ContentHash>,
    /// The user's registration photo at event time.
    pub registration_photo: ContentHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("time_from is after time_to")]
pub struct BadTimeRange;

/// Conjunction of optional criteria. The time window is `[time_from, time_to)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFilter {
    #[serde(default)]
    pub time_from: Option<DateTime<Utc>>,
    #[serde(default)]
    pub time_to: Option<DateTime<Utc>>,
    #[serde(default)]
    pub gate_id: Option<GateId>,
    #[serde(default)]
    pub user_id: Option<UserId>,
    #[serde(default)]
    pub denied_only: bool,
}

impl EventFilter {
    pub fn validate(&self) -> Result<(), BadTimeRange> {
        match (self.time_from, self.time_to) {
            (Some(from), Some(to)) if from > to => Err(BadTimeRange),
            _ => Ok(()),
        }
    }

    pub fn matches(&self, event: &AccessEvent) -> bool {
        self.time_from.is_none_or(|from| event.timestamp >= from)
            && self.time_to.is_none_or(|to| event.timestamp < to)
            && self.matches_live(event)
    }

    /// Same as [`matches`](Self::matches) with the time window ignored, as
    /// used by live feed subscriptions.
    pub fn matches_live(&self, event: &AccessEvent) -> bool {
        self.gate_id.is_none_or(|g| event.gate_id == g)
            && self.user_id.is_none_or(|u| event.user_id == u)
            && (!self.denied_only || !event.decision.is_granted())
    }
}
