//! Users, gates and per-(user, gate) access policies.
//!
//! A policy grants access while it is enabled and `now < expires_at`. Expiry
//! is evaluated when a decision is made; nothing rewrites stored policies when
//! they lapse.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ContentHash, GateId, UserId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("unknown gate {0}")]
    UnknownGate(GateId),
    #[error("access policies must carry an expiration date")]
    MissingExpiration,
    #[error("{0} must not be empty")]
    MissingName(&'static str),
    #[error("gate name `{0}` is already registered")]
    DuplicateName(String),
    #[error("gate id space exhausted")]
    GateIdsExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub user_id: UserId,
    pub first_name: String,
    pub last_name: String,
    pub registration_photo: ContentHash,
    #[serde(default = "default_true")]
    pub active: bool,
}

fn default_true() -> bool {
    true
}

impl User {
    pub fn full_name(&self) -> String {
        format!("{} {}", self.first_name, self.last_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub gate_id: GateId,
    pub name: String,
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessPolicy {
    pub user_id: UserId,
    pub gate_id: GateId,
    pub enabled: bool,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    UnknownOrg,
    UnknownGate,
    UnknownUser,
    NoPolicy,
    PolicyDisabled,
    PolicyExpired,
    MissingPhoto,
}

impl DenyReason {
    pub const ALL: [DenyReason; 7] = [
        DenyReason::UnknownOrg,
        DenyReason::UnknownGate,
        DenyReason::UnknownUser,
        DenyReason::NoPolicy,
        DenyReason::PolicyDisabled,
        DenyReason::PolicyExpired,
        DenyReason::MissingPhoto,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::UnknownOrg => "unknown_org",
            DenyReason::UnknownGate => "unknown_gate",
            DenyReason::UnknownUser => "unknown_user",
            DenyReason::NoPolicy => "no_policy",
            DenyReason::PolicyDisabled => "policy_disabled",
            DenyReason::PolicyExpired => "policy_expired",
            DenyReason::MissingPhoto => "missing_photo",
        }
    }
}

impl std::str::FromStr for DenyReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DenyReason::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown deny reason `{s}`"))
    }
}

impl std::fmt::Display for DenyReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `{"outcome":"granted"}` or `{"outcome":"denied","reason":"..."}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AccessDecision {
    Granted,
    Denied { reason: DenyReason },
}

impl AccessDecision {
    pub fn denied(reason: DenyReason) -> Self {
        AccessDecision::Denied { reason }
    }

    pub fn is_granted(&self) -> bool {
        matches!(self, AccessDecision::Granted)
    }

    pub fn reason(&self) -> Option<DenyReason> {
        match self {
            AccessDecision::Granted => None,
            AccessDecision::Denied { reason } => Some(*reason),
        }
    }
}

impl std::fmt::Display for AccessDecision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AccessDecision::Granted => f.write_str("granted"),
            AccessDecision::Denied { reason } => write!(f, "denied {reason}"),
        }
    }
}

/// At most one policy per (user, gate).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolicyTable {
    rows: BTreeMap<(UserId, GateId), AccessPolicy>,
}

impl PolicyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, user_id: UserId, gate_id: GateId) -> Option<&AccessPolicy> {
        self.rows.get(&(user_id, gate_id))
    }

    pub fn insert(&mut self, policy: AccessPolicy) {
        self.rows.insert((policy.user_id, policy.gate_id), policy);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AccessPolicy> {
        self.rows.values()
    }

    pub fn for_gate(&self, gate_id: GateId) -> impl Iterator<Item = &AccessPolicy> {
        self.rows.values().filter(move |p| p.gate_id == gate_id)
    }
}

impl FromIterator<AccessPolicy> for PolicyTable {
    fn from_iter<T: IntoIterator<Item = AccessPolicy>>(iter: T) -> Self {
        let mut table = PolicyTable::new();
        for p in iter {
            table.insert(p);
        }
        table
    }
}

impl Serialize for PolicyTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.rows.values())
    }
}

impl<'de> Deserialize<'de> for PolicyTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Vec::<AccessPolicy>::deserialize(d)?.into_iter().collect())
    }
}

/// Access decision for a user and gate already known to exist.
pub fn decide_access(
    policies: &PolicyTable,
    user_id: UserId,
    gate_id: GateId,
    now: DateTime<Utc>,
) -> AccessDecision {
    match policies.get(user_id, gate_id) {
        None => AccessDecision::denied(DenyReason::NoPolicy),
        Some(p) if !p.enabled => AccessDecision::denied(DenyReason::PolicyDisabled),
        Some(p) if now >= p.expires_at => AccessDecision::denied(DenyReason::PolicyExpired),
        Some(_) => AccessDecision::Granted,
    }
}

/// Registered users, gates and their policies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directory {
    users: BTreeMap<UserId, User>,
    gates: BTreeMap<GateId, Gate>,
    policies: PolicyTable,
    next_user_id: u64,
    next_gate_id: GateId,
}

impl Default for Directory {
    fn default() -> Self {
        Self {
            users: BTreeMap::new(),
            gates: BTreeMap::new(),
            policies: PolicyTable::new(),
            next_user_id: 1,
            next_gate_id: 1,
        }
    }
}

fn require(field: &'static str, value: &str) -> Result<String, PolicyError> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        Err(PolicyError::MissingName(field))
    } else {
        Ok(trimmed.to_owned())
    }
}

impl Directory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn user(&self, id: UserId) -> Option<&User> {
        self.users.get(&id)
    }

    pub fn gate(&self, id: GateId) -> Option<&Gate> {
        self.gates.get(&id)
    }

    pub fn users(&self) -> impl Iterator<Item = &User> {
        self.users.values()
    }

    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.gates.values()
    }

    pub fn policies(&self) -> &PolicyTable {
        &self.policies
    }

    /// Registers a gate under a fresh id. Ids start at 1 and are never reused.
    pub fn add_gate(&mut self, name: &str, location: &str) -> Result<Gate, PolicyError> {
        let name = require("gate name", name)?;
        if self.gates.values().any(|g| g.name == name) {
            return Err(PolicyError::DuplicateName(name));
        }
        let gate_id = self.next_gate_id;
        self.next_gate_id = gate_id.checked_add(1).ok_or(PolicyError::GateIdsExhausted)?;
        let gate = Gate {
            gate_id,
            name,
            location: location.trim().to_owned(),
        };
        self.gates.insert(gate_id, gate.clone());
        Ok(gate)
    }

    pub fn add_user(
        &mut self,
        first_name: &str,
        last_name: &str,
        registration_photo: ContentHash,
    ) -> Result<User, PolicyError> {
        let first_name = require("first name", first_name)?;
        let last_name = require("last name", last_name)?;
        let user_id = UserId(self.next_user_id);
        self.next_user_id += 1;
        let user = User {
            user_id,
            first_name,
            last_name,
            registration_photo,
            active: true,
        };
        self.users.insert(user_id, user.clone());
        Ok(user)
    }

    pub fn set_user_active(&mut self, user_id: UserId, active: bool) -> Result<User, PolicyError> {
        let user = self
            .users
            .get_mut(&user_id)
            .ok_or(PolicyError::UnknownUser(user_id))?;
        user.active = active;
        Ok(user.clone())
    }

    /// Creates or replaces the policy for `(user_id, gate_id)`.
    pub fn upsert_policy(
        &mut self,
        user_id: UserId,
        gate_id: GateId,
        enabled: bool,
        expires_at: Option<DateTime<Utc>>,
    ) -> Result<AccessPolicy, PolicyError> {
        if !self.users.contains_key(&user_id) {
            return Err(PolicyError::UnknownUser(user_id));
        }
        if !self.gates.contains_key(&gate_id) {
            return Err(PolicyError::UnknownGate(gate_id));
        }
        let expires_at = expires_at.ok_or(PolicyError::MissingExpiration)?;
        let policy = AccessPolicy {
            user_id,
            gate_id,
            enabled,
            expires_at,
        };
        self.policies.insert(policy.clone());
        Ok(policy)
    }

    /// Every user that has or had a policy on the gate, sorted by last name,
    /// first name, user id.
    pub fn list_policies_for_gate(&self, gate_id: GateId) -> Result<Vec<(User, AccessPolicy)>, PolicyError> {
        if !self.gates.contains_key(&gate_id) {
            return Err(PolicyError::UnknownGate(gate_id));
        }
        let mut rows: Vec<_> = self
            .policies
            .for_gate(gate_id)
            .filter_map(|p| self.users.get(&p.user_id).map(|u| (u.clone(), p.clone())))
            .collect();
        rows.sort_by(|(a, _), (b, _)| {
            (&a.last_name, &a.first_name, a.user_id).cmp(&(&b.last_name, &b.first_name, b.user_id))
        });
        Ok(rows)
    }

    pub fn decide_access(&self, user_id: UserId, gate_id: GateId, now: DateTime<Utc>) -> AccessDecision {
        decide_access(&self.policies, user_id, gate_id, now)
    }
}

#[cfg(test)]
mod tests {
    use chrono::{Duration, TimeZone};

    use super::*;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2026, 3, 2, 9, 0, 0).unwrap()
    }

    fn photo() -> ContentHash {
        ContentHash([1; 32])
    }

    fn setup() -> (Directory, UserId, GateId) {
        let mut dir = Directory::new();
        let user = dir.add_user("Ada", "Lovelace", photo()).unwrap();
        let gate = dir.add_gate("lobby", "Building A").unwrap();
        (dir, user.user_id, gate.gate_id)
    }

    #[test]
    fn grants_before_expiry() {
        let (mut dir, u, g) = setup();
        dir.upsert_policy(u, g, true, Some(t0())).unwrap();
        assert_eq!(dir.decide_access(u, g, t0() - Duration::seconds(1)), AccessDecision::Granted);
    }

    #[test]
    fn denies_at_expiry_instant() {
        let (mut dir, u, g) = setup();
        dir.upsert_policy(u, g, true, Some(t0())).unwrap();
        assert_eq!(
            dir.decide_access(u, g, t0()),
            AccessDecision::denied(DenyReason::PolicyExpired)
        );
    }

    #[test]
    fn boundary_sweep() {
        // brute-force sweep across the expiry instant in 1 ms steps
        let (mut dir, u, g) = setup();
        dir.upsert_policy(u, g, true, Some(t0())).unwrap();
        for ms in -2_000i64..=2_000 {
            let now = t0() + Duration::milliseconds(ms);
            let expected = if ms < 0 {
                AccessDecision::Granted
            } else {
                AccessDecision::denied(DenyReason::PolicyExpired)
            };
            assert_eq!(dir.decide_access(u, g, now), expected, "offset {ms} ms");
        }
    }

    #[test]
    fn no_policy_and_disabled() {
        let (mut dir, u, g) = setup();
        assert_eq!(dir.decide_access(u, g, t0()), AccessDecision::denied(DenyReason::NoPolicy));
        dir.upsert_policy(u, g, false, Some(t0() + Duration::days(1))).unwrap();
        assert_eq!(
            dir.decide_access(u, g, t0()),
            AccessDecision::denied(DenyReason::PolicyDisabled)
        );
    }

    #[test]
    fn extending_expiry_restores_access() {
        let (mut dir, u, g) = setup();
        dir.upsert_policy(u, g, true, Some(t0())).unwrap();
        let later = t0() + Duration::hours(1);
        assert!(!dir.decide_access(u, g, later).is_granted());
        dir.upsert_policy(u, g, true, Some(t0() + Duration::days(1))).unwrap();
        assert!(dir.decide_access(u, g, later).is_granted());
        assert_eq!(dir.policies().len(), 1);
    }

    #[test]
    fn upsert_errors() {
        let (mut dir, u, g) = setup();
        assert_eq!(dir.upsert_policy(u, g, true, None), Err(PolicyError::MissingExpiration));
        assert_eq!(
            dir.upsert_policy(UserId(99), g, true, Some(t0())),
            Err(PolicyError::UnknownUser(UserId(99)))
        );
        assert_eq!(
            dir.upsert_policy(u, 99, true, Some(t0())),
            Err(PolicyError::UnknownGate(99))
        );
    }

    #[test]
    fn gate_listing_includes_lapsed_and_sorts() {
        let (mut dir, u, g) = setup();
        let b = dir.add_user("Charles", "Babbage", photo()).unwrap().user_id;
        let other = dir.add_gate("lab", "Building B").unwrap().gate_id;
        assert!(dir.list_policies_for_gate(other).unwrap().is_empty());
        dir.upsert_policy(u, g, true, Some(t0() - Duration::days(1))).unwrap();
        dir.upsert_policy(b, g, true, Some(t0() + Duration::days(1))).unwrap();
        let names: Vec<_> = dir
            .list_policies_for_gate(g)
            .unwrap()
            .into_iter()
            .map(|(user, _)| user.last_name)
            .collect();
        assert_eq!(names, ["Babbage", "Lovelace"]);
        assert_eq!(dir.list_policies_for_gate(7), Err(PolicyError::UnknownGate(7)));
    }

    #[test]
    fn gate_ids_allocated_from_one() {
        let mut dir = Directory::new();
        assert_eq!(dir.add_gate("a", "").unwrap().gate_id, 1);
        assert_eq!(dir.add_gate("b", "").unwrap().gate_id, 2);
        assert_eq!(
            dir.add_gate("a", "elsewhere"),
            Err(PolicyError::DuplicateName("a".into()))
        );
        assert_eq!(dir.add_gate("c", "").unwrap().gate_id, 3);
    }

    #[test]
    fn names_required() {
        let mut dir = Directory::new();
        assert_eq!(dir.add_user("Ada", " ", photo()), Err(PolicyError::MissingName("last name")));
        assert_eq!(dir.add_user("", "L", photo()), Err(PolicyError::MissingName("first name")));
        assert_eq!(dir.add_gate("", "x"), Err(PolicyError::MissingName("gate name")));
    }

    #[test]
    fn decision_json() {
        assert_eq!(
            serde_json::to_string(&AccessDecision::Granted).unwrap(),
            r#"{"outcome":"granted"}"#
        );
        assert_eq!(
            serde_json::to_string(&AccessDecision::denied(DenyReason::PolicyExpired)).unwrap(),
            r#"{"outcome":"denied","reason":"policy_expired"}"#
        );
        for r in DenyReason::ALL {
            assert_eq!(r.as_str().parse::<DenyReason>(), Ok(r));
            let json = serde_json::to_string(&r).unwrap();
            assert_eq!(json, format!("\"{}\"", r.as_str()));
        }
    }

    #[test]
    fn directory_serde_roundtrip() {
        let (mut dir, u, g) = setup();
        dir.upsert_policy(u, g, true, Some(t0())).unwrap();
        let json = serde_json::to_string(&dir).unwrap();
        assert_eq!(serde_json::from_str::<Directory>(&json).unwrap(), dir);
    }
}
