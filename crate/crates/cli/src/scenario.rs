//! Scripted scenarios replayed against a server in test mode.
//!
//! A scenario is a line-oriented text file. Blank lines and lines starting
//! with `#` are ignored. Words are split shell-style, so names with spaces
//! are quoted.
//!
//! ```text
//! epoch 2026-03-02T08:00:00Z
//! at 0s  register_gate lobby "Main lobby" "Building A"
//! at 0s  register_user ada Ada Lovelace ada.png
//! at 0s  upsert_policy ada lobby enabled expires=8h
//! at 30m checkin c1 ada lobby gate.png
//! at 30m expect c1 granted
//! at 9h  checkin c2 ada lobby gate.png
//! at 9h  expect c2 denied policy_expired
//! at 9h  expect_events 2 denied_only=false gate=lobby
//! ```
//!
//! `epoch` must come first, optionally followed by `seed <n>`, which seeds
//! the UIDs of the simulated tags (default 0). Every step starts with `at <offset>`, an offset
//! from the epoch written as a duration (`0s`, `90s`, `1h30m`, `59m 59s`
//! quoted). Offsets must not decrease down the file. The offset of a
//! `checkin` is its decision time, sent as the virtual-time header.
//!
//! Actions:
//!
//! * `register_gate <alias> <name> [location]`
//! * `register_user <alias> <first> <last> <photo>`
//! * `upsert_policy <user> <gate> enabled|disabled expires=<offset>`
//! * `set_active <user> true|false`
//! * `checkin <id> <user> <gate> <photo|none> [guid=foreign]`
//! * `expect <id> granted` or `expect <id> denied <reason>`
//! * `expect_events <count> [denied_only=true|false] [gate=<gate>] [user=<user>]`
//!
//! A `<gate>` is an alias or a bare numeric gate id, which may name a gate
//! that was never registered. Photo paths are relative to the scenario file.
//! A `checkin` reads the gate's provisioned tag image to obtain the GUID and
//! gate id; `guid=foreign` replaces the GUID with one from another
//! organization.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use gatekeeper_core::{AccessDecision, DenyReason, GateId, GateTagPayload, ServerGuid, TagChip, TagStandard, UserId};
use thiserror::Error;

use crate::client::{ApiClient, CheckIn, CheckInResponse, ClientError, EventQuery, GateRegistration, UserRegistration};
use crate::tagfile::{provision_chip, read_gate_payload, TagFileError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ScenarioParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GateRef {
    Alias(String),
    Id(GateId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    RegisterGate {
        alias: String,
        name: String,
        location: String,
    },
    RegisterUser {
        alias: String,
        first: String,
        last: String,
        photo: PathBuf,
    },
    UpsertPolicy {
        user: String,
        gate: String,
        enabled: bool,
        expires: Duration,
    },
    SetActive {
        user: String,
        active: bool,
    },
    CheckIn {
        id: String,
        user: String,
        gate: GateRef,
        photo: Option<PathBuf>,
        foreign_guid: bool,
    },
    Expect {
        id: String,
        outcome: AccessDecision,
    },
    ExpectEvents {
        count: usize,
        denied_only: bool,
        gate: Option<GateRef>,
        user: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub line: usize,
    pub offset: Duration,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub epoch: DateTime<Utc>,
    pub seed: u64,
    pub steps: Vec<Step>,
}

impl Scenario {
    /// Parses scenario text. Relative photo paths are resolved against
    /// `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ScenarioParseError> {
        Parser::new(base_dir).parse(text)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Scenario::parse(&text, base).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn time_at(&self, offset: Duration) -> DateTime<Utc> {
        self.epoch + chrono::Duration::from_std(offset).expect("offset fits")
    }
}

struct Parser {
    base_dir: PathBuf,
    gates: HashSet<String>,
    users: HashSet<String>,
    checkins: HashSet<String>,
}

fn err(line: usize, message: impl Into<String>) -> ScenarioParseError {
    ScenarioParseError {
        line,
        message: message.into(),
    }
}

fn is_alias(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl Parser {
    fn new(base_dir: &Path) -> Self {
        Self {
            base_dir: base_dir.to_owned(),
            gates: HashSet::new(),
            users: HashSet::new(),
            checkins: HashSet::new(),
        }
    }

    fn parse(mut self, text: &str) -> Result<Scenario, ScenarioParseError> {
        let mut epoch = None;
        let mut seed = None;
        let mut steps: Vec<Step> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let words = shlex::split(trimmed).ok_or_else(|| err(line, "unbalanced quotes"))?;
            match words[0].as_str() {
                "epoch" => {
                    if epoch.is_some() {
                        return Err(err(line, "epoch given twice"));
                    }
                    if words.len() != 2 {
                        return Err(err(line, "expected `epoch <RFC 3339 time>`"));
                    }
                    let t = DateTime::parse_from_rfc3339(&words[1])
                        .map_err(|e| err(line, format!("bad epoch `{}`: {e}", words[1])))?;
                    epoch = Some(t.with_timezone(&Utc));
                }
                "seed" => {
                    if epoch.is_none() || !steps.is_empty() || seed.is_some() {
                        return Err(err(line, "`seed` goes once, after `epoch` and before the first step"));
                    }
                    if words.len() != 2 {
                        return Err(err(line, "expected `seed <n>`"));
                    }
                    seed = Some(
                        words[1]
                            .parse()
                            .map_err(|_| err(line, format!("bad seed `{}`", words[1])))?,
                    );
                }
                "at" => {
                    if epoch.is_none() {
                        return Err(err(line, "`epoch` must come before the first step"));
                    }
                    if words.len() < 3 {
                        return Err(err(line, "expected `at <offset> <action> ...`"));
                    }
                    let offset = parse_offset(line, &words[1])?;
                    if let Some(prev) = steps.last() {
                        if offset < prev.offset {
                            return Err(err(
                                line,
                                format!("offset {} is earlier than the previous step", words[1]),
                            ));
                        }
                    }
                    let action = self.action(line, &words[2..])?;
                    steps.push(Step { line, offset, action });
                }
                other => return Err(err(line, format!("unknown directive `{other}`"))),
            }
        }
        let epoch = epoch.ok_or_else(|| err(text.lines().count().max(1), "missing `epoch`"))?;
        Ok(Scenario {
            epoch,
            seed: seed.unwrap_or(0),
            steps,
        })
    }

    fn alias(&self, line: usize, s: &str) -> Result<String, ScenarioParseError> {
        if is_alias(s) {
            Ok(s.to_owned())
        } else {
            Err(err(line, format!("`{s}` is not a valid name (letter, then letters, digits, `_` or `-`)")))
        }
    }

    fn user(&self, line: usize, s: &str) -> Result<String, ScenarioParseError> {
        if self.users.contains(s) {
            Ok(s.to_owned())
        } else {
            Err(err(line, format!("unknown user `{s}`")))
        }
    }

    fn gate(&self, line: usize, s: &str) -> Result<GateRef, ScenarioParseError> {
        if self.gates.contains(s) {
            Ok(GateRef::Alias(s.to_owned()))
        } else if let Ok(id) = s.parse::<GateId>() {
            Ok(GateRef::Id(id))
        } else {
            Err(err(line, format!("unknown gate `{s}`")))
        }
    }

    fn photo(&self, s: &str) -> PathBuf {
        self.base_dir.join(s)
    }

    fn action(&mut self, line: usize, w: &[String]) -> Result<Action, ScenarioParseError> {
        let arity = |min: usize, max: usize, usage: &str| {
            if w.len() < min || w.len() > max {
                Err(err(line, format!("usage: {usage}")))
            } else {
                Ok(())
            }
        };
        match w[0].as_str() {
            "register_gate" => {
                arity(3, 4, "register_gate <alias> <name> [location]")?;
                let alias = self.alias(line, &w[1])?;
                if !self.gates.insert(alias.clone()) {
                    return Err(err(line, format!("gate `{alias}` registered twice")));
                }
                Ok(Action::RegisterGate {
                    alias,
                    name: w[2].clone(),
                    location: w.get(3).cloned().unwrap_or_default(),
                })
            }
            "register_user" => {
                arity(5, 5, "register_user <alias> <first> <last> <photo>")?;
                let alias = self.alias(line, &w[1])?;
                if !self.users.insert(alias.clone()) {
                    return Err(err(line, format!("user `{alias}` registered twice")));
                }
                Ok(Action::RegisterUser {
                    alias,
                    first: w[2].clone(),
                    last: w[3].clone(),
                    photo: self.photo(&w[4]),
                })
            }
            "upsert_policy" => {
                arity(5, 5, "upsert_policy <user> <gate> enabled|disabled expires=<offset>")?;
                let user = self.user(line, &w[1])?;
                if !self.gates.contains(&w[2]) {
                    return Err(err(line, format!("unknown gate `{}`", w[2])));
                }
                let enabled = match w[3].as_str() {
                    "enabled" => true,
                    "disabled" => false,
                    other => return Err(err(line, format!("expected enabled or disabled, got `{other}`"))),
                };
                let expires = w[4]
                    .strip_prefix("expires=")
                    .ok_or_else(|| err(line, "expected `expires=<offset>`"))?;
                Ok(Action::UpsertPolicy {
                    user,
                    gate: w[2].clone(),
                    enabled,
                    expires: parse_offset(line, expires)?,
                })
            }
            "set_active" => {
                arity(3, 3, "set_active <user> true|false")?;
                let active = w[2]
                    .parse()
                    .map_err(|_| err(line, format!("expected true or false, got `{}`", w[2])))?;
                Ok(Action::SetActive {
                    user: self.user(line, &w[1])?,
                    active,
                })
            }
            "checkin" => {
                arity(5, 6, "checkin <id> <user> <gate> <photo|none> [guid=foreign]")?;
                let id = self.alias(line, &w[1])?;
                if !self.checkins.insert(id.clone()) {
                    return Err(err(line, format!("check-in `{id}` used twice")));
                }
                let foreign_guid = match w.get(5).map(String::as_str) {
                    None => false,
                    Some("guid=foreign") => true,
                    Some(other) => return Err(err(line, format!("unexpected `{other}`"))),
                };
                Ok(Action::CheckIn {
                    id,
                    user: self.user(line, &w[2])?,
                    gate: self.gate(line, &w[3])?,
                    photo: (w[4] != "none").then(|| self.photo(&w[4])),
                    foreign_guid,
                })
            }
            "expect" => {
                arity(3, 4, "expect <id> granted | expect <id> denied <reason>")?;
                if !self.checkins.contains(&w[1]) {
                    return Err(err(line, format!("no earlier check-in named `{}`", w[1])));
                }
                let outcome = match (w[2].as_str(), w.get(3)) {
                    ("granted", None) => AccessDecision::Granted,
                    ("denied", Some(reason)) => AccessDecision::denied(
                        reason
                            .parse::<DenyReason>()
                            .map_err(|_| err(line, format!("unknown deny reason `{reason}`")))?,
                    ),
                    _ => return Err(err(line, "expected `granted` or `denied <reason>`")),
                };
                Ok(Action::Expect {
                    id: w[1].clone(),
                    outcome,
                })
            }
            "expect_events" => {
                arity(2, 5, "expect_events <count> [denied_only=..] [gate=..] [user=..]")?;
                let count = w[1]
                    .parse()
                    .map_err(|_| err(line, format!("`{}` is not a count", w[1])))?;
                let (mut denied_only, mut gate, mut user) = (false, None, None);
                for opt in &w[2..] {
                    let (key, value) = opt
                        .split_once('=')
                        .ok_or_else(|| err(line, format!("expected key=value, got `{opt}`")))?;
                    match key {
                        "denied_only" => {
                            denied_only = value
                                .parse()
                                .map_err(|_| err(line, format!("expected true or false, got `{value}`")))?
                        }
                        "gate" => gate = Some(self.gate(line, value)?),
                        "user" => user = Some(self.user(line, value)?),
                        other => return Err(err(line, format!("unknown option `{other}`"))),
                    }
                }
                Ok(Action::ExpectEvents {
                    count,
                    denied_only,
                    gate,
                    user,
                })
            }
            other => Err(err(line, format!("unknown action `{other}`"))),
        }
    }
}

fn parse_offset(line: usize, s: &str) -> Result<Duration, ScenarioParseError> {
    humantime::parse_duration(s).map_err(|e| err(line, format!("bad offset `{s}`: {e}")))
}

/// Outcome of one `expect` or `expect_events` step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectResult {
    pub line: usize,
    pub description: String,
    pub passed: bool,
    pub actual: String,
}

impl std::fmt::Display for ExpectResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.passed {
            write!(f, "PASS line {}: {}", self.line, self.description)
        } else {
            write!(f, "FAIL line {}: {} (got {})", self.line, self.description, self.actual)
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {source}")]
    Client { line: usize, source: ClientError },
    #[error("line {line}: {source}")]
    Tag { line: usize, source: TagFileError },
    #[error("line {line}: photo {path}: {source}")]
    Photo {
        line: usize,
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: a check-in by raw gate id needs a registered gate first")]
    NoOrganization { line: usize },
}

/// State and results of a finished run.
#[derive(Debug, Default)]
pub struct ScenarioRun {
    pub results: Vec<ExpectResult>,
    pub gates: BTreeMap<String, GateRegistration>,
    pub users: BTreeMap<String, UserRegistration>,
    pub checkins: BTreeMap<String, CheckInResponse>,
    /// UID of each gate's simulated tag.
    pub tag_uids: BTreeMap<String, [u8; 7]>,
}

impl ScenarioRun {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn summary(&self) -> String {
        let ok = self.results.iter().filter(|r| r.passed).count();
        format!("{ok}/{} expectations passed", self.results.len())
    }
}

fn foreign(guid: ServerGuid) -> ServerGuid {
    let mut g = guid.0;
    for b in &mut g {
        *b ^= 0xff;
    }
    ServerGuid(g)
}

/// Replays `scenario` against `client`, calling `on_result` as each
/// expectation is checked.
pub fn run(
    scenario: &Scenario,
    client: &ApiClient,
    admin: &str,
    mut on_result: impl FnMut(&ExpectResult),
) -> Result<ScenarioRun, ScenarioError> {
    let mut run = ScenarioRun::default();
    let mut chips: HashMap<String, TagChip> = HashMap::new();
    let mut photos: HashMap<PathBuf, Vec<u8>> = HashMap::new();

    let mut photo = |line: usize, path: &Path| -> Result<Vec<u8>, ScenarioError> {
        if let Some(b) = photos.get(path) {
            return Ok(b.clone());
        }
        let bytes = std::fs::read(path).map_err(|source| ScenarioError::Photo {
            line,
            path: path.display().to_string(),
            source,
        })?;
        photos.insert(path.to_owned(), bytes.clone());
        Ok(bytes)
    };

    for step in &scenario.steps {
        let line = step.line;
        let now = scenario.time_at(step.offset);
        let api = |source| ScenarioError::Client { line, source };
        let tag = |source| ScenarioError::Tag { line, source };
        match &step.action {
            Action::RegisterGate { alias, name, location } => {
                let reg = client.register_gate(admin, name, location).map_err(api)?;
                let payload = reg.payload().map_err(api)?;
                let password = reg.password().map_err(api)?;
                let chip = provision_chip(
                    &payload,
                    TagStandard::Ntag213,
                    password,
                    Some(scenario.seed.wrapping_add(line as u64)),
                ).map_err(tag)?;
                run.tag_uids.insert(alias.clone(), chip.uid());
                chips.insert(alias.clone(), chip);
                run.gates.insert(alias.clone(), reg);
            }
            Action::RegisterUser {
                alias,
                first,
                last,
                photo: path,
            } => {
                let bytes = photo(line, path)?;
                let reg = client.register_user(admin, first, last, &bytes).map_err(api)?;
                run.users.insert(alias.clone(), reg);
            }
            Action::UpsertPolicy {
                user,
                gate,
                enabled,
                expires,
            } => {
                let uid = run.users[user].user.user_id;
                let gid = run.gates[gate].gate_id;
                client
                    .upsert_policy(admin, uid, gid, *enabled, Some(scenario.time_at(*expires)))
                    .map_err(api)?;
            }
            Action::SetActive { user, active } => {
                client
                    .set_user_active(admin, run.users[user].user.user_id, *active)
                    .map_err(api)?;
            }
            Action::CheckIn {
                id,
                user,
                gate,
                photo: path,
                foreign_guid,
            } => {
                let mut payload: GateTagPayload = match gate {
                    GateRef::Alias(a) => read_gate_payload(&chips[a]).map_err(tag)?,
                    GateRef::Id(gid) => {
                        let any = chips.values().next().ok_or(ScenarioError::NoOrganization { line })?;
                        let mut p = read_gate_payload(any).map_err(tag)?;
                        p.gate_id = *gid;
                        p
                    }
                };
                if *foreign_guid {
                    payload.server_guid = foreign(payload.server_guid);
                }
                let bytes = match path {
                    Some(p) => photo(line, p)?,
                    None => Vec::new(),
                };
                let resp = client
                    .check_in(
                        &run.users[user].device_token,
                        &CheckIn {
                            guid: payload.server_guid.to_hex(),
                            gate_id: payload.gate_id,
                            photo: &bytes,
                            client_time: Some(now),
                            virtual_time: Some(now),
                        },
                    )
                    .map_err(api)?;
                run.checkins.insert(id.clone(), resp);
            }
            Action::Expect { id, outcome } => {
                let got = run.checkins[id].decision;
                let result = ExpectResult {
                    line,
                    description: format!("expect {id} {}", outcome),
                    passed: got == *outcome,
                    actual: got.to_string(),
                };
                on_result(&result);
                run.results.push(result);
            }
            Action::ExpectEvents {
                count,
                denied_only,
                gate,
                user,
            } => {
                let gate_id = gate.as_ref().map(|g| match g {
                    GateRef::Alias(a) => run.gates[a].gate_id,
                    GateRef::Id(id) => *id,
                });
                let user_id: Option<UserId> = user.as_ref().map(|u| run.users[u].user.user_id);
                let query = EventQuery {
                    gate: gate_id,
                    user: user_id,
                    denied_only: *denied_only,
                    per_page: Some(1),
                    ..Default::default()
                };
                let total = client.events(admin, &query).map_err(api)?.total;
                let mut description = format!("expect_events {count}");
                if *denied_only {
                    description.push_str(" denied_only");
                }
                if let Some(g) = gate_id {
                    description.push_str(&format!(" gate={g}"));
                }
                if let Some(u) = user_id {
                    description.push_str(&format!(" user={u}"));
                }
                let result = ExpectResult {
                    line,
                    description,
                    passed: total == *count,
                    actual: format!("{total} events"),
                };
                on_result(&result);
                run.results.push(result);
            }
        }
    }
    Ok(run)
}
