//! Concurrent check-in load and an event-sequence audit.

use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use gatekeeper_core::{AccessDecision, UserId};

use crate::client::{ApiClient, CheckIn, ClientError, EventQuery, GateRegistration};

#[derive(Debug, Clone)]
pub struct StressConfig {
    pub parallel: usize,
    pub count: usize,
    pub photo: Vec<u8>,
    /// Sent as the virtual-time header when set.
    pub virtual_time: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone)]
pub struct StressReport {
    pub gate: GateRegistration,
    pub user_id: UserId,
    pub elapsed: Duration,
    pub granted: usize,
    pub errors: Vec<String>,
    /// Sequence numbers returned to the clients, sorted.
    pub returned_seqs: Vec<u64>,
    /// Sequence numbers of this run's events as stored by the server,
    /// oldest first.
    pub logged_seqs: Vec<u64>,
}

impl StressReport {
    /// Returned and logged sequence numbers agree, cover every request and
    /// form one run without gaps or repeats.
    pub fn gap_free(&self) -> bool {
        let Some(&first) = self.logged_seqs.first() else {
            return false;
        };
        let contiguous = self.logged_seqs.iter().zip(first..).all(|(&s, want)| s == want);
        contiguous && self.logged_seqs.len() == self.returned_seqs.len() && self.returned_seqs == self.logged_seqs
    }

    pub fn summary(&self) -> String {
        let n = self.returned_seqs.len();
        format!(
            "{n} check-ins in {:.2?} ({:.0}/s), {} granted, {} errors, event_seq {}",
            self.elapsed,
            n as f64 / self.elapsed.as_secs_f64().max(1e-9),
            self.granted,
            self.errors.len(),
            if self.gap_free() { "gap-free" } else { "NOT gap-free" },
        )
    }
}

/// Registers a fresh gate and user with an open policy, fires `count`
/// check-ins from `parallel` threads and reads the resulting events back.
pub fn run(client: &ApiClient, admin: &str, cfg: &StressConfig) -> Result<StressReport, ClientError> {
    let tag = format!("{:x}", Utc::now().timestamp_nanos_opt().unwrap_or_default());
    let gate = client.register_gate(admin, &format!("stress-{tag}"), "load test")?;
    let user = client.register_user(admin, "Load", &format!("Tester {tag}"), &cfg.photo)?;
    let far = Utc::now() + chrono::Duration::days(3650);
    let expires = cfg.virtual_time.map_or(far, |t| t + chrono::Duration::days(3650));
    client.upsert_policy(admin, user.user.user_id, gate.gate_id, true, Some(expires))?;

    let parallel = cfg.parallel.max(1);
    let start = Instant::now();
    let results: Vec<Result<(u64, AccessDecision), ClientError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..parallel)
            .map(|worker| {
                let (gate, token) = (&gate, &user.device_token);
                s.spawn(move || {
                    let mut out = Vec::new();
                    for _ in (worker..cfg.count).step_by(parallel) {
                        let req = CheckIn {
                            guid: gate.server_guid.clone(),
                            gate_id: gate.gate_id,
                            photo: &cfg.photo,
                            client_time: None,
                            virtual_time: cfg.virtual_time,
                        };
                        out.push(client.check_in(token, &req).map(|r| (r.event_seq, r.decision)));
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    let elapsed = start.elapsed();

    let mut returned_seqs = Vec::new();
    let mut granted = 0;
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok((seq, decision)) => {
                returned_seqs.push(seq);
                granted += usize::from(decision.is_granted());
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    returned_seqs.sort_unstable();
    let query = EventQuery {
        user: Some(user.user.user_id),
        ..Default::default()
    };
    let logged_seqs = client.all_events(admin, &query)?.iter().map(|e| e.event_seq).collect();
    Ok(StressReport {
        gate,
        user_id: user.user.user_id,
        elapsed,
        granted,
        errors,
        returned_seqs,
        logged_seqs,
    })
}
