//! Browser demo of the gate-tag codec and the access decision rule.
//!
//! The plain functions return serialisable reports and are tested natively.
//! The `#[wasm_bindgen]` wrappers at the bottom hand the same reports to
//! JavaScript as JSON strings: `{"ok": report}` or `{"error": message}`.

use chrono::{DateTime, NaiveDateTime, Utc};
use gatekeeper_core::hexdump::hexdump;
use gatekeeper_core::tag::wrapped_len;
use gatekeeper_core::{
    build_gate_tag_message, decide_access, decode_message, parse_gate_tag_message, payload_accounting,
    AccessPolicy, GateTagPayload, NdefMessage, PayloadAccounting, PolicyTable, ServerGuid,
    TagStandard, UserId,
};
use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordView {
    pub tnf: &'static str,
    pub record_type: String,
    pub payload_len: usize,
    pub encoded_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GateView {
    pub server_guid: String,
    pub gate_id: u32,
    pub android_app_id: String,
    pub universal_link: String,
}

impl From<&GateTagPayload> for GateView {
    fn from(p: &GateTagPayload) -> Self {
        GateView {
            server_guid: p.server_guid.to_hex(),
            gate_id: p.gate_id,
            android_app_id: p.android_app_id.clone(),
            universal_link: p.universal_link.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TagReport {
    pub records: Vec<RecordView>,
    pub accounting: PayloadAccounting,
    pub message_len: usize,
    pub message_hex: String,
    pub hexdump: String,
    /// Bytes of tag memory used once the message is TLV-wrapped.
    pub tlv_len: usize,
    pub standard: &'static str,
    pub capacity: usize,
    pub fits: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecodeReport {
    pub message_len: usize,
    pub records: Vec<RecordView>,
    pub gate: Option<GateView>,
    pub gate_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecisionReport {
    pub outcome: &'static str,
    pub reason: Option<&'static str>,
    pub now: String,
    pub expires_at: String,
    /// `expires_at - now`; access needs this to be positive.
    pub seconds_left: i64,
}

fn record_views(msg: &NdefMessage) -> Vec<RecordView> {
    msg.records
        .iter()
        .map(|r| RecordView {
            tnf: r.tnf.name(),
            record_type: String::from_utf8_lossy(&r.type_bytes).into_owned(),
            payload_len: r.payload.len(),
            encoded_len: r.encoded_len(),
        })
        .collect()
}

/// Encodes a gate tag and reports sizes, bytes and the fit on `standard`.
pub fn gate_tag_report(
    guid_hex: &str,
    gate_id: u32,
    android_app_id: &str,
    universal_link: &str,
    standard: &str,
) -> Result<TagReport, String> {
    let server_guid = ServerGuid::from_hex(guid_hex.trim()).ok_or("server GUID must be 32 hex digits")?;
    let standard: TagStandard = standard.parse()?;
    let payload = GateTagPayload {
        server_guid,
        gate_id,
        android_app_id: android_app_id.to_owned(),
        universal_link: universal_link.to_owned(),
    };
    let msg = build_gate_tag_message(&payload).map_err(|e| e.to_string())?;
    let bytes = msg.encode().map_err(|e| e.to_string())?;
    let accounting = payload_accounting(&payload).map_err(|e| e.to_string())?;
    let tlv_len = wrapped_len(bytes.len());
    Ok(TagReport {
        records: record_views(&msg),
        accounting,
        message_len: bytes.len(),
        message_hex: hex::encode(&bytes),
        hexdump: hexdump(&bytes),
        tlv_len,
        standard: standard.name(),
        capacity: standard.capacity_bytes(),
        fits: tlv_len <= standard.capacity_bytes(),
    })
}

/// Decodes NDEF bytes given as hex; whitespace is ignored.
pub fn decode_report(hex_text: &str) -> Result<DecodeReport, String> {
    let compact: String = hex_text.chars().filter(|c| !c.is_whitespace()).collect();
    let bytes = hex::decode(&compact).map_err(|e| format!("not hex: {e}"))?;
    let msg = decode_message(&bytes).map_err(|e| e.to_string())?;
    let (gate, gate_error) = match parse_gate_tag_message(&msg) {
        Ok(p) => (Some(GateView::from(&p)), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(DecodeReport {
        message_len: bytes.len(),
        records: record_views(&msg),
        gate,
        gate_error,
    })
}

/// Accepts RFC 3339, or a `datetime-local` value read as UTC.
fn parse_time(s: &str) -> Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| t.and_utc())
        .ok_or_else(|| format!("`{s}` is not a date and time"))
}

/// Decision for one user at one gate at `now`.
pub fn decision_report(has_policy: bool, enabled: bool, expires_at: &str, now: &str) -> Result<DecisionReport, String> {
    let expires = parse_time(expires_at)?;
    let now = parse_time(now)?;
    let mut table = PolicyTable::new();
    if has_policy {
        table.insert(AccessPolicy {
            user_id: UserId(1),
            gate_id: 1,
            enabled,
            expires_at: expires,
        });
    }
    let decision = decide_access(&table, UserId(1), 1, now);
    Ok(DecisionReport {
        outcome: if decision.is_granted() { "granted" } else { "denied" },
        reason: decision.reason().map(|r| r.as_str()),
        now: now.to_rfc3339(),
        expires_at: expires.to_rfc3339(),
        seconds_left: (expires - now).num_seconds(),
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    let value = match r {
        Ok(v) => serde_json::json!({ "ok": v }),
        Err(e) => serde_json::json!({ "error": e }),
    };
    value.to_string()
}

#[wasm_bindgen(js_name = gateTagReport)]
pub fn gate_tag_report_js(guid_hex: &str, gate_id: u32, android_app_id: &str, universal_link: &str, standard: &str) -> String {
    to_json(gate_tag_report(guid_hex, gate_id, android_app_id, universal_link, standard))
}

#[wasm_bindgen(js_name = decodeReport)]
pub fn decode_report_js(hex_text: &str) -> String {
    to_json(decode_report(hex_text))
}

#[wasm_bindgen(js_name = decisionReport)]
pub fn decision_report_js(has_policy: bool, enabled: bool, expires_at: &str, now: &str) -> String {
    to_json(decision_report(has_policy, enabled, expires_at, now))
}

#[cfg(test)]
mod tests {
    use gatekeeper_core::{DEFAULT_ANDROID_APP_ID, DEFAULT_UNIVERSAL_LINK};

    use super::*;

    const GUID: &str = "00112233445566778899aabbccddeeff";

    #[test]
    fn reference_tag() {
        let r = gate_tag_report(GUID, 1, DEFAULT_ANDROID_APP_ID, DEFAULT_UNIVERSAL_LINK, "ntag213").unwrap();
        let sizes: Vec<_> = r.records.iter().map(|v| v.encoded_len).collect();
        assert_eq!(sizes, [58, 29, 42]);
        assert_eq!(r.accounting.total_bytes, 120);
        assert_eq!(r.message_len, 129);
        assert_eq!(r.message_hex.len(), 2 * 129);
        assert_eq!((r.tlv_len, r.capacity, r.fits), (132, 144, true));
        assert!(r.hexdump.starts_with("00000000: "));
    }

    #[test]
    fn long_link_overflows_ntag213_but_not_216() {
        let link = format!("https://example.com/{}", "x".repeat(200));
        let small = gate_tag_report(GUID, 1, DEFAULT_ANDROID_APP_ID, &link, "213").unwrap();
        assert!(!small.fits);
        assert!(gate_tag_report(GUID, 1, DEFAULT_ANDROID_APP_ID, &link, "216").unwrap().fits);
    }

    #[test]
    fn encode_errors() {
        assert!(gate_tag_report("abc", 1, "a", DEFAULT_UNIVERSAL_LINK, "213").is_err());
        assert!(gate_tag_report(GUID, 1, "", DEFAULT_UNIVERSAL_LINK, "213").is_err());
        assert!(gate_tag_report(GUID, 1, "a", DEFAULT_UNIVERSAL_LINK, "ntag215").is_err());
    }

    #[test]
    fn decode_roundtrip_and_corruption() {
        let r = gate_tag_report(GUID, 77, DEFAULT_ANDROID_APP_ID, DEFAULT_UNIVERSAL_LINK, "213").unwrap();
        let spaced: String = r
            .message_hex
            .as_bytes()
            .chunks(2)
            .map(|c| std::str::from_utf8(c).unwrap())
            .collect::<Vec<_>>()
            .join(" ");
        let d = decode_report(&spaced).unwrap();
        assert_eq!(d.records, r.records);
        let gate = d.gate.unwrap();
        assert_eq!((gate.server_guid.as_str(), gate.gate_id), (GUID, 77));

        assert!(decode_report(&r.message_hex[..r.message_hex.len() - 2]).is_err());
        assert!(decode_report("zz").unwrap_err().starts_with("not hex"));
        let plain = decode_report("d00000").unwrap();
        assert_eq!(plain.records.len(), 1);
        assert!(plain.gate.is_none() && plain.gate_error.is_some());
    }

    #[test]
    fn decision_boundary() {
        let d = |now| decision_report(true, true, "2026-03-01T12:00:00Z", now).unwrap();
        let before = d("2026-03-01T11:59:59Z");
        assert_eq!((before.outcome, before.seconds_left), ("granted", 1));
        let at = d("2026-03-01T12:00:00Z");
        assert_eq!((at.outcome, at.reason), ("denied", Some("policy_expired")));
        assert_eq!(decision_report(true, false, "2030-01-01T00:00", "2026-01-01T00:00").unwrap().reason, Some("policy_disabled"));
        assert_eq!(decision_report(false, true, "2030-01-01T00:00", "2026-01-01T00:00").unwrap().reason, Some("no_policy"));
        assert!(decision_report(true, true, "soon", "2026-01-01T00:00").is_err());
    }

    #[test]
    fn json_envelope() {
        let ok: serde_json::Value = serde_json::from_str(&decision_report_js(true, true, "2026-03-01T12:00", "2026-03-01T11:00")).unwrap();
        assert_eq!(ok["ok"]["outcome"], "granted");
        assert_eq!(ok["ok"]["seconds_left"], 3600);
        let err: serde_json::Value = serde_json::from_str(&decode_report_js("0")).unwrap();
        assert!(err["error"].as_str().unwrap().starts_with("not hex"));
        let tag: serde_json::Value =
            serde_json::from_str(&gate_tag_report_js(GUID, 1, DEFAULT_ANDROID_APP_ID, DEFAULT_UNIVERSAL_LINK, "ntag216")).unwrap();
        assert_eq!(tag["ok"]["accounting"]["total_bytes"], 120);
        assert_eq!(tag["ok"]["capacity"], 888);
    }
}
