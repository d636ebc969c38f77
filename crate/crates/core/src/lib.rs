//! Core of the gatekeeper access-control system: the NDEF gate-tag codec,
//! a simulated NTAG213/216 chip and the access policy engine.

pub mod event;
pub mod gate_tag;
pub mod hexdump;
pub mod model;
pub mod ndef;
pub mod policy;
pub mod tag;

pub use event::{AccessEvent, BadTimeRange, EventFilter};
pub use gate_tag::{
    build_gate_tag_message, parse_gate_tag_message, payload_accounting, GateTagError,
    GateTagPayload, PayloadAccounting, ServerGuid,
};
pub use model::{ContentHash, GateId, UserId};
pub use ndef::{decode_message, encode_message, NdefError, NdefMessage, NdefRecord, Tnf};
pub use policy::{
    decide_access, AccessDecision, AccessPolicy, DenyReason, Directory, Gate, PolicyError,
    PolicyTable, User,
};
pub use tag::{Password, TagChip, TagError, TagStandard};

/// Application id and universal link used by the reference deployment.
pub const DEFAULT_ANDROID_APP_ID: &str = "com.gatekeeper.accessctl";
pub const DEFAULT_UNIVERSAL_LINK: &str =
    "https://gatekeeper.example.com/app/access/checkin?src=ntag21x";
