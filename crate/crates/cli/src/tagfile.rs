//! Tag images on disk: provisioning a gate tag and reading one back the way
//! a phone would.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;

use gatekeeper_core::hexdump::hexdump;
use gatekeeper_core::{
    build_gate_tag_message, decode_message, parse_gate_tag_message, GateTagError, GateTagPayload, NdefError,
    NdefMessage, Password, TagChip, TagError, TagStandard,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TagFileError {
    #[error("{0} already exists; pass --force to overwrite")]
    FileExists(String),
    #[error("tag: {0}")]
    Tag(#[from] TagError),
    #[error("ndef: {0}")]
    Ndef(#[from] NdefError),
    #[error("gate tag: {0}")]
    GateTag(#[from] GateTagError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Builds a chip holding the gate message, protected by `password`.
pub fn provision_chip(
    payload: &GateTagPayload,
    standard: TagStandard,
    password: Password,
    seed: Option<u64>,
) -> Result<TagChip, TagFileError> {
    let bytes = build_gate_tag_message(payload)?.encode()?;
    let mut chip = TagChip::new(standard, seed);
    chip.set_password(password, None)?;
    chip.write_ndef(&bytes, Some(password))?;
    Ok(chip)
}

/// Saves a chip image; refuses to replace an existing file unless `force`.
pub fn save_chip(chip: &TagChip, path: &Path, force: bool) -> Result<(), TagFileError> {
    let io = |source| TagFileError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut opts = OpenOptions::new();
    opts.write(true);
    if force {
        opts.create(true).truncate(true);
    } else {
        opts.create_new(true);
    }
    let mut file = opts.open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AlreadyExists {
            TagFileError::FileExists(path.display().to_string())
        } else {
            io(e)
        }
    })?;
    file.write_all(&chip.save_image()).map_err(io)?;
    file.sync_all().map_err(io)
}

pub fn load_chip(path: &Path) -> Result<TagChip, TagFileError> {
    let bytes = std::fs::read(path).map_err(|source| TagFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(TagChip::load_image(&bytes)?)
}

pub fn read_message(chip: &TagChip) -> Result<NdefMessage, TagFileError> {
    Ok(decode_message(chip.read_ndef()?)?)
}

/// What a phone extracts from a tap.
pub fn read_gate_payload(chip: &TagChip) -> Result<GateTagPayload, TagFileError> {
    Ok(parse_gate_tag_message(&read_message(chip)?)?)
}

fn printable(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) if s.chars().all(|c| !c.is_control()) => format!("\"{s}\""),
        _ => hex::encode(bytes),
    }
}

/// Human-readable listing of a chip: header, records, decoded gate fields
/// and a hexdump of the NDEF message.
pub fn describe(chip: &TagChip) -> Result<String, TagFileError> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}  uid {}  capacity {} bytes  read-only {}  password {}",
        chip.standard().name(),
        hex::encode(chip.uid()),
        chip.capacity(),
        if chip.is_read_only() { "yes" } else { "no" },
        if chip.has_password() { "set" } else { "none" },
    );
    let bytes = chip.read_ndef()?;
    let msg = decode_message(bytes)?;
    let _ = writeln!(out, "NDEF message: {} bytes, {} records", bytes.len(), msg.records.len());
    for (i, r) in msg.records.iter().enumerate() {
        let _ = writeln!(
            out,
            "  [{i}] tnf={} type={} payload={} bytes encoded={} bytes",
            r.tnf.name(),
            printable(&r.type_bytes),
            r.payload.len(),
            r.encoded_len(),
        );
    }
    match parse_gate_tag_message(&msg) {
        Ok(p) => {
            let _ = writeln!(out, "server guid:    {}", p.server_guid);
            let _ = writeln!(out, "gate id:        {}", p.gate_id);
            let _ = writeln!(out, "android app id: {}", p.android_app_id);
            let _ = writeln!(out, "universal link: {}", p.universal_link);
        }
        Err(e) => {
            let _ = writeln!(out, "not a gate tag: {e}");
        }
    }
    out.push_str(&hexdump(bytes));
    Ok(out)
}
