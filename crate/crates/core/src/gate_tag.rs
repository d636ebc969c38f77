//! The gate tag layout: a universal-link URI record, the `gk:acl` record
//! holding the server GUID and gate id, and an Android Application Record.

use std::fmt;

use thiserror::Error;

use crate::ndef::{NdefMessage, NdefRecord, Tnf};

/// External type of the record carrying `server_guid || gate_id (BE)`.
pub const ACL_RECORD_TYPE: &str = "gk:acl";
/// External type of the Android Application Record.
pub const AAR_RECORD_TYPE: &str = "android.com:pkg";
/// Well-known type of a URI record.
pub const URI_RECORD_TYPE: &str = "U";

const ACL_PAYLOAD_LEN: usize = 16 + 4;

/// URI identifier codes, indexed by code. Code 0 means no abbreviation.
const URI_PREFIXES: [&str; 36] = [
    "",
    "http://www.",
    "https://www.",
    "http://",
    "https://",
    "tel:",
    "mailto:",
    "ftp://anonymous:anonymous@",
    "ftp://ftp.",
    "ftps://",
    "sftp://",
    "smb://",
    "nfs://",
    "ftp://",
    "dav://",
    "news:",
    "telnet://",
    "imap:",
    "rtsp://",
    "urn:",
    "pop:",
    "sip:",
    "sips:",
    "tftp:",
    "btspp://",
    "btl2cap://",
    "btgoep://",
    "tcpobex://",
    "irdaobex://",
    "file://",
    "urn:epc:id:",
    "urn:epc:tag:",
    "urn:epc:pat:",
    "urn:epc:raw:",
    "urn:epc:",
    "urn:nfc:",
];

/// Picks the longest matching prefix. Returns `(code, remainder)`; code 0 if
/// nothing matches.
pub fn abbreviate_uri(uri: &str) -> (u8, &str) {
    URI_PREFIXES
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, p)| uri.starts_with(*p))
        .max_by_key(|(_, p)| p.len())
        .map_or((0, uri), |(code, p)| (code as u8, &uri[p.len()..]))
}

pub fn expand_uri(code: u8, rest: &str) -> Option<String> {
    URI_PREFIXES.get(code as usize).map(|p| format!("{p}{rest}"))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GateTagError {
    #[error("invalid gate tag payload: {0}")]
    InvalidPayload(&'static str),
    #[error("message has no `{0}` record")]
    MissingRecord(&'static str),
    #[error("`gk:acl` payload is {0} bytes, expected 20")]
    BadLength(usize),
}

/// 128-bit server identifier written on every tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ServerGuid(pub [u8; 16]);

impl ServerGuid {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        hex::decode(s).ok()?.try_into().ok().map(ServerGuid)
    }
}

impl fmt::Display for ServerGuid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateTagPayload {
    pub server_guid: ServerGuid,
    pub gate_id: u32,
    pub android_app_id: String,
    pub universal_link: String,
}

impl GateTagPayload {
    pub fn validate(&self) -> Result<(), GateTagError> {
        if self.android_app_id.is_empty() {
            return Err(GateTagError::InvalidPayload("android app id is empty"));
        }
        if self.android_app_id.len() > 255 {
            return Err(GateTagError::InvalidPayload("android app id longer than 255 bytes"));
        }
        if !self.android_app_id.is_ascii() {
            return Err(GateTagError::InvalidPayload("android app id is not ASCII"));
        }
        let (code, rest) = abbreviate_uri(&self.universal_link);
        if code == 0 {
            return Err(GateTagError::InvalidPayload(
                "universal link has no abbreviatable scheme",
            ));
        }
        if rest.len() >= 255 {
            return Err(GateTagError::InvalidPayload("universal link too long"));
        }
        Ok(())
    }

    fn uri_record(&self) -> NdefRecord {
        let (code, rest) = abbreviate_uri(&self.universal_link);
        let mut payload = Vec::with_capacity(1 + rest.len());
        payload.push(code);
        payload.extend_from_slice(rest.as_bytes());
        NdefRecord::new(Tnf::WellKnown, URI_RECORD_TYPE.as_bytes(), payload)
    }

    fn acl_record(&self) -> NdefRecord {
        let mut payload = Vec::with_capacity(ACL_PAYLOAD_LEN);
        payload.extend_from_slice(&self.server_guid.0);
        payload.extend_from_slice(&self.gate_id.to_be_bytes());
        NdefRecord::external(ACL_RECORD_TYPE, payload)
    }

    fn aar_record(&self) -> NdefRecord {
        NdefRecord::external(AAR_RECORD_TYPE, self.android_app_id.as_bytes())
    }
}

/// Builds the three-record tag message: URI, `gk:acl`, AAR.
pub fn build_gate_tag_message(p: &GateTagPayload) -> Result<NdefMessage, GateTagError> {
    p.validate()?;
    Ok(NdefMessage::new(vec![p.uri_record(), p.acl_record(), p.aar_record()]))
}

/// Recovers the payload; records are matched by type, not position.
pub fn parse_gate_tag_message(msg: &NdefMessage) -> Result<GateTagPayload, GateTagError> {
    let acl = msg
        .find(Tnf::External, ACL_RECORD_TYPE.as_bytes())
        .ok_or(GateTagError::MissingRecord(ACL_RECORD_TYPE))?;
    if acl.payload.len() != ACL_PAYLOAD_LEN {
        return Err(GateTagError::BadLength(acl.payload.len()));
    }
    let mut guid = [0u8; 16];
    guid.copy_from_slice(&acl.payload[..16]);
    let gate_id = u32::from_be_bytes(acl.payload[16..20].try_into().unwrap());

    let uri = msg
        .find(Tnf::WellKnown, URI_RECORD_TYPE.as_bytes())
        .ok_or(GateTagError::MissingRecord(URI_RECORD_TYPE))?;
    let (&code, rest) = uri
        .payload
        .split_first()
        .ok_or(GateTagError::InvalidPayload("URI record is empty"))?;
    let rest = std::str::from_utf8(rest)
        .map_err(|_| GateTagError::InvalidPayload("URI is not UTF-8"))?;
    let universal_link =
        expand_uri(code, rest).ok_or(GateTagError::InvalidPayload("unknown URI prefix code"))?;

    let aar = msg
        .find(Tnf::External, AAR_RECORD_TYPE.as_bytes())
        .ok_or(GateTagError::MissingRecord(AAR_RECORD_TYPE))?;
    let android_app_id = String::from_utf8(aar.payload.clone())
        .map_err(|_| GateTagError::InvalidPayload("android app id is not UTF-8"))?;

    let payload = GateTagPayload {
        server_guid: ServerGuid(guid),
        gate_id,
        android_app_id,
        universal_link,
    };
    payload.validate()?;
    Ok(payload)
}

/// Logical byte accounting of what a gate tag carries. GUID and gate id are
/// counted as raw values; the two launch records are counted with their
/// record headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct PayloadAccounting {
    pub server_id_bytes: usize,
    pub gate_id_bytes: usize,
    pub aar_bytes: usize,
    pub universal_link_bytes: usize,
    pub total_bytes: usize,
}

pub fn payload_accounting(p: &GateTagPayload) -> Result<PayloadAccounting, GateTagError> {
    p.validate()?;
    let server_id_bytes = p.server_guid.0.len();
    let gate_id_bytes = std::mem::size_of_val(&p.gate_id);
    let aar_bytes = p.aar_record().encoded_len();
    let universal_link_bytes = p.uri_record().encoded_len();
    Ok(PayloadAccounting {
        server_id_bytes,
        gate_id_bytes,
        aar_bytes,
        universal_link_bytes,
        total_bytes: server_id_bytes + gate_id_bytes + aar_bytes + universal_link_bytes,
    })
}
