//! NDEF message codec.
//!
//! Records are laid out as
//!
//! ```text
//! header | type length | payload length (1 or 4 bytes) | [id length] | type | [id] | payload
//! ```
//!
//! where the header byte carries MB (0x80), ME (0x40), CF (0x20), SR (0x10),
//! IL (0x08) and the 3-bit TNF. The encoder is canonical: SR is used whenever
//! the payload is shorter than 256 bytes and chunked records are refused. The
//! decoder also accepts long-form lengths for small payloads.

use thiserror::Error;

const FLAG_MB: u8 = 0x80;
const FLAG_ME: u8 = 0x40;
const FLAG_CF: u8 = 0x20;
const FLAG_SR: u8 = 0x10;
const FLAG_IL: u8 = 0x08;
const TNF_MASK: u8 = 0x07;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NdefError {
    #[error("message has no records")]
    EmptyMessage,
    #[error("payload of {0} bytes does not fit a 32-bit length field")]
    OversizePayload(usize),
    #[error("chunked records are not emitted by the canonical encoder")]
    ChunkedRecord,
    #[error("invalid record: {0}")]
    InvalidRecord(&'static str),
    #[error("input ends in the middle of a record")]
    Truncated,
    #[error("message begin/end flags are inconsistent")]
    FlagViolation,
    #[error("{0} bytes follow the final record")]
    TrailingBytes(usize),
}

/// Type name format of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Tnf {
    Empty = 0,
    WellKnown = 1,
    Media = 2,
    AbsoluteUri = 3,
    External = 4,
    Unknown = 5,
    Unchanged = 6,
}

impl Tnf {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Tnf::Empty,
            1 => Tnf::WellKnown,
            2 => Tnf::Media,
            3 => Tnf::AbsoluteUri,
            4 => Tnf::External,
            5 => Tnf::Unknown,
            6 => Tnf::Unchanged,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Tnf::Empty => "empty",
            Tnf::WellKnown => "well-known",
            Tnf::Media => "media",
            Tnf::AbsoluteUri => "absolute-uri",
            Tnf::External => "external",
            Tnf::Unknown => "unknown",
            Tnf::Unchanged => "unchanged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NdefRecord {
    pub tnf: Tnf,
    pub type_bytes: Vec<u8>,
    pub id_bytes: Option<Vec<u8>>,
    pub payload: Vec<u8>,
    /// Chunk flag. Decoded faithfully; the encoder rejects it.
    pub chunked: bool,
}

impl NdefRecord {
    pub fn new(tnf: Tnf, type_bytes: impl Into<Vec<u8>>, payload: impl Into<Vec<u8>>) -> Self {
        Self {
            tnf,
            type_bytes: type_bytes.into(),
            id_bytes: None,
            payload: payload.into(),
            chunked: false,
        }
    }

    pub fn empty() -> Self {
        Self::new(Tnf::Empty, Vec::new(), Vec::new())
    }

    pub fn external(type_name: &str, payload: impl Into<Vec<u8>>) -> Self {
        Self::new(Tnf::External, type_name.as_bytes(), payload)
    }

    pub fn with_id(mut self, id: impl Into<Vec<u8>>) -> Self {
        self.id_bytes = Some(id.into());
        self
    }

    pub fn is_type(&self, tnf: Tnf, type_bytes: &[u8]) -> bool {
        self.tnf == tnf && self.type_bytes == type_bytes
    }

    fn validate(&self) -> Result<(), NdefError> {
        if self.tnf == Tnf::Empty
            && (!self.type_bytes.is_empty()
                || !self.payload.is_empty()
                || self.id_bytes.as_ref().is_some_and(|id| !id.is_empty()))
        {
            return Err(NdefError::InvalidRecord("empty record carries data"));
        }
        if self.type_bytes.len() > u8::MAX as usize {
            return Err(NdefError::InvalidRecord("type longer than 255 bytes"));
        }
        if self.id_bytes.as_ref().is_some_and(|id| id.len() > u8::MAX as usize) {
            return Err(NdefError::InvalidRecord("id longer than 255 bytes"));
        }
        Ok(())
    }

    /// Size of the canonical encoding of this record.
    pub fn encoded_len(&self) -> usize {
        let short = self.payload.len() < 256;
        1 + 1
            + if short { 1 } else { 4 }
            + usize::from(self.id_bytes.is_some())
            + self.type_bytes.len()
            + self.id_bytes.as_ref().map_or(0, Vec::len)
            + self.payload.len()
    }

    fn encode_into(&self, out: &mut Vec<u8>, begin: bool, end: bool) -> Result<(), NdefError> {
        self.validate()?;
        if self.chunked {
            return Err(NdefError::ChunkedRecord);
        }
        let payload_len = payload_length_field(self.payload.len())?;
        let short = payload_len < 256;

        let mut header = self.tnf.code();
        if begin {
            header |= FLAG_MB;
        }
        if end {
            header |= FLAG_ME;
        }
        if short {
            header |= FLAG_SR;
        }
        if self.id_bytes.is_some() {
            header |= FLAG_IL;
        }

        out.push(header);
        out.push(self.type_bytes.len() as u8);
        if short {
            out.push(payload_len as u8);
        } else {
            out.extend_from_slice(&payload_len.to_be_bytes());
        }
        if let Some(id) = &self.id_bytes {
            out.push(id.len() as u8);
        }
        out.extend_from_slice(&self.type_bytes);
        if let Some(id) = &self.id_bytes {
            out.extend_from_slice(id);
        }
        out.extend_from_slice(&self.payload);
        Ok(())
    }
}

fn payload_length_field(len: usize) -> Result<u32, NdefError> {
    u32::try_from(len).map_err(|_| NdefError::OversizePayload(len))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NdefMessage {
    pub records: Vec<NdefRecord>,
}

impl NdefMessage {
    pub fn new(records: Vec<NdefRecord>) -> Self {
        Self { records }
    }

    pub fn find(&self, tnf: Tnf, type_bytes: &[u8]) -> Option<&NdefRecord> {
        self.records.iter().find(|r| r.is_type(tnf, type_bytes))
    }

    pub fn encode(&self) -> Result<Vec<u8>, NdefError> {
        encode_message(self)
    }
}

pub fn encode_message(msg: &NdefMessage) -> Result<Vec<u8>, NdefError> {
    if msg.records.is_empty() {
        return Err(NdefError::EmptyMessage);
    }
    let last = msg.records.len() - 1;
    let mut out = Vec::with_capacity(msg.records.iter().map(NdefRecord::encoded_len).sum());
    for (i, record) in msg.records.iter().enumerate() {
        record.encode_into(&mut out, i == 0, i == last)?;
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NdefError> {
        let end = self.pos.checked_add(n).ok_or(NdefError::Truncated)?;
        let slice = self.bytes.get(self.pos..end).ok_or(NdefError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn byte(&mut self) -> Result<u8, NdefError> {
        Ok(self.take(1)?[0])
    }
}

pub fn decode_message(bytes: &[u8]) -> Result<NdefMessage, NdefError> {
    let mut reader = Reader { bytes, pos: 0 };
    let mut records = Vec::new();
    loop {
        let header = reader.byte()?;
        let first = records.is_empty();
        if (header & FLAG_MB != 0) != first {
            return Err(NdefError::FlagViolation);
        }
        let tnf = Tnf::from_code(header & TNF_MASK)
            .ok_or(NdefError::InvalidRecord("reserved type name format"))?;
        let type_len = reader.byte()? as usize;
        let payload_len = if header & FLAG_SR != 0 {
            reader.byte()? as usize
        } else {
            let raw = reader.take(4)?;
            u32::from_be_bytes([raw[0], raw[1], raw[2], raw[3]]) as usize
        };
        let id_len = if header & FLAG_IL != 0 {
            Some(reader.byte()? as usize)
        } else {
            None
        };
        let type_bytes = reader.take(type_len)?.to_vec();
        let id_bytes = match id_len {
            Some(n) => Some(reader.take(n)?.to_vec()),
            None => None,
        };
        let payload = reader.take(payload_len)?.to_vec();

        let record = NdefRecord {
            tnf,
            type_bytes,
            id_bytes,
            payload,
            chunked: header & FLAG_CF != 0,
        };
        record.validate()?;
        records.push(record);

        if header & FLAG_ME != 0 {
            break;
        }
    }
    let rest = bytes.len() - reader.pos;
    if rest != 0 {
        return Err(NdefError::TrailingBytes(rest));
    }
    Ok(NdefMessage { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_empty_record() {
        let msg = NdefMessage::new(vec![NdefRecord::empty()]);
        let bytes = encode_message(&msg).unwrap();
        assert_eq!(bytes, [0xD0, 0x00, 0x00]);
        assert_eq!(decode_message(&bytes).unwrap(), msg);
    }

    #[test]
    fn empty_message_rejected() {
        assert_eq!(
            encode_message(&NdefMessage::new(vec![])),
            Err(NdefError::EmptyMessage)
        );
    }

    #[test]
    fn missing_length_byte_is_truncated() {
        assert_eq!(decode_message(&[0xD0, 0x00]), Err(NdefError::Truncated));
        assert_eq!(decode_message(&[]), Err(NdefError::Truncated));
    }

    #[test]
    fn oversize_payload_length() {
        assert_eq!(payload_length_field(255), Ok(255));
        assert_eq!(payload_length_field(u32::MAX as usize), Ok(u32::MAX));
        #[cfg(target_pointer_width = "64")]
        assert_eq!(
            payload_length_field(1 << 32),
            Err(NdefError::OversizePayload(1 << 32))
        );
    }

    #[test]
    fn long_form_used_from_256_bytes() {
        let small = NdefRecord::new(Tnf::Media, b"a/b".to_vec(), vec![7; 255]);
        let large = NdefRecord::new(Tnf::Media, b"a/b".to_vec(), vec![7; 256]);
        let s = encode_message(&NdefMessage::new(vec![small.clone()])).unwrap();
        let l = encode_message(&NdefMessage::new(vec![large.clone()])).unwrap();
        assert_eq!(s[0] & FLAG_SR, FLAG_SR);
        assert_eq!(l[0] & FLAG_SR, 0);
        assert_eq!(&l[2..6], &[0, 0, 1, 0]);
        assert_eq!(s.len(), small.encoded_len());
        assert_eq!(l.len(), large.encoded_len());
    }

    #[test]
    fn long_form_small_payload_accepted() {
        // 0xC2 = MB | ME | TNF media, no SR
        let bytes = [0xC2, 0x01, 0x00, 0x00, 0x00, 0x02, b'x', 0xAA, 0xBB];
        let msg = decode_message(&bytes).unwrap();
        assert_eq!(msg.records[0].payload, [0xAA, 0xBB]);
        // re-encoding canonicalises to the short form
        assert_eq!(
            encode_message(&msg).unwrap(),
            [0xD2, 0x01, 0x02, b'x', 0xAA, 0xBB]
        );
    }

    #[test]
    fn id_field_roundtrips() {
        let rec = NdefRecord::new(Tnf::WellKnown, b"T".to_vec(), b"\x02enhi".to_vec()).with_id(b"r1".to_vec());
        let bytes = encode_message(&NdefMessage::new(vec![rec.clone()])).unwrap();
        assert_eq!(bytes[..6], [0xD9, 0x01, 0x05, 0x02, b'T', b'r']);
        assert_eq!(decode_message(&bytes).unwrap().records, vec![rec]);
    }

    #[test]
    fn flag_violations() {
        // first record without MB
        assert_eq!(decode_message(&[0x50, 0x00, 0x00]), Err(NdefError::FlagViolation));
        // second record carrying MB again
        assert_eq!(
            decode_message(&[0x90, 0x00, 0x00, 0xD0, 0x00, 0x00]),
            Err(NdefError::FlagViolation)
        );
        // no ME anywhere
        assert_eq!(
            decode_message(&[0x90, 0x00, 0x00, 0x10, 0x00, 0x00]),
            Err(NdefError::Truncated)
        );
    }

    #[test]
    fn trailing_bytes_rejected() {
        assert_eq!(
            decode_message(&[0xD0, 0x00, 0x00, 0xFE]),
            Err(NdefError::TrailingBytes(1))
        );
    }

    #[test]
    fn invalid_records() {
        let bad_empty = NdefRecord::new(Tnf::Empty, b"x".to_vec(), vec![]);
        assert!(matches!(
            encode_message(&NdefMessage::new(vec![bad_empty])),
            Err(NdefError::InvalidRecord(_))
        ));
        assert!(matches!(
            decode_message(&[0xD0, 0x01, 0x00, b'x']),
            Err(NdefError::InvalidRecord(_))
        ));
        assert!(matches!(
            decode_message(&[0xD7, 0x00, 0x00]),
            Err(NdefError::InvalidRecord(_))
        ));
        let long_type = NdefRecord::new(Tnf::Unknown, vec![b'a'; 256], vec![]);
        assert!(matches!(
            encode_message(&NdefMessage::new(vec![long_type])),
            Err(NdefError::InvalidRecord(_))
        ));
    }

    #[test]
    fn chunked_decoded_but_not_encoded() {
        let msg = decode_message(&[0xF5, 0x00, 0x01, 0x42]).unwrap();
        assert!(msg.records[0].chunked);
        assert_eq!(encode_message(&msg), Err(NdefError::ChunkedRecord));
    }
}
