//! Simulated NTAG213/NTAG216 chip.
//!
//! Memory holds a single NDEF TLV (`03 len msg FE`). Reads never need the
//! password; every mutation does once one is installed, and the read-only
//! switch can never be cleared.

use rand::{Rng, SeedableRng};
use thiserror::Error;

const TLV_NDEF: u8 = 0x03;
const TLV_NULL: u8 = 0x00;
const TLV_TERMINATOR: u8 = 0xFE;

/// NXP manufacturer code, first UID byte on NTAG parts.
const UID_MANUFACTURER: u8 = 0x04;

pub const IMAGE_MAGIC: &[u8; 6] = b"GKTAG1";
const IMAGE_FLAG_READ_ONLY: u8 = 0x01;
const IMAGE_FLAG_PASSWORD: u8 = 0x02;

pub type Password = [u8; 4];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("tag is locked read-only")]
    ReadOnly,
    #[error("password authentication failed")]
    AuthFailed,
    #[error("{needed} bytes do not fit in {capacity} bytes of user memory")]
    CapacityExceeded { needed: usize, capacity: usize },
    #[error("tag holds no NDEF message")]
    NoMessage,
    #[error("not a tag image (bad magic)")]
    BadMagic,
    #[error("corrupt tag image: {0}")]
    CorruptImage(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagStandard {
    Ntag213,
    Ntag216,
}

impl TagStandard {
    /// Usable NDEF area in bytes.
    pub fn capacity_bytes(self) -> usize {
        match self {
            TagStandard::Ntag213 => 144,
            TagStandard::Ntag216 => 888,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TagStandard::Ntag213 => "NTAG213",
            TagStandard::Ntag216 => "NTAG216",
        }
    }

    fn image_code(self) -> u8 {
        match self {
            TagStandard::Ntag213 => 1,
            TagStandard::Ntag216 => 2,
        }
    }

    fn from_image_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(TagStandard::Ntag213),
            2 => Some(TagStandard::Ntag216),
            _ => None,
        }
    }
}

impl std::str::FromStr for TagStandard {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ntag213" | "213" => Ok(TagStandard::Ntag213),
            "ntag216" | "216" => Ok(TagStandard::Ntag216),
            other => Err(format!("unknown tag standard `{other}` (expected ntag213 or ntag216)")),
        }
    }
}

/// Size of `msg_len` bytes once wrapped in an NDEF TLV plus terminator.
pub fn wrapped_len(msg_len: usize) -> usize {
    let length_field = if msg_len < 0xFF { 1 } else { 3 };
    1 + length_field + msg_len + 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagChip {
    uid: [u8; 7],
    standard: TagStandard,
    memory: Vec<u8>,
    password: Option<Password>,
    read_only: bool,
}

impl TagChip {
    /// Fresh blank tag. A seed makes the UID deterministic.
    pub fn new(standard: TagStandard, seed: Option<u64>) -> Self {
        let mut uid: [u8; 7] = match seed {
            Some(seed) => rand::rngs::StdRng::seed_from_u64(seed).random(),
            None => rand::rng().random(),
        };
        uid[0] = UID_MANUFACTURER;
        Self {
            uid,
            standard,
            memory: Vec::new(),
            password: None,
            read_only: false,
        }
    }

    pub fn uid(&self) -> [u8; 7] {
        self.uid
    }

    pub fn standard(&self) -> TagStandard {
        self.standard
    }

    pub fn capacity(&self) -> usize {
        self.standard.capacity_bytes()
    }

    pub fn memory(&self) -> &[u8] {
        &self.memory
    }

    pub fn is_read_only(&self) -> bool {
        self.read_only
    }

    pub fn has_password(&self) -> bool {
        self.password.is_some()
    }

    fn authorize(&self, supplied: Option<Password>) -> Result<(), TagError> {
        match self.password {
            Some(expected) if supplied != Some(expected) => Err(TagError::AuthFailed),
            _ => Ok(()),
        }
    }

    /// Replaces memory with `msg_bytes` wrapped in an NDEF TLV.
    pub fn write_ndef(&mut self, msg_bytes: &[u8], password: Option<Password>) -> Result<(), TagError> {
        if self.read_only {
            return Err(TagError::ReadOnly);
        }
        self.authorize(password)?;
        let needed = wrapped_len(msg_bytes.len());
        if needed > self.capacity() || msg_bytes.len() > u16::MAX as usize {
            return Err(TagError::CapacityExceeded {
                needed,
                capacity: self.capacity(),
            });
        }

        let mut memory = Vec::with_capacity(needed);
        memory.push(TLV_NDEF);
        if msg_bytes.len() < 0xFF {
            memory.push(msg_bytes.len() as u8);
        } else {
            memory.push(0xFF);
            memory.extend_from_slice(&(msg_bytes.len() as u16).to_be_bytes());
        }
        memory.extend_from_slice(msg_bytes);
        memory.push(TLV_TERMINATOR);
        self.memory = memory;
        Ok(())
    }

    /// Returns the NDEF message bytes held in memory.
    pub fn read_ndef(&self) -> Result<&[u8], TagError> {
        let mem = &self.memory;
        let mut pos = 0;
        while mem.get(pos) == Some(&TLV_NULL) {
            pos += 1;
        }
        if mem.get(pos) != Some(&TLV_NDEF) {
            return Err(TagError::NoMessage);
        }
        pos += 1;
        let len = match *mem.get(pos).ok_or(TagError::NoMessage)? {
            0xFF => {
                let raw = mem.get(pos + 1..pos + 3).ok_or(TagError::NoMessage)?;
                pos += 3;
                u16::from_be_bytes([raw[0], raw[1]]) as usize
            }
            n => {
                pos += 1;
                n as usize
            }
        };
        if len == 0 {
            return Err(TagError::NoMessage);
        }
        mem.get(pos..pos + len).ok_or(TagError::NoMessage)
    }

    /// Installs a write password. Changing an existing one needs the old one.
    pub fn set_password(&mut self, new_password: Password, old_password: Option<Password>) -> Result<(), TagError> {
        if self.read_only {
            return Err(TagError::ReadOnly);
        }
        self.authorize(old_password)?;
        self.password = Some(new_password);
        Ok(())
    }

    /// Flips the irreversible read-only switch. Locking a locked tag is a
    /// no-op.
    pub fn lock_readonly(&mut self, password: Option<Password>) -> Result<(), TagError> {
        if self.read_only {
            return Ok(());
        }
        self.authorize(password)?;
        self.read_only = true;
        Ok(())
    }

    /// Serialises to the `GKTAG1` image format:
    ///
    /// ```text
    /// "GKTAG1" | standard u8 | uid [7] | flags u8 | [password [4]] | mem_len u16 BE | memory
    /// ```
    pub fn save_image(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 1 + 7 + 1 + 4 + 2 + self.memory.len());
        out.extend_from_slice(IMAGE_MAGIC);
        out.push(self.standard.image_code());
        out.extend_from_slice(&self.uid);
        let mut flags = 0;
        if self.read_only {
            flags |= IMAGE_FLAG_READ_ONLY;
        }
        if self.password.is_some() {
            flags |= IMAGE_FLAG_PASSWORD;
        }
        out.push(flags);
        if let Some(pw) = self.password {
            out.extend_from_slice(&pw);
        }
        out.extend_from_slice(&(self.memory.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.memory);
        out
    }

    pub fn load_image(bytes: &[u8]) -> Result<Self, TagError> {
        if bytes.len() < IMAGE_MAGIC.len() || &bytes[..6] != IMAGE_MAGIC {
            return Err(TagError::BadMagic);
        }
        let mut rest = &bytes[6..];
        let mut take = |n: usize| -> Result<&[u8], TagError> {
            if rest.len() < n {
                return Err(TagError::CorruptImage("truncated"));
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Ok(head)
        };

        let standard = TagStandard::from_image_code(take(1)?[0])
            .ok_or(TagError::CorruptImage("unknown tag standard"))?;
        let uid: [u8; 7] = take(7)?.try_into().unwrap();
        let flags = take(1)?[0];
        if flags & !(IMAGE_FLAG_READ_ONLY | IMAGE_FLAG_PASSWORD) != 0 {
            return Err(TagError::CorruptImage("unknown flag bits"));
        }
        let password = if flags & IMAGE_FLAG_PASSWORD != 0 {
            Some(take(4)?.try_into().unwrap())
        } else {
            None
        };
        let len_raw = take(2)?;
        let mem_len = u16::from_be_bytes([len_raw[0], len_raw[1]]) as usize;
        if mem_len > standard.capacity_bytes() {
            return Err(TagError::CorruptImage("memory exceeds capacity"));
        }
        let memory = take(mem_len)?.to_vec();
        if !rest.is_empty() {
            return Err(TagError::CorruptImage("trailing bytes"));
        }
        Ok(Self {
            uid,
            standard,
            memory,
            password,
            read_only: flags & IMAGE_FLAG_READ_ONLY != 0,
        })
    }
}
