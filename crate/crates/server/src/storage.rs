//! On-disk state under a data directory:
//!
//! ```text
//! <data>/credentials.json   server GUID, tag password, admin token
//! <data>/directory.json     users, gates, policies, device token digests
//! <data>/events.jsonl       append-only event log, one JSON event per line
//! <data>/blobs/ab/abcd...   photos, addressed by SHA-256
//! ```
//!
//! JSON files are replaced atomically (write to a temp file, fsync, rename).
//! Each event line is fsynced before `append_event` returns.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock, RwLockReadGuard};

use gatekeeper_core::{AccessEvent, ContentHash, Directory, EventFilter, ServerGuid, UserId};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAX_PHOTO_BYTES: usize = 5 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("photo is empty")]
    EmptyPhoto,
    #[error("photo is {0} bytes, limit is {MAX_PHOTO_BYTES}")]
    TooLarge(usize),
    #[error("photo is not a decodable PNG or JPEG image")]
    UndecodableImage,
    #[error("event references unknown {0}")]
    DanglingReference(&'static str),
    #[error("corrupt {file}: {detail}")]
    Corrupt { file: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = StorageError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaType {
    Png,
    Jpeg,
}

impl MediaType {
    pub fn mime(self) -> &'static str {
        match self {
            MediaType::Png => "image/png",
            MediaType::Jpeg => "image/jpeg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhotoBlob {
    pub content_hash: ContentHash,
    pub media_type: MediaType,
    pub bytes: Vec<u8>,
}

pub fn content_hash(bytes: &[u8]) -> ContentHash {
    ContentHash(Sha256::digest(bytes).into())
}

/// Validates size and format; `claimed` must agree with the sniffed format
/// when given.
pub fn check_photo(bytes: &[u8], claimed: Option<MediaType>) -> Result<MediaType> {
    if bytes.is_empty() {
        return Err(StorageError::EmptyPhoto);
    }
    if bytes.len() > MAX_PHOTO_BYTES {
        return Err(StorageError::TooLarge(bytes.len()));
    }
    let (media_type, format) = match image::guess_format(bytes) {
        Ok(image::ImageFormat::Png) => (MediaType::Png, image::ImageFormat::Png),
        Ok(image::ImageFormat::Jpeg) => (MediaType::Jpeg, image::ImageFormat::Jpeg),
        _ => return Err(StorageError::UndecodableImage),
    };
    if claimed.is_some_and(|c| c != media_type) {
        return Err(StorageError::UndecodableImage);
    }
    image::load_from_memory_with_format(bytes, format).map_err(|_| StorageError::UndecodableImage)?;
    Ok(media_type)
}

/// Organization-wide secrets, generated once per data directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrgCredentials {
    pub server_guid: String,
    pub tag_password: String,
    pub admin_token: String,
}

impl OrgCredentials {
    pub fn generate() -> Self {
        let mut rng = rand::rng();
        Self {
            // v4 UUID: 122 random bits
            server_guid: hex::encode(uuid::Uuid::new_v4().as_bytes()),
            tag_password: hex::encode(rng.random::<[u8; 4]>()),
            admin_token: hex::encode(rng.random::<[u8; 24]>()),
        }
    }

    pub fn guid(&self) -> ServerGuid {
        ServerGuid::from_hex(&self.server_guid).expect("validated on load")
    }

    pub fn password(&self) -> [u8; 4] {
        let bytes = hex::decode(&self.tag_password).expect("validated on load");
        bytes.try_into().expect("validated on load")
    }

    fn validate(&self) -> Result<()> {
        let bad = |detail: &str| StorageError::Corrupt {
            file: "credentials.json",
            detail: detail.to_owned(),
        };
        ServerGuid::from_hex(&self.server_guid).ok_or_else(|| bad("server_guid is not 32 hex digits"))?;
        match hex::decode(&self.tag_password) {
            Ok(b) if b.len() == 4 => {}
            _ => return Err(bad("tag_password is not 8 hex digits")),
        }
        if self.admin_token.is_empty() {
            return Err(bad("admin_token is empty"));
        }
        Ok(())
    }
}

/// Users, gates, policies and the device-token index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectoryState {
    pub directory: Directory,
    /// SHA-256 of each issued device token, hex, mapped to its user.
    pub devices: BTreeMap<String, UserId>,
}

impl DirectoryState {
    pub fn token_digest(token: &str) -> String {
        hex::encode(Sha256::digest(token.as_bytes()))
    }

    pub fn user_for_token(&self, token: &str) -> Option<UserId> {
        self.devices.get(&Self::token_digest(token)).copied()
    }
}

struct EventLog {
    file: File,
    events: Vec<AccessEvent>,
}

pub struct Store {
    root: PathBuf,
    credentials: RwLock<OrgCredentials>,
    directory: RwLock<DirectoryState>,
    events: Mutex<EventLog>,
    blob_lock: Mutex<()>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, file: &'static str) -> Result<Option<T>> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| StorageError::Corrupt {
                file,
                detail: e.to_string(),
            }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = File::create(&tmp)?;
        serde_json::to_writer_pretty(&mut f, value).map_err(io::Error::from)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        // make the rename durable
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

/// Reads the event log, dropping a torn final line left by a crash mid-write.
fn load_events(path: &Path) -> Result<(File, Vec<AccessEvent>)> {
    let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
    let mut events = Vec::new();
    let mut good_len = 0u64;
    let mut reader = BufReader::new(&file);
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        if !line.ends_with('\n') {
            tracing::warn!("dropping torn event log tail ({n} bytes)");
            break;
        }
        let event: AccessEvent = serde_json::from_str(&line).map_err(|e| StorageError::Corrupt {
            file: "events.jsonl",
            detail: format!("event {}: {e}", events.len() + 1),
        })?;
        if event.event_seq != events.len() as u64 + 1 {
            return Err(StorageError::Corrupt {
                file: "events.jsonl",
                detail: format!("expected event_seq {}, found {}", events.len() + 1, event.event_seq),
            });
        }
        events.push(event);
        good_len += n as u64;
    }
    drop(reader);
    if file.metadata()?.len() != good_len {
        file.set_len(good_len)?;
        file.seek(SeekFrom::End(0))?;
        file.sync_all()?;
    }
    Ok((file, events))
}

impl Store {
    /// Opens or initialises a data directory. `admin_token` replaces the
    /// stored token when given.
    pub fn open(root: impl Into<PathBuf>, admin_token: Option<&str>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("blobs"))?;

        let cred_path = root.join("credentials.json");
        let mut credentials = match read_json::<OrgCredentials>(&cred_path, "credentials.json")? {
            Some(c) => c,
            None => {
                let c = OrgCredentials::generate();
                write_json_atomic(&cred_path, &c)?;
                c
            }
        };
        credentials.validate()?;
        if let Some(token) = admin_token.filter(|t| *t != credentials.admin_token) {
            credentials.admin_token = token.to_owned();
            credentials.validate()?;
            write_json_atomic(&cred_path, &credentials)?;
        }

        let directory = read_json::<DirectoryState>(&root.join("directory.json"), "directory.json")?
            .unwrap_or_default();
        let (file, events) = load_events(&root.join("events.jsonl"))?;

        Ok(Self {
            root,
            credentials: RwLock::new(credentials),
            directory: RwLock::new(directory),
            events: Mutex::new(EventLog { file, events }),
            blob_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn credentials(&self) -> OrgCredentials {
        self.credentials.read().unwrap().clone()
    }

    pub fn directory(&self) -> RwLockReadGuard<'_, DirectoryState> {
        self.directory.read().unwrap()
    }

    /// Applies `f` to a copy of the directory and persists the result if `f`
    /// succeeds. Writers are serialised; readers see either the old or the
    /// new state.
    pub fn update_directory<T, E>(&self, f: impl FnOnce(&mut DirectoryState) -> Result<T, E>) -> Result<T, E>
    where
        E: From<StorageError>,
    {
        let mut guard = self.directory.write().unwrap();
        let mut next = guard.clone();
        let out = f(&mut next)?;
        write_json_atomic(&self.root.join("directory.json"), &next).map_err(E::from)?;
        *guard = next;
        Ok(out)
    }

    fn blob_path(&self, hash: &ContentHash) -> PathBuf {
        let hex = hash.to_hex();
        self.root.join("blobs").join(&hex[..2]).join(hex)
    }

    /// Stores a photo and returns its digest. Storing the same bytes again is
    /// a no-op.
    pub fn put_photo(&self, bytes: &[u8], claimed: Option<MediaType>) -> Result<ContentHash> {
        check_photo(bytes, claimed)?;
        let hash = content_hash(bytes);
        let path = self.blob_path(&hash);
        let _guard = self.blob_lock.lock().unwrap();
        if !path.exists() {
            fs::create_dir_all(path.parent().unwrap())?;
            let tmp = path.with_extension("tmp");
            {
                let mut f = File::create(&tmp)?;
                f.write_all(bytes)?;
                f.sync_all()?;
            }
            fs::rename(&tmp, &path)?;
        }
        Ok(hash)
    }

    pub fn has_photo(&self, hash: &ContentHash) -> bool {
        self.blob_path(hash).is_file()
    }

    pub fn get_photo(&self, hash: &ContentHash) -> Result<Option<PhotoBlob>> {
        let bytes = match fs::read(self.blob_path(hash)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        if content_hash(&bytes) != *hash {
            return Err(StorageError::Corrupt {
                file: "blobs",
                detail: format!("{hash} does not match its contents"),
            });
        }
        let media_type = check_photo(&bytes, None)?;
        Ok(Some(PhotoBlob {
            content_hash: *hash,
            media_type,
            bytes,
        }))
    }

    fn check_references(&self, event: &AccessEvent) -> Result<()> {
        let state = self.directory();
        if state.directory.user(event.user_id).is_none() {
            return Err(StorageError::DanglingReference("user"));
        }
        let gate_may_be_foreign = matches!(
            event.decision.reason(),
            Some(gatekeeper_core::DenyReason::UnknownGate | gatekeeper_core::DenyReason::UnknownOrg)
        );
        if !gate_may_be_foreign && state.directory.gate(event.gate_id).is_none() {
            return Err(StorageError::DanglingReference("gate"));
        }
        if !self.has_photo(&event.registration_photo) {
            return Err(StorageError::DanglingReference("registration photo"));
        }
        if event.gate_photo.is_some_and(|h| !self.has_photo(&h)) {
            return Err(StorageError::DanglingReference("gate photo"));
        }
        Ok(())
    }

    /// Assigns the next `event_seq`, makes the event durable, then runs
    /// `on_append` while still holding the log lock, so observers see events
    /// in sequence order.
    pub fn append_event(&self, mut event: AccessEvent, on_append: impl FnOnce(&AccessEvent)) -> Result<AccessEvent> {
        self.check_references(&event)?;
        let mut log = self.events.lock().unwrap();
        event.event_seq = log.events.len() as u64 + 1;
        let mut line = serde_json::to_vec(&event).map_err(io::Error::from)?;
        line.push(b'\n');
        log.file.write_all(&line)?;
        log.file.sync_data()?;
        log.events.push(event.clone());
        on_append(&event);
        Ok(event)
    }

    /// Matching events in ascending `event_seq` order.
    pub fn scan_events(&self, filter: &EventFilter) -> Vec<AccessEvent> {
        let log = self.events.lock().unwrap();
        log.events.iter().filter(|e| filter.matches(e)).cloned().collect()
    }

    pub fn event_count(&self) -> usize {
        self.events.lock().unwrap().events.len()
    }
}
