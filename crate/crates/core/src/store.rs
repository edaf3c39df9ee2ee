//! Transcript parsing and the per-user append-only log.
//!
//! Each user gets `<root>/<user_id>/log.jsonl`. One JSON object per line,
//! tagged by `record_type`:
//!
//! * `turn`: a dialog turn, written before it is consolidated
//! * `node`: a memory node as created (children reference earlier lines)
//! * `flush`: a flush request with its time
//! * `state`: a snapshot of the scheduling state after a completed call
//!
//! Replay starts from the last snapshot and re-applies the turns and flushes
//! written after it, so a crash between writes loses no scheduled work.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consolidation::{DialogTurn, Schedule};
use crate::tmt::{MemoryNode, MemoryTree, Timestamp};

pub const LOG_FILE: &str = "log.jsonl";
pub const LOCK_FILE: &str = "log.lock";
pub const DATA_DIR_ENV: &str = "TIMEM_DATA_DIR";

/// `Vec<f32>` as base64 of little-endian bytes.
pub mod embedding_b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn encode(values: &[f32]) -> String {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        STANDARD.encode(bytes)
    }

    pub fn decode(text: &str) -> Result<Vec<f32>, String> {
        let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
        if bytes.len() % 4 != 0 {
            return Err(format!("{} bytes is not a whole number of f32s", bytes.len()));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn serialize<S: Serializer>(values: &[f32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode(values))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f32>, D::Error> {
        let text = String::deserialize(d)?;
        decode(&text).map_err(de::Error::custom)
    }
}

/// Timestamps as RFC 3339 UTC with a `Z` suffix, whole seconds.
pub mod ts_format {
    use serde::{de, Deserialize, Deserializer, Serializer};

    use crate::time::{format_ts, parse_ts};
    use crate::tmt::Timestamp;

    pub fn serialize<S: Serializer>(ts: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_ts(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let text = String::deserialize(d)?;
        parse_ts(&text).map_err(|e| de::Error::custom(format!("bad timestamp {text:?}: {e}")))
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(ts: &Option<Timestamp>, s: S) -> Result<S::Ok, S::Error> {
            match ts {
                Some(ts) => s.serialize_some(&format_ts(ts)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Timestamp>, D::Error> {
            match Option::<String>::deserialize(d)? {
                Some(text) => parse_ts(&text)
                    .map(Some)
                    .map_err(|e| de::Error::custom(format!("bad timestamp {text:?}: {e}"))),
                None => Ok(None),
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("schema error at line {line}, column {column}: {message}")]
    SchemaError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("session {session_id}: timestamp {got} precedes {previous}")]
    NonMonotonicTimestamp {
        session_id: String,
        previous: Timestamp,
        got: Timestamp,
    },
    #[error("corrupt record at byte offset {offset}: {detail}")]
    CorruptRecord { offset: u64, detail: String },
    #[error("log for user {0} is locked by another writer")]
    Locked(String),
    #[error("invalid user id {0:?}")]
    InvalidUserId(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Transcripts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptMessage {
    pub speaker: Speaker,
    pub text: String,
    #[serde(with = "ts_format")]
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptSession {
    pub session_id: String,
    #[serde(with = "ts_format")]
    pub start_timestamp: Timestamp,
    pub turns: Vec<TranscriptMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptFile {
    pub user_id: String,
    pub sessions: Vec<TranscriptSession>,
}

/// Turn ids are `<session_id>:<n>` with `n` counting from 1 within the session.
pub fn turn_id(session_id: &str, n: usize) -> String {
    format!("{session_id}:{n}")
}

impl TranscriptFile {
    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        serde_json::from_str(text).map_err(|e| StoreError::SchemaError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// Pairs each user message with the assistant message that follows it.
    /// A user message with no reply, or a reply with no user message, becomes
    /// a turn with the other side empty. The turn takes the timestamp of its
    /// first message.
    pub fn to_turns(&self) -> Result<Vec<DialogTurn>, StoreError> {
        let mut previous: Option<Timestamp> = None;
        let mut check = |session_id: &str, ts: Timestamp| {
            if let Some(prev) = previous {
                if ts < prev {
                    return Err(StoreError::NonMonotonicTimestamp {
                        session_id: session_id.to_string(),
                        previous: prev,
                        got: ts,
                    });
                }
            }
            previous = Some(ts);
            Ok(())
        };

        let mut turns = Vec::new();
        for session in &self.sessions {
            check(&session.session_id, session.start_timestamp)?;
            let mut n = 0;
            let mut pending: Option<&TranscriptMessage> = None;
            let mut emit = |user: Option<&TranscriptMessage>, assistant: Option<&TranscriptMessage>| {
                n += 1;
                let timestamp = user.or(assistant).expect("one side present").timestamp;
                turns.push(DialogTurn {
                    turn_id: turn_id(&session.session_id, n),
                    session_id: session.session_id.clone(),
                    timestamp,
                    user_text: user.map(|m| m.text.clone()).unwrap_or_default(),
                    assistant_text: assistant.map(|m| m.text.clone()).unwrap_or_default(),
                });
            };
            for message in &session.turns {
                check(&session.session_id, message.timestamp)?;
                match message.speaker {
                    Speaker::User => {
                        if let Some(user) = pending.take() {
                            emit(Some(user), None);
                        }
                        pending = Some(message);
                    }
                    Speaker::Assistant => emit(pending.take(), Some(message)),
                }
            }
            if let Some(user) = pending {
                emit(Some(user), None);
            }
        }
        Ok(turns)
    }
}

pub fn load_transcript(path: &Path) -> Result<TranscriptFile, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    TranscriptFile::from_json(&text)
}

/// Reads a transcript file and returns its dialog turns in order.
pub fn parse_transcript(path: &Path) -> Result<Vec<DialogTurn>, StoreError> {
    load_transcript(path)?.to_turns()
}

// ---------------------------------------------------------------------------
// Log

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record_type", rename_all = "snake_case")]
pub enum Record {
    Turn(DialogTurn),
    Node(MemoryNode),
    Flush {
        #[serde(with = "ts_format")]
        now: Timestamp,
    },
    State(Schedule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpenMode {
    ReadOnly,
    Writable,
}

/// Result of reading a log back.
#[derive(Debug)]
pub struct Replay {
    pub tree: MemoryTree,
    pub schedule: Schedule,
    pub turns: Vec<DialogTurn>,
    /// Set when the log ended in a record that could not be applied. Nothing
    /// after it was loaded.
    pub corrupt: Option<StoreError>,
    pub records: usize,
}

pub fn validate_user_id(user_id: &str) -> Result<(), StoreError> {
    let ok = !user_id.is_empty()
        && user_id != "."
        && user_id != ".."
        && user_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '@'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidUserId(user_id.to_string()))
    }
}

/// Replays log bytes into a tree of the given embedding dimension.
pub fn replay(user_id: &str, dimension: usize, bytes: &[u8]) -> (Replay, u64) {
    let mut tree = MemoryTree::new(user_id, dimension);
    let mut snapshot = Schedule::default();
    let mut since_snapshot: Vec<Record> = Vec::new();
    let mut turns = Vec::new();
    let mut corrupt = None;
    let mut records = 0;
    let mut good_end = 0u64;

    let mut offset = 0usize;
    while offset < bytes.len() {
        let (line, next) = match bytes[offset..].iter().position(|b| *b == b'\n') {
            Some(i) => (&bytes[offset..offset + i], offset + i + 1),
            None => (&bytes[offset..], bytes.len()),
        };
        if line.iter().all(u8::is_ascii_whitespace) {
            offset = next;
            good_end = next as u64;
            continue;
        }
        let parsed = serde_json::from_slice::<Record>(line).map_err(|e| e.to_string());
        let applied = parsed.and_then(|record| match record {
            Record::Node(node) => tree.insert_node(node).map(|_| ()).map_err(|e| e.to_string()),
            Record::State(schedule) => {
                snapshot = schedule;
                since_snapshot.clear();
                Ok(())
            }
            Record::Turn(turn) => {
                turns.push(turn.clone());
                since_snapshot.push(Record::Turn(turn));
                Ok(())
            }
            flush @ Record::Flush { .. } => {
                since_snapshot.push(flush);
                Ok(())
            }
        });
        if let Err(detail) = applied {
            corrupt = Some(StoreError::CorruptRecord {
                offset: offset as u64,
                detail,
            });
            break;
        }
        records += 1;
        offset = next;
        good_end = next as u64;
    }

    for record in &since_snapshot {
        match record {
            Record::Turn(turn) => snapshot.schedule_turn(turn),
            Record::Flush { now } => snapshot.schedule_flush(*now),
            _ => {}
        }
    }
    snapshot.settle(&tree);
    (
        Replay {
            tree,
            schedule: snapshot,
            turns,
            corrupt,
            records,
        },
        good_end,
    )
}

/// One user's log. A writable handle holds an exclusive advisory lock on
/// `log.lock` for its lifetime.
#[derive(Debug)]
pub struct UserLog {
    path: PathBuf,
    mode: OpenMode,
    file: Option<File>,
    _lock: Option<File>,
    len: u64,
}

impl UserLog {
    pub fn open(root: &Path, user_id: &str, dimension: usize, mode: OpenMode) -> Result<(UserLog, Replay), StoreError> {
        validate_user_id(user_id)?;
        let dir = root.join(user_id);
        let path = dir.join(LOG_FILE);
        let mut bytes = Vec::new();
        let lock = match mode {
            OpenMode::ReadOnly => None,
            OpenMode::Writable => {
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                let lock_path = dir.join(LOCK_FILE);
                let lock = OpenOptions::new()
                    .create(true)
                    .truncate(false)
                    .write(true)
                    .open(&lock_path)
                    .map_err(io_err(&lock_path))?;
                match lock.try_lock() {
                    Ok(()) => {}
                    Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(user_id.into())),
                    Err(fs::TryLockError::Error(e)) => return Err(io_err(&lock_path)(e)),
                }
                Some(lock)
            }
        };
        match File::open(&path) {
            Ok(mut f) => {
                f.read_to_end(&mut bytes).map_err(io_err(&path))?;
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(&path)(e)),
        }
        let (replay, good_end) = replay(user_id, dimension, &bytes);
        if let Some(err) = &replay.corrupt {
            log::warn!("{}: {err}; later records ignored", path.display());
        }

        let mut len = bytes.len() as u64;
        let file = match mode {
            OpenMode::ReadOnly => None,
            OpenMode::Writable => {
                let mut f = OpenOptions::new()
                    .create(true)
                    .truncate(false)
                    .read(true)
                    .write(true)
                    .open(&path)
                    .map_err(io_err(&path))?;
                if good_end < len {
                    f.set_len(good_end).map_err(io_err(&path))?;
                    len = good_end;
                }
                if len > 0 && bytes[len as usize - 1] != b'\n' {
                    f.seek(SeekFrom::End(0)).map_err(io_err(&path))?;
                    f.write_all(b"\n").map_err(io_err(&path))?;
                    len += 1;
                }
                f.seek(SeekFrom::End(0)).map_err(io_err(&path))?;
                Some(f)
            }
        };
        Ok((
            UserLog {
                path,
                mode,
                file,
                _lock: lock,
                len,
            },
            replay,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn mode(&self) -> OpenMode {
        self.mode
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends one record and syncs. Returns the byte offset it starts at.
    pub fn persist_append(&mut self, record: &Record) -> Result<u64, StoreError> {
        Ok(self.append_all(std::slice::from_ref(record))?[0])
    }

    /// Appends records with a single sync at the end.
    pub fn append_all(&mut self, records: &[Record]) -> Result<Vec<u64>, StoreError> {
        let path = self.path.clone();
        let Some(file) = self.file.as_mut() else {
            return Err(StoreError::Io {
                path: path.display().to_string(),
                source: io::Error::new(io::ErrorKind::PermissionDenied, "log opened read-only"),
            });
        };
        let mut buf = Vec::new();
        let mut offsets = Vec::with_capacity(records.len());
        for record in records {
            offsets.push(self.len + buf.len() as u64);
            serde_json::to_writer(&mut buf, record).expect("records serialize");
            buf.push(b'\n');
        }
        file.write_all(&buf).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))?;
        self.len += buf.len() as u64;
        Ok(offsets)
    }
}

/// User ids with a log under `root`, sorted.
pub fn list_users(root: &Path) -> Result<Vec<String>, StoreError> {
    let entries = match fs::read_dir(root) {
        Ok(entries) => entries,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(root)(e)),
    };
    let mut users = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(root))?;
        if entry.path().join(LOG_FILE).is_file() {
            if let Some(name) = entry.file_name().to_str() {
                users.push(name.to_string());
            }
        }
    }
    users.sort();
    Ok(users)
}
