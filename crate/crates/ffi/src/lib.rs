//! C ABI over the timem engine.
//!
//! Every function returns a [`TimemStatus`]. On failure the message is kept
//! per thread and can be read with [`timem_last_error_message`]. Strings
//! handed out by this library must be released with [`timem_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use timem_core::config::Config;
use timem_core::consolidation::DialogTurn;
use timem_core::engine::{Engine, EngineError};
use timem_core::recall::{Complexity, RecallOptions};
use timem_core::store::{OpenMode, StoreError, TranscriptFile};
use timem_core::time::parse_ts;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimemStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Data = 4,
    Backend = 5,
    UnknownUser = 6,
    Io = 7,
    Panic = 8,
}

/// Skip the relevance gate for this recall.
pub const TIMEM_RECALL_NO_GATE: u32 = 1;

/// Let the planner choose the complexity.
pub const TIMEM_COMPLEXITY_AUTO: i32 = -1;

/// Opaque engine handle.
pub struct TimemEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: TimemStatus,
    message: String,
}

impl Failure {
    fn new(status: TimemStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::UnknownUser(_) => TimemStatus::UnknownUser,
            EngineError::Store(StoreError::Io { .. } | StoreError::Locked(_)) => TimemStatus::Io,
            _ if e.exit_code() == 3 => TimemStatus::Backend,
            _ => TimemStatus::Data,
        };
        Failure::new(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn run(f: impl FnOnce() -> Result<(), Failure>) -> TimemStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TimemStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(_) => {
            set_last_error("panic inside timem");
            TimemStatus::Panic
        }
    }
}

unsafe fn required<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(TimemStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(TimemStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn optional<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        required(p, name).map(Some)
    }
}

unsafe fn engine<'a>(p: *const TimemEngine) -> Result<&'a Engine, Failure> {
    p.as_ref()
        .map(|e| &e.inner)
        .ok_or_else(|| Failure::new(TimemStatus::NullArgument, "engine is null"))
}

fn timestamp(text: &str) -> Result<timem_core::tmt::Timestamp, Failure> {
    parse_ts(text).map_err(|e| Failure::new(TimemStatus::InvalidArgument, format!("bad timestamp {text:?}: {e}")))
}

unsafe fn hand_out(value: &impl serde::Serialize, out: *mut *mut c_char) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(TimemStatus::NullArgument, "out is null"));
    }
    let json = serde_json::to_string(value).map_err(|e| Failure::new(TimemStatus::Data, e.to_string()))?;
    let c = CString::new(json).map_err(|e| Failure::new(TimemStatus::Data, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

/// Opens an engine. `data_dir` may be null for an in-memory engine.
/// `config_toml` may be null for the defaults.
///
/// # Safety
/// String arguments must be null or NUL-terminated. `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn timem_engine_open(
    data_dir: *const c_char,
    config_toml: *const c_char,
    out: *mut *mut TimemEngine,
) -> TimemStatus {
    run(|| {
        if out.is_null() {
            return Err(Failure::new(TimemStatus::NullArgument, "out is null"));
        }
        *out = ptr::null_mut();
        let config = match optional(config_toml, "config_toml")? {
            Some(text) => {
                Config::from_toml(text).map_err(|e| Failure::new(TimemStatus::InvalidArgument, e.to_string()))?
            }
            None => Config::default(),
        };
        let mut inner = Engine::from_config(config)?;
        if let Some(dir) = optional(data_dir, "data_dir")? {
            inner = inner.with_store(dir, OpenMode::Writable);
        }
        *out = Box::into_raw(Box::new(TimemEngine { inner }));
        Ok(())
    })
}

/// # Safety
/// `engine` must be null or a handle from [`timem_engine_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn timem_engine_free(engine: *mut TimemEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Ingests one turn. `ts` is RFC 3339.
///
/// # Safety
/// All string arguments must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn timem_ingest_turn(
    engine_ptr: *const TimemEngine,
    user_id: *const c_char,
    session_id: *const c_char,
    turn_id: *const c_char,
    ts: *const c_char,
    user_text: *const c_char,
    assistant_text: *const c_char,
) -> TimemStatus {
    run(|| {
        let engine = engine(engine_ptr)?;
        let turn = DialogTurn {
            turn_id: required(turn_id, "turn_id")?.to_string(),
            session_id: required(session_id, "session_id")?.to_string(),
            timestamp: timestamp(required(ts, "ts")?)?,
            user_text: required(user_text, "user_text")?.to_string(),
            assistant_text: required(assistant_text, "assistant_text")?.to_string(),
        };
        engine.ingest_turn(required(user_id, "user_id")?, &turn)?;
        Ok(())
    })
}

/// Ingests a whole transcript document and flushes the user.
///
/// # Safety
/// `json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn timem_ingest_transcript(engine_ptr: *const TimemEngine, json: *const c_char) -> TimemStatus {
    run(|| {
        let engine = engine(engine_ptr)?;
        let transcript = TranscriptFile::from_json(required(json, "json")?).map_err(EngineError::from)?;
        engine.ingest_transcript(&transcript)?;
        Ok(())
    })
}

/// Closes every open group for the user.
///
/// # Safety
/// `user_id` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn timem_flush(engine_ptr: *const TimemEngine, user_id: *const c_char) -> TimemStatus {
    run(|| {
        engine(engine_ptr)?.flush(required(user_id, "user_id")?, None)?;
        Ok(())
    })
}

/// Recalls memories for `question` and writes the result as JSON to `out`.
/// `ts` may be null. `complexity` is 0, 1, 2 or [`TIMEM_COMPLEXITY_AUTO`].
///
/// # Safety
/// String arguments must be NUL-terminated (`ts` may be null). `out` must be
/// writable; the string it receives is freed with [`timem_string_free`].
#[no_mangle]
pub unsafe extern "C" fn timem_recall_json(
    engine_ptr: *const TimemEngine,
    user_id: *const c_char,
    question: *const c_char,
    ts: *const c_char,
    flags: u32,
    complexity: i32,
    out: *mut *mut c_char,
) -> TimemStatus {
    run(|| {
        let engine = engine(engine_ptr)?;
        let t_q = optional(ts, "ts")?.map(timestamp).transpose()?;
        let complexity_override = match complexity {
            TIMEM_COMPLEXITY_AUTO => None,
            c => Some(
                u64::try_from(c)
                    .ok()
                    .and_then(Complexity::from_code)
                    .ok_or_else(|| Failure::new(TimemStatus::InvalidArgument, format!("unknown complexity {c}")))?,
            ),
        };
        let options = RecallOptions {
            gating: (flags & TIMEM_RECALL_NO_GATE != 0).then_some(false),
            complexity_override,
        };
        let result = engine.recall(
            required(user_id, "user_id")?,
            required(question, "question")?,
            t_q,
            options,
        )?;
        hand_out(&result, out)
    })
}

/// Writes the structural report for the user's tree as JSON to `out`.
///
/// # Safety
/// `user_id` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn timem_validate_json(
    engine_ptr: *const TimemEngine,
    user_id: *const c_char,
    out: *mut *mut c_char,
) -> TimemStatus {
    run(|| {
        let report = engine(engine_ptr)?.validate(required(user_id, "user_id")?)?;
        hand_out(&report, out)
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn timem_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn timem_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn timem_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
