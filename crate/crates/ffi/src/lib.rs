//! C interface to the evaluation harness.
//!
//! Every function returns an [`StsStatus`]. On failure a description is
//! kept per thread and can be read with [`sts_last_error`]. Strings handed
//! out by the library are owned by the caller and released with
//! [`sts_string_free`]; handles are released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sts_core::continuation::ContinuationIndex;
use sts_core::judging::{AnnotationInput, AnnotationStore, IngestError, Ingested};
use sts_core::stats::{balanced_accuracy, spearman, Confusion, StatsError};
use sts_core::suite::version_tag;
use sts_core::trajectory::{load_episode, replay_visit, EpisodeFileError, Episode};
use sts_core::workspace::{agent_report, ingest_input, pending_queue, timestamp, Workspace, WorkspaceError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    NotFound = 5,
    Conflict = 6,
    OutOfRange = 7,
    Corrupt = 8,
    Panic = 9,
}

/// An opened workspace with its annotation store and continuation index.
pub struct StsWorkspace {
    ws: Workspace,
    store: AnnotationStore,
    index: ContinuationIndex,
}

/// A decoded episode file.
pub struct StsEpisode {
    episode: Episode,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(StsStatus, String);

impl Failure {
    fn new(status: StsStatus, message: impl ToString) -> Self {
        Failure(status, message.to_string())
    }
}

impl From<WorkspaceError> for Failure {
    fn from(e: WorkspaceError) -> Self {
        let status = match &e {
            WorkspaceError::Io { .. } | WorkspaceError::NotInitialised(_) => StsStatus::Io,
            WorkspaceError::Unknown { .. } => StsStatus::NotFound,
            WorkspaceError::Json { .. } | WorkspaceError::ScenarioClash(_) | WorkspaceError::Episode(_) => {
                StsStatus::Corrupt
            }
            WorkspaceError::Ingest(i) => return Failure::from(i.clone()),
            _ => StsStatus::InvalidArgument,
        };
        Failure::new(status, e)
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        let status = match &e {
            IngestError::UnknownContinuation { .. } => StsStatus::NotFound,
            IngestError::Conflict { .. } => StsStatus::Conflict,
            IngestError::OutOfRange { .. } => StsStatus::OutOfRange,
            IngestError::EmptyAnnotator => StsStatus::InvalidArgument,
            IngestError::Io { .. } => StsStatus::Io,
        };
        Failure::new(status, e)
    }
}

impl From<EpisodeFileError> for Failure {
    fn from(e: EpisodeFileError) -> Self {
        let status = match &e {
            EpisodeFileError::Missing(_) => StsStatus::NotFound,
            EpisodeFileError::Io { .. } => StsStatus::Io,
            _ => StsStatus::Corrupt,
        };
        Failure::new(status, e)
    }
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        Failure::new(StsStatus::InvalidArgument, e)
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, converting failures and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            StsStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            StsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(StsStatus::NullArgument, format!("{name} is null")));
    }
    // SAFETY: the caller promises a NUL-terminated string that outlives the call.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|e| Failure::new(StsStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        unsafe { str_arg(p, name) }.map(Some)
    }
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(StsStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|e| Failure::new(StsStatus::Corrupt, e))?;
    // SAFETY: `out` was checked non-null by the caller of this helper.
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string(value).map_err(|e| Failure::new(StsStatus::Corrupt, e))
}

/// Message for the last failed call on this thread, or null after a
/// successful call. Valid until the next call into the library on the same
/// thread.
#[no_mangle]
pub extern "C" fn sts_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn sts_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: guaranteed by the caller.
        drop(unsafe { CString::from_raw(s) });
    }
}

fn open_handle(ws: Workspace) -> Result<Box<StsWorkspace>, Failure> {
    Ok(Box::new(StsWorkspace {
        store: ws.open_store()?,
        index: ws.load_index()?,
        ws,
    }))
}

/// Creates (if needed) and opens the workspace at `path`.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sts_workspace_init(path: *const c_char, out: *mut *mut StsWorkspace) -> StsStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = unsafe { str_arg(path, "path") }?;
        let h = open_handle(Workspace::init(Path::new(path))?)?;
        unsafe { *out = Box::into_raw(h) };
        Ok(())
    })
}

/// Opens an existing workspace.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sts_workspace_open(path: *const c_char, out: *mut *mut StsWorkspace) -> StsStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = unsafe { str_arg(path, "path") }?;
        let h = open_handle(Workspace::open(Path::new(path))?)?;
        unsafe { *out = Box::into_raw(h) };
        Ok(())
    })
}

/// # Safety
/// `ws` must be null or a handle from [`sts_workspace_open`] or
/// [`sts_workspace_init`] that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn sts_workspace_free(ws: *mut StsWorkspace) {
    if !ws.is_null() {
        drop(unsafe { Box::from_raw(ws) });
    }
}

unsafe fn handle<'a>(ws: *const StsWorkspace) -> Result<&'a StsWorkspace, Failure> {
    // SAFETY: non-null handles come from Box::into_raw in this crate.
    unsafe { ws.as_ref() }.ok_or_else(|| Failure::new(StsStatus::NullArgument, "workspace handle is null"))
}

/// Number of continuations in the workspace index.
///
/// # Safety
/// `ws` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sts_workspace_continuation_count(ws: *const StsWorkspace, out: *mut usize) -> StsStatus {
    guard(|| {
        out_arg(out, "out")?;
        let h = unsafe { handle(ws) }?;
        unsafe { *out = h.index.continuations.len() };
        Ok(())
    })
}

/// Writes the annotator's pending queue as a JSON array of ids.
///
/// # Safety
/// `ws` must be a live handle, `annotator` a valid C string and `out_json`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sts_workspace_pending(
    ws: *const StsWorkspace,
    annotator: *const c_char,
    out_json: *mut *mut c_char,
) -> StsStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        let h = unsafe { handle(ws) }?;
        let annotator = unsafe { str_arg(annotator, "annotator") }?;
        let refs = h.ws.load_references()?;
        let ids = pending_queue(&h.index, &h.store, &refs, annotator, h.ws.config.reference_rate);
        unsafe { write_string(out_json, to_json(&ids)?) }
    })
}

/// Ingests one annotation given as JSON
/// `{continuation_id, outcome, marker_tick, annotator_id}`. `out_created`
/// receives 1 for a new record and 0 if an identical one was stored.
///
/// # Safety
/// `ws` must be a live handle, `json` a valid C string and `out_created`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn sts_workspace_ingest(
    ws: *const StsWorkspace,
    json: *const c_char,
    out_created: *mut i32,
) -> StsStatus {
    guard(|| {
        let h = unsafe { handle(ws) }?;
        let json = unsafe { str_arg(json, "json") }?;
        let input: AnnotationInput =
            serde_json::from_str(json).map_err(|e| Failure::new(StsStatus::InvalidArgument, e))?;
        let created = matches!(ingest_input(&h.store, &h.index, input, &timestamp())?, Ingested::Created(_));
        if !out_created.is_null() {
            unsafe { *out_created = i32::from(created) };
        }
        Ok(())
    })
}

/// Score report for `agent` on suite `suite` as JSON. `version` may be
/// null to use the suite's own version.
///
/// # Safety
/// `ws` must be a live handle, `suite` and `agent` valid C strings,
/// `version` null or a valid C string, and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn sts_workspace_report(
    ws: *const StsWorkspace,
    suite: *const c_char,
    agent: *const c_char,
    version: *const c_char,
    out_json: *mut *mut c_char,
) -> StsStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        let h = unsafe { handle(ws) }?;
        let suite = h.ws.load_suite(unsafe { str_arg(suite, "suite") }?)?;
        let agent = unsafe { str_arg(agent, "agent") }?;
        let version = match unsafe { opt_str_arg(version, "version") }? {
            Some(v) => v.to_string(),
            None => version_tag(suite.version),
        };
        let report = agent_report(&h.ws, &h.store, &suite, agent, &version)?;
        unsafe { write_string(out_json, to_json(&report)?) }
    })
}

/// Loads and checksum-verifies an episode file.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sts_episode_load(path: *const c_char, out: *mut *mut StsEpisode) -> StsStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = unsafe { str_arg(path, "path") }?;
        let episode = load_episode(Path::new(path))?;
        unsafe { *out = Box::into_raw(Box::new(StsEpisode { episode })) };
        Ok(())
    })
}

/// # Safety
/// `ep` must be null or a live handle from [`sts_episode_load`].
#[no_mangle]
pub unsafe extern "C" fn sts_episode_free(ep: *mut StsEpisode) {
    if !ep.is_null() {
        drop(unsafe { Box::from_raw(ep) });
    }
}

unsafe fn episode<'a>(ep: *const StsEpisode) -> Result<&'a Episode, Failure> {
    unsafe { ep.as_ref() }
        .map(|e| &e.episode)
        .ok_or_else(|| Failure::new(StsStatus::NullArgument, "episode handle is null"))
}

/// Number of steps in the episode.
///
/// # Safety
/// `ep` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sts_episode_length(ep: *const StsEpisode, out: *mut u64) -> StsStatus {
    guard(|| {
        out_arg(out, "out")?;
        let e = unsafe { episode(ep) }?;
        unsafe { *out = e.len() };
        Ok(())
    })
}

/// The episode id as a new string.
///
/// # Safety
/// `ep` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sts_episode_id(ep: *const StsEpisode, out: *mut *mut c_char) -> StsStatus {
    guard(|| {
        out_arg(out, "out")?;
        let e = unsafe { episode(ep) }?;
        unsafe { write_string(out, e.episode_id.clone()) }
    })
}

/// Replays the episode from its initial config and checks the final state
/// hash. Returns `STS_STATUS_CORRUPT` on divergence.
///
/// # Safety
/// `ep` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sts_episode_verify(ep: *const StsEpisode) -> StsStatus {
    guard(|| {
        let e = unsafe { episode(ep) }?;
        replay_visit(e, |_| {}).map_err(|r| Failure::new(StsStatus::Corrupt, r))?;
        Ok(())
    })
}

/// Spearman correlation of two equally long arrays with its two-sided
/// p-value.
///
/// # Safety
/// `xs` and `ys` must point to `n` readable doubles; `out_r` and `out_p`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn sts_spearman(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    out_r: *mut f64,
    out_p: *mut f64,
) -> StsStatus {
    guard(|| {
        out_arg(out_r, "out_r")?;
        out_arg(out_p, "out_p")?;
        if xs.is_null() || ys.is_null() {
            return Err(Failure::new(StsStatus::NullArgument, "input array is null"));
        }
        // SAFETY: the caller promises n readable values behind each pointer.
        let (xs, ys) = unsafe { (std::slice::from_raw_parts(xs, n), std::slice::from_raw_parts(ys, n)) };
        let c = spearman(xs, ys)?;
        unsafe {
            *out_r = c.r;
            *out_p = c.p;
        }
        Ok(())
    })
}

/// Balanced accuracy of a confusion matrix with success as the positive
/// class. With one class absent the other class's rate is returned; an
/// all-zero matrix fails with `STS_STATUS_INVALID_ARGUMENT`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sts_balanced_accuracy(tp: u64, fn_: u64, fp: u64, tn: u64, out: *mut f64) -> StsStatus {
    guard(|| {
        out_arg(out, "out")?;
        let ba = balanced_accuracy(&Confusion::new(tp, fn_, fp, tn))
            .ok_or_else(|| Failure::new(StsStatus::InvalidArgument, "confusion matrix is empty"))?;
        unsafe { *out = ba };
        Ok(())
    })
}
