//! C ABI over the querywise engine.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `_free` function. Every fallible call returns a [`QwStatus`];
//! on failure the message is available from [`qw_last_error_message`] on the
//! same thread until the next call. Strings returned through out-parameters
//! are NUL-terminated UTF-8 and must be released with [`qw_string_free`].
//! Nothing here unwinds across the boundary: panics become
//! `QW_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use querywise::gateway::{LiveBackend, LiveConfig, LlmBackend, MockBackend, MockScript};
use querywise::service::pipeline::{BUNDLED_MOCK_SCRIPT, BUNDLED_TAXONOMY};
use querywise::service::{Engine, EngineOptions, UnderstandError, UnderstandRequest};
use querywise::stream_parser::{parse_complete, StreamParser};
use querywise::taxonomy::Taxonomy;
use querywise::training::{self, BatchMode};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QwStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Malformed request, taxonomy, script or argument value.
    InvalidInput = 3,
    /// The backend ran out of time and degradation is off.
    BudgetExhausted = 4,
    /// Malformed tool-call text.
    Parse = 5,
    /// The handle was already finished.
    InvalidState = 6,
    Internal = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QwBatchMode {
    Homogeneous = 0,
    Heterogeneous = 1,
}

/// Opaque engine handle with its own single-threaded runtime.
pub struct QwEngine {
    engine: Engine,
    runtime: tokio::runtime::Runtime,
}

/// Opaque incremental tool-call parser.
pub struct QwStreamParser {
    inner: Option<StreamParser>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(QwStatus, String);

type Outcome<T> = Result<T, Failure>;

fn fail<T>(status: QwStatus, msg: impl Into<String>) -> Outcome<T> {
    Err(Failure(status, msg.into()))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure and converts panics.
fn guard(f: impl FnOnce() -> Outcome<()>) -> QwStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QwStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            QwStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Outcome<Option<&'a str>> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure(QwStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Outcome<&'a str> {
    match opt_str(p, what)? {
        Some(s) => Ok(s),
        None => fail(QwStatus::NullArgument, format!("{what} is null")),
    }
}

unsafe fn out_string(out: *mut *mut c_char, s: String) -> Outcome<()> {
    let c = CString::new(s).map_err(|_| Failure(QwStatus::Internal, "output contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn check_out<T>(out: *mut T) -> Outcome<()> {
    if out.is_null() {
        return fail(QwStatus::NullArgument, "output pointer is null");
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Outcome<String> {
    serde_json::to_string(v).map_err(|e| Failure(QwStatus::Internal, e.to_string()))
}

fn taxonomy(json: Option<&str>) -> Outcome<Arc<Taxonomy>> {
    Taxonomy::from_json_str(json.unwrap_or(BUNDLED_TAXONOMY))
        .map(Arc::new)
        .map_err(|e| Failure(QwStatus::InvalidInput, format!("taxonomy: {e}")))
}

fn build(backend: Arc<dyn LlmBackend>, tax: Arc<Taxonomy>, timeout_ms: u64) -> Outcome<Box<QwEngine>> {
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure(QwStatus::Internal, e.to_string()))?;
    let mut opts = EngineOptions::default();
    if timeout_ms > 0 {
        opts.timeout_ms = timeout_ms;
    }
    Ok(Box::new(QwEngine { engine: Engine::new(backend, tax, opts), runtime }))
}

/// Creates an engine over the scripted mock backend. Null `taxonomy_json`
/// or `mock_script_json` selects the bundled samples; `timeout_ms` 0 keeps
/// the default budget.
///
/// # Safety
/// String arguments must be null or valid NUL-terminated strings; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qw_engine_new(
    taxonomy_json: *const c_char,
    mock_script_json: *const c_char,
    timeout_ms: u64,
    out: *mut *mut QwEngine,
) -> QwStatus {
    guard(|| {
        check_out(out)?;
        let tax = taxonomy(opt_str(taxonomy_json, "taxonomy_json")?)?;
        let script = MockScript::from_json_str(opt_str(mock_script_json, "mock_script_json")?.unwrap_or(BUNDLED_MOCK_SCRIPT))
            .map_err(|e| Failure(QwStatus::InvalidInput, format!("mock script: {e}")))?;
        *out = Box::into_raw(build(Arc::new(MockBackend::new(script)), tax, timeout_ms)?);
        Ok(())
    })
}

/// Creates an engine over an OpenAI-compatible streaming endpoint.
/// `api_key` may be null.
///
/// # Safety
/// As for [`qw_engine_new`]; `endpoint` and `model` must not be null.
#[no_mangle]
pub unsafe extern "C" fn qw_engine_new_live(
    taxonomy_json: *const c_char,
    endpoint: *const c_char,
    api_key: *const c_char,
    model: *const c_char,
    timeout_ms: u64,
    out: *mut *mut QwEngine,
) -> QwStatus {
    guard(|| {
        check_out(out)?;
        let tax = taxonomy(opt_str(taxonomy_json, "taxonomy_json")?)?;
        let config = LiveConfig {
            api_key: opt_str(api_key, "api_key")?.map(str::to_string),
            ..LiveConfig::new(req_str(endpoint, "endpoint")?, req_str(model, "model")?)
        };
        let backend = LiveBackend::new(config).map_err(|e| Failure(QwStatus::InvalidInput, e.to_string()))?;
        *out = Box::into_raw(build(Arc::new(backend), tax, timeout_ms)?);
        Ok(())
    })
}

/// # Safety
/// `engine` must be null or a handle from `qw_engine_new*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qw_engine_free(engine: *mut QwEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Runs one request (`{"query": ..., "profile": ...}` JSON) and writes the
/// result JSON to `out_json`.
///
/// # Safety
/// `engine` must be a live handle, not used concurrently from another
/// thread; `request_json` a valid string; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qw_engine_understand(
    engine: *mut QwEngine,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> QwStatus {
    guard(|| {
        check_out(out_json)?;
        let Some(h) = engine.as_ref() else { return fail(QwStatus::NullArgument, "engine is null") };
        let req: UnderstandRequest = serde_json::from_str(req_str(request_json, "request_json")?)
            .map_err(|e| Failure(QwStatus::InvalidInput, format!("request: {e}")))?;
        let result = h.runtime.block_on(h.engine.understand(&req)).map_err(|e| match e {
            UnderstandError::InvalidInput(m) => Failure(QwStatus::InvalidInput, m),
            e @ UnderstandError::BudgetExhausted { .. } => Failure(QwStatus::BudgetExhausted, e.to_string()),
        })?;
        out_string(out_json, to_json(&result)?)
    })
}

/// Nearest-rank percentile of the latencies recorded for `stage`
/// (`"total"`, `"backend"`, ...), in milliseconds.
///
/// # Safety
/// `engine` must be a live handle; `stage` a valid string; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn qw_engine_percentile(
    engine: *const QwEngine,
    stage: *const c_char,
    q: f64,
    out: *mut f64,
) -> QwStatus {
    guard(|| {
        check_out(out)?;
        let Some(h) = engine.as_ref() else { return fail(QwStatus::NullArgument, "engine is null") };
        let v = h
            .engine
            .latency()
            .percentile(req_str(stage, "stage")?, q)
            .map_err(|e| Failure(QwStatus::InvalidInput, e.to_string()))?;
        *out = v;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn qw_parser_new() -> *mut QwStreamParser {
    Box::into_raw(Box::new(QwStreamParser { inner: Some(StreamParser::new()) }))
}

unsafe fn parser_events(
    parser: *mut QwStreamParser,
    out_json: *mut *mut c_char,
    step: impl FnOnce(&mut Option<StreamParser>) -> Outcome<Vec<querywise::stream_parser::ParserEvent>>,
) -> QwStatus {
    guard(|| {
        check_out(out_json)?;
        let Some(p) = parser.as_mut() else { return fail(QwStatus::NullArgument, "parser is null") };
        let events = step(&mut p.inner)?;
        out_string(out_json, to_json(&events)?)
    })
}

/// Feeds `len` bytes and writes the events they completed as a JSON array.
/// Parse errors are reported as events, not as a failing status.
///
/// # Safety
/// `parser` must be a live handle; `bytes` must point to `len` readable
/// bytes (or be null with `len` 0); `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qw_parser_feed(
    parser: *mut QwStreamParser,
    bytes: *const u8,
    len: usize,
    out_json: *mut *mut c_char,
) -> QwStatus {
    parser_events(parser, out_json, |inner| {
        let data: &[u8] = match (bytes.is_null(), len) {
            (_, 0) => &[],
            (true, _) => return fail(QwStatus::NullArgument, "bytes is null"),
            (false, n) => std::slice::from_raw_parts(bytes, n),
        };
        match inner {
            Some(p) => Ok(p.feed(data)),
            None => fail(QwStatus::InvalidState, "parser already finished"),
        }
    })
}

/// Signals end of input. The handle stays valid for [`qw_parser_free`] but
/// accepts no more input.
///
/// # Safety
/// As for [`qw_parser_feed`].
#[no_mangle]
pub unsafe extern "C" fn qw_parser_finish(parser: *mut QwStreamParser, out_json: *mut *mut c_char) -> QwStatus {
    parser_events(parser, out_json, |inner| match inner.take() {
        Some(p) => Ok(p.finish()),
        None => fail(QwStatus::InvalidState, "parser already finished"),
    })
}

/// # Safety
/// `parser` must be null or a handle from [`qw_parser_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qw_parser_free(parser: *mut QwStreamParser) {
    if !parser.is_null() {
        drop(Box::from_raw(parser));
    }
}

/// Parses a complete response into a JSON array of tool calls.
///
/// # Safety
/// `text` must be a valid string and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qw_parse_complete(text: *const c_char, out_json: *mut *mut c_char) -> QwStatus {
    guard(|| {
        check_out(out_json)?;
        let calls = parse_complete(req_str(text, "text")?).map_err(|e| Failure(QwStatus::Parse, e.to_string()))?;
        out_string(out_json, to_json(&calls)?)
    })
}

/// Loss of one example from its target-token log-probabilities.
///
/// # Safety
/// `logprobs` must point to `len` readable doubles (or be null with `len`
/// 0); `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qw_sft_loss(logprobs: *const f64, len: usize, out: *mut f64) -> QwStatus {
    guard(|| {
        check_out(out)?;
        let lp: &[f64] = if len == 0 {
            &[]
        } else if logprobs.is_null() {
            return fail(QwStatus::NullArgument, "logprobs is null");
        } else {
            std::slice::from_raw_parts(logprobs, len)
        };
        *out = training::sft_loss(lp).map_err(|e| Failure(QwStatus::InvalidInput, e.to_string()))?;
        Ok(())
    })
}

/// # Safety
/// `samples` must point to `len` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qw_nearest_rank(samples: *const f64, len: usize, q: f64, out: *mut f64) -> QwStatus {
    guard(|| {
        check_out(out)?;
        let s: &[f64] = if len == 0 {
            &[]
        } else if samples.is_null() {
            return fail(QwStatus::NullArgument, "samples is null");
        } else {
            std::slice::from_raw_parts(samples, len)
        };
        *out = querywise::service::nearest_rank(s, q).map_err(|e| Failure(QwStatus::InvalidInput, e.to_string()))?;
        Ok(())
    })
}

/// Builds a batch manifest from JSONL `{task_id, prompt, target}` records.
///
/// # Safety
/// `jsonl` must be a valid string and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qw_schedule(
    jsonl: *const c_char,
    mode: QwBatchMode,
    batch_size: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> QwStatus {
    guard(|| {
        check_out(out_json)?;
        let text = req_str(jsonl, "jsonl")?;
        let sets = training::read_datasets(BufReader::new(text.as_bytes()))
            .map_err(|e| Failure(QwStatus::InvalidInput, e.to_string()))?;
        let mode = match mode {
            QwBatchMode::Homogeneous => BatchMode::Homogeneous,
            QwBatchMode::Heterogeneous => BatchMode::Heterogeneous,
        };
        let manifest = training::schedule(&sets, mode, batch_size, seed, None)
            .map_err(|e| Failure(QwStatus::InvalidInput, e.to_string()))?;
        out_string(out_json, manifest.to_json())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failure on this thread, or null. Valid until the
/// next call into the library from this thread.
#[no_mangle]
pub extern "C" fn qw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn qw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
