//! C ABI for cornerscope networks and monitors.
//!
//! Objects are opaque handles created by `*_from_json` or `*_load` and
//! released with the matching `*_free`. Every fallible call returns a
//! [`CsStatus`]; on failure the message is available from
//! [`cs_last_error_message`] on the same thread. Strings returned by the
//! library are released with [`cs_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cornerscope::monitor::{BoxedMonitor, Verdict};
use cornerscope::neuralnet::Network;
use cornerscope::prioritize::{prioritize_monitor, CornerLine};
use cornerscope::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Json = 4,
    Shape = 5,
    Index = 6,
    Config = 7,
    Domain = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Feed-forward network handle.
pub struct CsNetwork(Network);

/// Boxed abstraction monitor handle.
pub struct CsMonitor(BoxedMonitor);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|b| *b != 0);
    let msg = CString::new(bytes).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> CsStatus {
    match err {
        Error::Io(_) | Error::Parse { .. } => CsStatus::Io,
        Error::Json(_) => CsStatus::Json,
        Error::Shape { .. } | Error::BitLength { .. } => CsStatus::Shape,
        Error::LayerIndex { .. } | Error::BoxIndex { .. } => CsStatus::Index,
        Error::Config(_) => CsStatus::Config,
        _ => CsStatus::Domain,
    }
}

struct Fail(CsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail(CsStatus::Json, e.to_string())
    }
}

/// Runs `f`, records any failure and converts panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside cornerscope");
            CsStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(CsStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies `values` into a caller buffer. `written` always receives the
/// required length, so a first call with capacity 0 sizes the buffer.
unsafe fn emit(values: &[f64], out: *mut f64, capacity: usize, written: *mut usize) -> Result<(), Fail> {
    if written.is_null() {
        return Err(null("written"));
    }
    *written = values.len();
    if capacity < values.len() {
        return Err(Fail(
            CsStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", values.len()),
        ));
    }
    if out.is_null() {
        return Err(null("out"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last call on this thread if it failed, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a network from its JSON form.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_network_from_json(json: *const c_char, out: *mut *mut CsNetwork) -> CsStatus {
    guard(|| {
        let net: Network = serde_json::from_str(text(json, "json")?)?;
        store(out, CsNetwork(net))
    })
}

/// Reads a network JSON file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_network_load(path: *const c_char, out: *mut *mut CsNetwork) -> CsStatus {
    guard(|| {
        let net = cornerscope::cli::read_network(Path::new(text(path, "path")?))?;
        store(out, CsNetwork(net))
    })
}

/// # Safety
/// `net` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cs_network_free(net: *mut CsNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input width, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_network_input_dim(net: *const CsNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.input_dim())
}

/// Output width, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_network_output_dim(net: *const CsNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.output_dim())
}

/// Number of layers, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_network_layer_count(net: *const CsNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.layers().len())
}

/// Network output for one input, after the final activation.
///
/// # Safety
/// `x` must hold `len` values and `out` `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn cs_network_forward(
    net: *const CsNetwork,
    x: *const f64,
    len: usize,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> CsStatus {
    guard(|| {
        let y = borrow(net, "net")?.0.forward(slice(x, len, "x")?)?;
        emit(&y, out, capacity, written)
    })
}

/// Activation vector after layer `layer` (1-based).
///
/// # Safety
/// `x` must hold `len` values and `out` `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn cs_network_feature_at(
    net: *const CsNetwork,
    layer: usize,
    x: *const f64,
    len: usize,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> CsStatus {
    guard(|| {
        let f = borrow(net, "net")?.0.feature_at(layer, slice(x, len, "x")?)?;
        emit(&f, out, capacity, written)
    })
}

fn checked(mon: BoxedMonitor) -> Result<CsMonitor, Fail> {
    mon.check()?;
    Ok(CsMonitor(mon))
}

/// Parses a monitor from its JSON form and validates its shape.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_monitor_from_json(json: *const c_char, out: *mut *mut CsMonitor) -> CsStatus {
    guard(|| {
        let mon: BoxedMonitor = serde_json::from_str(text(json, "json")?)?;
        store(out, checked(mon)?)
    })
}

/// Reads a monitor JSON file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_monitor_load(path: *const c_char, out: *mut *mut CsMonitor) -> CsStatus {
    guard(|| {
        let mon = cornerscope::cli::read_monitor(Path::new(text(path, "path")?))?;
        store(out, CsMonitor(mon))
    })
}

/// # Safety
/// `mon` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cs_monitor_free(mon: *mut CsMonitor) {
    if !mon.is_null() {
        drop(Box::from_raw(mon));
    }
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `mon` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_monitor_dim(mon: *const CsMonitor) -> usize {
    mon.as_ref().map_or(0, |m| m.0.dim())
}

/// Number of boxes, or 0 for a null handle.
///
/// # Safety
/// `mon` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_monitor_box_count(mon: *const CsMonitor) -> usize {
    mon.as_ref().map_or(0, |m| m.0.k())
}

/// Monitored layer (1-based), or 0 for a null handle.
///
/// # Safety
/// `mon` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_monitor_layer(mon: *const CsMonitor) -> usize {
    mon.as_ref().map_or(0, |m| m.0.layer)
}

/// Writes the index of the first box containing `feature` to `box_index`,
/// or -1 when the monitor rejects it.
///
/// # Safety
/// `feature` must hold `len` values; `box_index` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_monitor_contains(
    mon: *const CsMonitor,
    feature: *const f64,
    len: usize,
    box_index: *mut i64,
) -> CsStatus {
    guard(|| {
        let verdict = borrow(mon, "mon")?.0.contains(slice(feature, len, "feature")?)?;
        if box_index.is_null() {
            return Err(null("box_index"));
        }
        *box_index = match verdict {
            Verdict::Accept { box_index } => box_index as i64,
            Verdict::Reject => -1,
        };
        Ok(())
    })
}

/// Prioritizes unsupported corners for `count` row-major feature vectors of
/// the monitor's dimension. The result is a JSON array of corner reports
/// written to `json_out`, to be released with [`cs_string_free`]. A `cap` of
/// 0 means no limit.
///
/// # Safety
/// `features` must hold `count * cs_monitor_dim(mon)` values; `json_out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_monitor_prioritize(
    mon: *const CsMonitor,
    features: *const f64,
    count: usize,
    delta_h: usize,
    cap: usize,
    json_out: *mut *mut c_char,
) -> CsStatus {
    guard(|| {
        let mon = &borrow(mon, "mon")?.0;
        if json_out.is_null() {
            return Err(null("json_out"));
        }
        let dim = mon.dim();
        let total = count
            .checked_mul(dim)
            .ok_or_else(|| Fail(CsStatus::Shape, format!("{count} vectors of dimension {dim} overflow")))?;
        let flat = slice(features, total, "features")?;
        let rows: Vec<Vec<f64>> = if dim == 0 {
            Vec::new()
        } else {
            flat.chunks(dim).map(<[f64]>::to_vec).collect()
        };
        let cap = if cap == 0 { usize::MAX } else { cap };
        let results = prioritize_monitor(mon, &rows, delta_h, cap)?;
        let lines: Vec<CornerLine> = results
            .iter()
            .flat_map(|r| r.extracted.iter().map(CornerLine::from))
            .collect();
        let json = serde_json::to_string(&lines)?;
        *json_out = CString::new(json).expect("JSON has no interior nul").into_raw();
        Ok(())
    })
}
