//! C ABI over the `dualpath` proposal integration engine.
//!
//! Proposal sets cross the boundary as opaque [`DpProposalSet`] handles.
//! Every fallible function returns a [`DpStatus`]; on failure the message is
//! available from [`dp_last_error_message`] on the same thread. Handles
//! returned through out-pointers are owned by the caller and released with
//! [`dp_proposal_set_free`]. Strings returned as `char *` are released with
//! [`dp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dualpath::integration::IntegrationConfig;
use dualpath::io::formats::{load_proposals, proposals_to_json, save_proposals};
use dualpath::mask::InstanceMask;
use dualpath::pipeline::{integrate, Mode};
use dualpath::scene::{Proposal, ProposalSet, Source};
use dualpath::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    DimensionMismatch = 4,
    Io = 5,
    Parse = 6,
    Config = 7,
    Panic = 99,
}

/// Integration strategy.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpMode {
    Conditional = 0,
    Simple = 1,
    Only3d = 2,
    Only2d = 3,
}

/// Which pathway produced a proposal.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpSource {
    Path3d = 0,
    Path2d = 1,
    Merged = 2,
}

/// Thresholds for conditional integration.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpIntegrationConfig {
    pub theta_3d: f64,
    pub theta_2d: f64,
    pub eps_unique: f64,
}

/// Symmetric and the two directional overlaps of a mask pair.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DpIoU {
    pub iou: f64,
    pub iou_3d: f64,
    pub iou_2d: f64,
}

/// Opaque proposal set.
pub struct DpProposalSet {
    inner: ProposalSet,
    // proposals appended through dp_proposal_set_push before validation
    pending: Vec<Proposal>,
}

impl DpProposalSet {
    fn commit(&mut self) -> Result<(), Error> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let mut all = self.inner.proposals().to_vec();
        all.extend(self.pending.iter().cloned());
        self.inner = ProposalSet::new(self.inner.point_count(), all)?;
        self.pending.clear();
        Ok(())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(DpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => DpStatus::Io,
            Error::Json { .. } | Error::MalformedHeader(_) | Error::Png { .. } => DpStatus::Parse,
            Error::DimensionMismatch { .. } => DpStatus::DimensionMismatch,
            Error::IndexOutOfRange { .. } => DpStatus::OutOfRange,
            Error::Config(_) => DpStatus::Config,
            _ => DpStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: DpStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DpStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DpStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(DpStatus::NullPointer, format!("{name} is null")))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(DpStatus::NullPointer, format!("{name} is null")))
}

unsafe fn borrow_set<'a>(p: *const DpProposalSet, name: &str) -> Result<&'a ProposalSet, Failure> {
    let set = borrow(p, name)?;
    if !set.pending.is_empty() {
        return Err(fail(
            DpStatus::InvalidArgument,
            format!("{name} has unvalidated proposals; call dp_proposal_set_finish"),
        ));
    }
    Ok(&set.inner)
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(fail(DpStatus::NullPointer, format!("{name} is null")));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DpStatus::InvalidArgument, format!("{name} is not valid UTF-8")))?;
    Ok(Path::new(s))
}

fn into_handle(set: ProposalSet) -> *mut DpProposalSet {
    Box::into_raw(Box::new(DpProposalSet {
        inner: set,
        pending: Vec::new(),
    }))
}

fn to_cstring(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul removed").into_raw()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or NULL.
///
/// The pointer stays valid until the next call into the library on the
/// same thread.
#[no_mangle]
pub extern "C" fn dp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Short fixed name of a status code.
#[no_mangle]
pub extern "C" fn dp_status_name(status: DpStatus) -> *const c_char {
    let s: &'static str = match status {
        DpStatus::Ok => "ok\0",
        DpStatus::NullPointer => "null pointer\0",
        DpStatus::InvalidArgument => "invalid argument\0",
        DpStatus::OutOfRange => "out of range\0",
        DpStatus::DimensionMismatch => "dimension mismatch\0",
        DpStatus::Io => "i/o error\0",
        DpStatus::Parse => "parse error\0",
        DpStatus::Config => "invalid config\0",
        DpStatus::Panic => "internal panic\0",
    };
    s.as_ptr().cast()
}

/// Writes the default thresholds into `out`.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn dp_integration_config_default(out: *mut DpIntegrationConfig) -> DpStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        let d = IntegrationConfig::default();
        *out = DpIntegrationConfig {
            theta_3d: d.theta_3d,
            theta_2d: d.theta_2d,
            eps_unique: d.eps_unique,
        };
        Ok(())
    })
}

/// Creates an empty proposal set over `point_count` points.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn dp_proposal_set_new(point_count: usize, out: *mut *mut DpProposalSet) -> DpStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        *out = ptr::null_mut();
        if point_count == 0 || point_count > u32::MAX as usize {
            return Err(fail(DpStatus::InvalidArgument, format!("point_count {point_count} not in 1..=2^32-1")));
        }
        *out = into_handle(ProposalSet::empty(point_count));
        Ok(())
    })
}

/// Appends a proposal. Indices may be unsorted but must be distinct and
/// below the set's point count. `feature` may be NULL when `feature_len`
/// is 0. The set must be sealed with [`dp_proposal_set_finish`] before use.
///
/// # Safety
/// `id` must be a NUL-terminated string, `indices` must point to
/// `index_count` values and `feature` to `feature_len` values.
#[no_mangle]
pub unsafe extern "C" fn dp_proposal_set_push(
    set: *mut DpProposalSet,
    id: *const c_char,
    indices: *const u32,
    index_count: usize,
    source: DpSource,
    feature: *const f32,
    feature_len: usize,
) -> DpStatus {
    guard(|| {
        let set = borrow_mut(set, "set")?;
        if id.is_null() {
            return Err(fail(DpStatus::NullPointer, "id is null"));
        }
        let id = CStr::from_ptr(id)
            .to_str()
            .map_err(|_| fail(DpStatus::InvalidArgument, "id is not valid UTF-8"))?;
        if indices.is_null() || index_count == 0 {
            return Err(fail(DpStatus::InvalidArgument, "a proposal needs at least one point"));
        }
        let idx = std::slice::from_raw_parts(indices, index_count);
        let n = set.inner.point_count();
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= n) {
            return Err(fail(DpStatus::OutOfRange, format!("index {bad} >= point count {n}")));
        }
        let mask = InstanceMask::from_unsorted(idx.iter().copied())?;
        if mask.len() != index_count {
            return Err(fail(DpStatus::InvalidArgument, "duplicate point indices"));
        }
        let source = match source {
            DpSource::Path3d => Source::Path3D,
            DpSource::Path2d => Source::Path2D,
            DpSource::Merged => Source::Merged,
        };
        let mut proposal = Proposal::new(id, mask, source);
        if feature_len > 0 {
            if feature.is_null() {
                return Err(fail(DpStatus::NullPointer, "feature is null"));
            }
            let values = std::slice::from_raw_parts(feature, feature_len).to_vec();
            proposal = proposal.with_feature(dualpath::scene::FeatureVector::new(values)?);
        }
        set.pending.push(proposal);
        Ok(())
    })
}

/// Validates proposals appended since the last call (unique ids, one
/// feature dimension). On failure the pending proposals are discarded.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dp_proposal_set_finish(set: *mut DpProposalSet) -> DpStatus {
    guard(|| {
        let set = borrow_mut(set, "set")?;
        let r = set.commit();
        if r.is_err() {
            set.pending.clear();
        }
        Ok(r?)
    })
}

/// Reads a proposal set from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_proposal_set_load(path: *const c_char, out: *mut *mut DpProposalSet) -> DpStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        *out = ptr::null_mut();
        let set = load_proposals(path_arg(path, "path")?)?;
        *out = into_handle(set);
        Ok(())
    })
}

/// Writes a proposal set to a JSON file.
///
/// # Safety
/// `set` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dp_proposal_set_save(set: *const DpProposalSet, path: *const c_char) -> DpStatus {
    guard(|| {
        let set = borrow_set(set, "set")?;
        save_proposals(set, path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Serializes a proposal set to a newly allocated JSON string.
///
/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_proposal_set_to_json(set: *const DpProposalSet, out: *mut *mut c_char) -> DpStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        *out = ptr::null_mut();
        let set = borrow_set(set, "set")?;
        *out = to_cstring(proposals_to_json(set));
        Ok(())
    })
}

/// Number of validated proposals in the set.
///
/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_proposal_set_len(set: *const DpProposalSet, out: *mut usize) -> DpStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        *out = borrow(set, "set")?.inner.len();
        Ok(())
    })
}

/// Number of points in the cloud the set refers to.
///
/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_proposal_set_point_count(set: *const DpProposalSet, out: *mut usize) -> DpStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        *out = borrow(set, "set")?.inner.point_count();
        Ok(())
    })
}

/// Borrows the sorted point indices of proposal `k`. The pointer stays
/// valid while the set is alive and unmodified.
///
/// # Safety
/// `set` must be a live handle; `indices` and `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_proposal_set_mask(
    set: *const DpProposalSet,
    k: usize,
    indices: *mut *const u32,
    count: *mut usize,
) -> DpStatus {
    guard(|| {
        let indices = borrow_mut(indices, "indices")?;
        let count = borrow_mut(count, "count")?;
        let set = &borrow(set, "set")?.inner;
        let p = set
            .proposals()
            .get(k)
            .ok_or_else(|| fail(DpStatus::OutOfRange, format!("proposal {k} >= {}", set.len())))?;
        *indices = p.mask.indices().as_ptr();
        *count = p.mask.len();
        Ok(())
    })
}

/// Copies the id of proposal `k` into a newly allocated string.
///
/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_proposal_set_id(set: *const DpProposalSet, k: usize, out: *mut *mut c_char) -> DpStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        *out = ptr::null_mut();
        let set = &borrow(set, "set")?.inner;
        let p = set
            .proposals()
            .get(k)
            .ok_or_else(|| fail(DpStatus::OutOfRange, format!("proposal {k} >= {}", set.len())))?;
        *out = to_cstring(p.id.clone());
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `set` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dp_proposal_set_free(set: *mut DpProposalSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Releases a string returned by the library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Overlap of 3D proposal `i` with 2D proposal `j`.
///
/// # Safety
/// Both sets must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_iou(
    set_3d: *const DpProposalSet,
    i: usize,
    set_2d: *const DpProposalSet,
    j: usize,
    out: *mut DpIoU,
) -> DpStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        let a = borrow_set(set_3d, "set_3d")?;
        let b = borrow_set(set_2d, "set_2d")?;
        let pa = a
            .proposals()
            .get(i)
            .ok_or_else(|| fail(DpStatus::OutOfRange, format!("3D proposal {i} >= {}", a.len())))?;
        let pb = b
            .proposals()
            .get(j)
            .ok_or_else(|| fail(DpStatus::OutOfRange, format!("2D proposal {j} >= {}", b.len())))?;
        let inter = pa.mask.intersection_count(&pb.mask) as f64;
        let union = pa.mask.union_count(&pb.mask) as f64;
        let t = (inter / union, inter / pa.mask.len() as f64, inter / pb.mask.len() as f64);
        *out = DpIoU {
            iou: t.0,
            iou_3d: t.1,
            iou_2d: t.2,
        };
        Ok(())
    })
}

/// Combines a 3D and a 2D proposal set. `config` may be NULL for the
/// defaults. When `report_json` is non-NULL and the mode is conditional it
/// receives the per-proposal decision report; otherwise it is set to NULL.
///
/// # Safety
/// Both sets must be live handles; `out` must be writable; `config` and
/// `report_json` must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn dp_integrate(
    set_3d: *const DpProposalSet,
    set_2d: *const DpProposalSet,
    mode: DpMode,
    config: *const DpIntegrationConfig,
    out: *mut *mut DpProposalSet,
    report_json: *mut *mut c_char,
) -> DpStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        *out = ptr::null_mut();
        if let Some(r) = report_json.as_mut() {
            *r = ptr::null_mut();
        }
        let a = borrow_set(set_3d, "set_3d")?;
        let b = borrow_set(set_2d, "set_2d")?;
        let cfg = match config.as_ref() {
            Some(c) => IntegrationConfig {
                theta_3d: c.theta_3d,
                theta_2d: c.theta_2d,
                eps_unique: c.eps_unique,
            },
            None => IntegrationConfig::default(),
        };
        cfg.validate()?;
        if a.point_count() != b.point_count() {
            return Err(Error::DimensionMismatch {
                expected: a.point_count(),
                found: b.point_count(),
            }
            .into());
        }
        let mode = match mode {
            DpMode::Conditional => Mode::Conditional,
            DpMode::Simple => Mode::Simple,
            DpMode::Only3d => Mode::Only3d,
            DpMode::Only2d => Mode::Only2d,
        };
        let (merged, report) = integrate(mode, a, b, &cfg)?;
        if let (Some(r), Some(report)) = (report_json.as_mut(), report) {
            *r = to_cstring(report.to_json(a, b, &merged));
        }
        *out = into_handle(merged);
        Ok(())
    })
}
