//! C ABI for echo-core.
//!
//! Every fallible function returns an [`EchoStatus`]; on failure the
//! message is available from [`echo_last_error`] on the same thread.
//! Strings returned through out-parameters are owned by the caller and
//! released with [`echo_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use echo_core::aggregation::build_dem;
use echo_core::annotation::AnnotationStore;
use echo_core::fixtures::bundled_fixture;
use echo_core::genai::MockProvider;
use echo_core::inference::{analyze, build_iem, chi2_homogeneity, ContingencyTable};
use echo_core::stats;
use echo_core::taxonomy::{bundled_study, Scope, StudyConfig};
use echo_core::vignette::{build_corpus, AugmentedVignette, Overrides};
use echo_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EchoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Invalid = 4,
    UnknownId = 5,
    Selection = 6,
    Duplicate = 7,
    CoverageGap = 8,
    DegenerateTable = 9,
    Domain = 10,
    Io = 11,
    Panic = 98,
    Other = 99,
}

impl From<&Error> for EchoStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parse(_) | Error::EmptyParse | Error::AnswerParse { .. } => EchoStatus::Parse,
            Error::Invalid { .. } | Error::RecordMismatch { .. } | Error::AssignmentTooLarge { .. } => EchoStatus::Invalid,
            Error::Unknown { .. } | Error::UnknownTemplate(_) | Error::UnknownFormat(_) => EchoStatus::UnknownId,
            Error::Selection(_) => EchoStatus::Selection,
            Error::DuplicateId { .. } | Error::DuplicateAnnotation { .. } => EchoStatus::Duplicate,
            Error::CoverageGap(_) | Error::EmptyTally(_) => EchoStatus::CoverageGap,
            Error::DegenerateTable(_) => EchoStatus::DegenerateTable,
            Error::Domain(_) => EchoStatus::Domain,
            Error::Io { .. } | Error::MissingArtifact { .. } => EchoStatus::Io,
            _ => EchoStatus::Other,
        }
    }
}

/// Omnibus test summary.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EchoOmnibus {
    pub chi2: f64,
    pub dof: u32,
    pub p_value: f64,
    pub cramers_v: f64,
    pub n_votes: u64,
}

/// Opaque study handle: configuration, corpus and an in-memory store.
pub struct EchoStudy {
    config: StudyConfig,
    corpus: Vec<AugmentedVignette>,
    store: AnnotationStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), (EchoStatus, String)>) -> EchoStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EchoStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside echo-core".into());
            EchoStatus::Panic
        }
    }
}

fn core(e: Error) -> (EchoStatus, String) {
    (EchoStatus::from(&e), e.to_string())
}

fn null() -> (EchoStatus, String) {
    (EchoStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, (EchoStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (EchoStatus::InvalidUtf8, "argument is not valid UTF-8".into()))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), (EchoStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    let c = CString::new(s).map_err(|_| (EchoStatus::Other, "interior nul in output".into()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn study_mut<'a>(p: *mut EchoStudy) -> Result<&'a mut EchoStudy, (EchoStatus, String)> {
    p.as_mut().ok_or_else(null)
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn echo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn echo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opens a bundled study ("diagnosis" or "hiring") with its vignette corpus
/// built by the mock provider under `seed`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn echo_study_open_bundled(name: *const c_char, seed: u64, out: *mut *mut EchoStudy) -> EchoStatus {
    guard(|| {
        let name = str_arg(name)?;
        if out.is_null() {
            return Err(null());
        }
        let config = bundled_study(name).map_err(core)?;
        let build = build_corpus(&config, &MockProvider::new(seed), &Overrides::new(), seed).map_err(core)?;
        if !build.is_complete() {
            let ids = build.failures.into_iter().map(|f| f.vignette_id).collect();
            return Err(core(Error::CoverageGap(ids)));
        }
        let store = AnnotationStore::in_memory(&config.study_id);
        *out = Box::into_raw(Box::new(EchoStudy {
            config,
            corpus: build.vignettes,
            store,
        }));
        Ok(())
    })
}

/// # Safety
/// `study` must be NULL or a handle from [`echo_study_open_bundled`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn echo_study_free(study: *mut EchoStudy) {
    if !study.is_null() {
        drop(Box::from_raw(study));
    }
}

/// # Safety
/// `study` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn echo_study_record_count(study: *const EchoStudy) -> usize {
    study.as_ref().map_or(0, |s| s.store.len())
}

/// Loads the bundled reference annotations for the study's domain.
///
/// # Safety
/// `study` must be a live handle; `added` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn echo_study_load_fixtures(study: *mut EchoStudy, added: *mut usize) -> EchoStatus {
    guard(|| {
        let s = study_mut(study)?;
        let fixture = bundled_fixture(&s.config.domain).map_err(core)?;
        let n = fixture.load_into(&mut s.store, &s.corpus).map_err(core)?;
        if !added.is_null() {
            *added = n;
        }
        Ok(())
    })
}

/// Imports annotation CSV text. Invalid rows are counted in `rejected`
/// and do not fail the call.
///
/// # Safety
/// `study` must be a live handle, `csv` a NUL-terminated string; the
/// counters may be NULL.
#[no_mangle]
pub unsafe extern "C" fn echo_study_import_csv(
    study: *mut EchoStudy,
    csv: *const c_char,
    accepted: *mut usize,
    rejected: *mut usize,
) -> EchoStatus {
    guard(|| {
        let s = study_mut(study)?;
        let text = str_arg(csv)?;
        let summary = s.store.import_text(text, &s.corpus).map_err(core)?;
        if !accepted.is_null() {
            *accepted = summary.accepted;
        }
        if !rejected.is_null() {
            *rejected = summary.rejected.len();
        }
        Ok(())
    })
}

/// Descriptive matrix as JSON.
///
/// # Safety
/// `study` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn echo_study_dem_json(study: *mut EchoStudy, out: *mut *mut c_char) -> EchoStatus {
    guard(|| {
        let s = study_mut(study)?;
        let dem = build_dem(&s.store, &s.corpus, &s.config).map_err(core)?;
        write_string(out, dem.to_json())
    })
}

/// Per-stakeholder test results as JSON.
///
/// # Safety
/// `study` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn echo_study_analysis_json(study: *mut EchoStudy, out: *mut *mut c_char) -> EchoStatus {
    guard(|| {
        let s = study_mut(study)?;
        let a = analyze(&s.store, &s.corpus, &s.config).map_err(core)?;
        write_string(out, a.to_json())
    })
}

/// Inferential matrix as JSON.
///
/// # Safety
/// `study` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn echo_study_iem_json(study: *mut EchoStudy, out: *mut *mut c_char) -> EchoStatus {
    guard(|| {
        let s = study_mut(study)?;
        let dem = build_dem(&s.store, &s.corpus, &s.config).map_err(core)?;
        let a = analyze(&s.store, &s.corpus, &s.config).map_err(core)?;
        let iem = build_iem(&dem, &a, &s.config).map_err(core)?;
        write_string(out, iem.to_json())
    })
}

/// Upper tail of the χ² distribution.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn echo_chi2_survival(x: f64, dof: u32, out: *mut f64) -> EchoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        *out = stats::chi2_survival(x, dof).map_err(core)?;
        Ok(())
    })
}

/// Upper tail of the standard normal distribution.
#[no_mangle]
pub extern "C" fn echo_normal_survival(z: f64) -> f64 {
    stats::normal_survival(z)
}

/// χ² homogeneity test on a row-major `rows` × `cols` count matrix.
///
/// # Safety
/// `counts` must point to `rows * cols` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn echo_chi2_homogeneity(counts: *const u64, rows: usize, cols: usize, out: *mut EchoOmnibus) -> EchoStatus {
    guard(|| {
        if counts.is_null() || out.is_null() {
            return Err(null());
        }
        let len = rows
            .checked_mul(cols)
            .ok_or((EchoStatus::Invalid, "table size overflows".into()))?;
        let flat = std::slice::from_raw_parts(counts, len);
        let matrix: Vec<Vec<u64>> = flat.chunks(cols.max(1)).take(rows).map(<[u64]>::to_vec).collect();
        let table = ContingencyTable::new(
            "ffi",
            "table",
            Scope::Individual,
            (0..rows).map(|i| format!("r{i}")).collect(),
            (0..cols).map(|j| format!("c{j}")).collect(),
            matrix,
        )
        .map_err(core)?;
        let r = chi2_homogeneity(&table, 0.05).map_err(core)?;
        *out = EchoOmnibus {
            chi2: r.chi2,
            dof: r.dof,
            p_value: r.p_value,
            cramers_v: r.cramers_v,
            n_votes: r.n_votes,
        };
        Ok(())
    })
}
