//! C ABI for the matching-mechanism workbench.
//!
//! All functions return a `MechlabStatus`; results come back through out
//! parameters.  Handles are opaque and must be released with the matching
//! `_free` function.  `mechlab_last_error` returns a thread-local,
//! NUL-terminated description of the most recent failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mechlab::matching::{total_violation, waste, RandomizedMatching};
use mechlab::mechanisms::Mechanism;
use mechlab::prefs::Profile;
use mechlab::Error;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

/// Result of every API call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum MechlabStatus {
    /// Success.
    Ok = 0,
    /// Null pointer, unparseable input, or out-of-range index.
    InvalidArgument = 1,
    /// The request would exceed an enumeration size gate.
    SizeGate = 2,
    /// The operation ran and failed; see mechlab_last_error.
    Failed = 3,
}

fn status_of(err: &Error) -> MechlabStatus {
    match err {
        Error::SizeGate(_) | Error::EnumerationTooLarge(_) | Error::IndexOverflow { .. } => {
            MechlabStatus::SizeGate
        }
        Error::InvalidPreference(_)
        | Error::InvalidProfile(_)
        | Error::InvalidOrdering(_)
        | Error::BadDescriptor(_, _)
        | Error::IndexOutOfRange { .. }
        | Error::WrongSize(_) => MechlabStatus::InvalidArgument,
        _ => MechlabStatus::Failed,
    }
}

/// Opaque mechanism handle.
pub struct MechlabMechanism {
    inner: Mechanism,
}

/// Opaque match-matrix handle.
pub struct MechlabMatrix {
    inner: RandomizedMatching,
    profile: Profile,
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok()
}

/// Thread-local message describing the most recent failure.  The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mechlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mechlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses a mechanism descriptor such as `alg2`, `sd:nat`, `rsd1`, or
/// `anon(alg2)` into a handle.
///
/// # Safety
/// `descriptor` must be a valid NUL-terminated string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn mechlab_mechanism_parse(
    descriptor: *const c_char,
    out: *mut *mut MechlabMechanism,
) -> MechlabStatus {
    if out.is_null() {
        set_error("null output pointer");
        return MechlabStatus::InvalidArgument;
    }
    *out = ptr::null_mut();
    let Some(desc) = read_str(descriptor) else {
        set_error("descriptor is null or not UTF-8");
        return MechlabStatus::InvalidArgument;
    };
    match Mechanism::parse(desc) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(MechlabMechanism { inner }));
            MechlabStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// Releases a mechanism handle.  Null is ignored.
///
/// # Safety
/// `mech` must be null or a pointer from `mechlab_mechanism_parse` that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn mechlab_mechanism_free(mech: *mut MechlabMechanism) {
    if !mech.is_null() {
        drop(Box::from_raw(mech));
    }
}

/// Evaluates a mechanism on a profile given in line format
/// (`n m | s1:2,0,1 | ... | c1:...`).  Oversized mixtures fall back to
/// seeded sampling.
///
/// # Safety
/// `mech` must be a live mechanism handle, `profile` a valid string, and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mechlab_evaluate(
    mech: *const MechlabMechanism,
    profile: *const c_char,
    seed: u64,
    out: *mut *mut MechlabMatrix,
) -> MechlabStatus {
    if mech.is_null() || out.is_null() {
        set_error("null handle");
        return MechlabStatus::InvalidArgument;
    }
    *out = ptr::null_mut();
    let Some(line) = read_str(profile) else {
        set_error("profile is null or not UTF-8");
        return MechlabStatus::InvalidArgument;
    };
    let profile = match Profile::parse_line(line) {
        Ok(p) => p,
        Err(e) => {
            set_error(&e.to_string());
            return status_of(&e);
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match (*mech).inner.evaluate_or_sample(&profile, &mut rng, 400) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(MechlabMatrix { inner, profile }));
            MechlabStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// Releases a matrix handle.  Null is ignored.
///
/// # Safety
/// `matrix` must be null or a pointer from `mechlab_evaluate` that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn mechlab_matrix_free(matrix: *mut MechlabMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Writes the matrix dimensions (students, schools).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mechlab_matrix_dims(
    matrix: *const MechlabMatrix,
    n: *mut usize,
    m: *mut usize,
) -> MechlabStatus {
    if matrix.is_null() || n.is_null() || m.is_null() {
        set_error("null pointer");
        return MechlabStatus::InvalidArgument;
    }
    *n = (*matrix).inner.n();
    *m = (*matrix).inner.m();
    MechlabStatus::Ok
}

/// Reads one match probability.
///
/// # Safety
/// `matrix` must be a live matrix handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mechlab_matrix_get(
    matrix: *const MechlabMatrix,
    student: usize,
    school: usize,
    value: *mut f64,
) -> MechlabStatus {
    if matrix.is_null() || value.is_null() {
        set_error("null pointer");
        return MechlabStatus::InvalidArgument;
    }
    let inner = &(*matrix).inner;
    if student >= inner.n() || school >= inner.m() {
        set_error("matrix index out of range");
        return MechlabStatus::InvalidArgument;
    }
    *value = inner.get(student, school);
    MechlabStatus::Ok
}

/// Writes the total stability violation and the waste (unassigned mass)
/// of the evaluated outcome.
///
/// # Safety
/// `matrix` must be a live matrix handle; `stv` and `waste_out` must be
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mechlab_matrix_stats(
    matrix: *const MechlabMatrix,
    stv: *mut f64,
    waste_out: *mut f64,
) -> MechlabStatus {
    if matrix.is_null() || stv.is_null() || waste_out.is_null() {
        set_error("null pointer");
        return MechlabStatus::InvalidArgument;
    }
    let m = &*matrix;
    *stv = total_violation(&m.inner, &m.profile);
    *waste_out = waste(&m.inner);
    MechlabStatus::Ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    #[test]
    fn smoke_evaluate_through_the_c_surface() {
        unsafe {
            let desc = CString::new("alg2").unwrap();
            let mut mech: *mut MechlabMechanism = ptr::null_mut();
            assert!(mechlab_mechanism_parse(desc.as_ptr(), &mut mech) == MechlabStatus::Ok);
            assert!(!mech.is_null());

            let profile =
                CString::new("3 3 | s1:0,1,2 s2:0,1,2 s3:0,1,2 | c1:0,1,2 c2:0,1,2 c3:0,1,2")
                    .unwrap();
            let mut matrix: *mut MechlabMatrix = ptr::null_mut();
            assert!(
                mechlab_evaluate(mech, profile.as_ptr(), 0, &mut matrix) == MechlabStatus::Ok
            );

            let (mut n, mut m) = (0usize, 0usize);
            assert!(mechlab_matrix_dims(matrix, &mut n, &mut m) == MechlabStatus::Ok);
            assert_eq!((n, m), (3, 3));

            let mut total = 0.0;
            for s in 0..3 {
                for c in 0..3 {
                    let mut v = f64::NAN;
                    assert!(mechlab_matrix_get(matrix, s, c, &mut v) == MechlabStatus::Ok);
                    assert!((0.0..=1.0).contains(&v));
                    total += v;
                }
            }
            assert!((total - 3.0).abs() < 1e-9);

            let (mut stv, mut w) = (f64::NAN, f64::NAN);
            assert!(mechlab_matrix_stats(matrix, &mut stv, &mut w) == MechlabStatus::Ok);
            assert!(stv >= 0.0 && w.abs() < 1e-9);

            mechlab_matrix_free(matrix);
            mechlab_mechanism_free(mech);
        }
    }

    #[test]
    fn errors_surface_through_status_and_message() {
        unsafe {
            let desc = CString::new("no-such-mechanism").unwrap();
            let mut mech: *mut MechlabMechanism = ptr::null_mut();
            let status = mechlab_mechanism_parse(desc.as_ptr(), &mut mech);
            assert!(status == MechlabStatus::InvalidArgument);
            assert!(mech.is_null());
            let msg = CStr::from_ptr(mechlab_last_error()).to_str().unwrap();
            assert!(msg.contains("no-such-mechanism"), "{msg}");
        }
    }

    #[test]
    fn header_exists_after_build() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("include")
            .join("mechlab.h");
        let text = std::fs::read_to_string(header).unwrap();
        assert!(text.contains("mechlab_mechanism_parse"));
        assert!(text.contains("MechlabStatus"));
    }
}
