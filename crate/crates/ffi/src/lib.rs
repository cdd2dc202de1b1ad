//! C ABI over `koopman-svd`.
//!
//! Models live behind an opaque [`KsvdModel`] handle. Every fallible call
//! returns a [`KsvdStatus`]; on failure the message is available from
//! [`ksvd_last_error_message`] on the same thread until the next failing
//! call. Status codes 2, 3 and 4 match the command-line exit codes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use koopman_svd::cli::CliError;
use koopman_svd::dynamics::{simulate, OdeSpec};
use koopman_svd::evaluation::{forecast, spectrum};
use koopman_svd::koopman::{Dims, KaeModel, LossWeights, Variant};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsvdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numeric = 3,
    Artifact = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsvdVariant {
    Vanilla = 0,
    Ckae = 1,
    Isvd = 2,
    Usvd = 3,
}

impl From<KsvdVariant> for Variant {
    fn from(v: KsvdVariant) -> Self {
        match v {
            KsvdVariant::Vanilla => Variant::Vanilla,
            KsvdVariant::Ckae => Variant::Ckae,
            KsvdVariant::Isvd => Variant::Isvd,
            KsvdVariant::Usvd => Variant::Usvd,
        }
    }
}

impl From<Variant> for KsvdVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Vanilla => KsvdVariant::Vanilla,
            Variant::Ckae => KsvdVariant::Ckae,
            Variant::Isvd => KsvdVariant::Isvd,
            Variant::Usvd => KsvdVariant::Usvd,
        }
    }
}

/// Cylinder-wake simulation parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsvdOdeSpec {
    pub mu: f64,
    pub omega: f64,
    pub amp: f64,
    pub lam: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub x0: [f64; 3],
}

impl From<KsvdOdeSpec> for OdeSpec {
    fn from(s: KsvdOdeSpec) -> Self {
        OdeSpec {
            mu: s.mu,
            omega: s.omega,
            amp: s.amp,
            lam: s.lam,
            dt: s.dt,
            n_steps: s.n_steps,
            x0: s.x0,
        }
    }
}

/// Opaque model handle.
pub struct KsvdModel {
    inner: KaeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn fail(status: KsvdStatus, msg: impl Into<String>) -> KsvdStatus {
    set_error(msg);
    status
}

fn from_cli(e: CliError) -> KsvdStatus {
    let status = match e.exit_code() {
        3 => KsvdStatus::Numeric,
        4 => KsvdStatus::Artifact,
        _ => KsvdStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> KsvdStatus) -> KsvdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(KsvdStatus::Panic, "internal panic"),
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, KsvdStatus> {
    if path.is_null() {
        return Err(fail(KsvdStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(KsvdStatus::InvalidArgument, "path is not valid UTF-8"))
}

/// Message of the last failing call on this thread, or null. The pointer
/// stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn ksvd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Default simulation parameters (1500 samples, dt = 0.1).
#[no_mangle]
pub extern "C" fn ksvd_ode_spec_default() -> KsvdOdeSpec {
    let s = OdeSpec::default();
    KsvdOdeSpec {
        mu: s.mu,
        omega: s.omega,
        amp: s.amp,
        lam: s.lam,
        dt: s.dt,
        n_steps: s.n_steps,
        x0: s.x0,
    }
}

/// Fresh model with default loss weights and windows. `out` receives a
/// handle to release with [`ksvd_model_free`].
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ksvd_model_new(
    variant: KsvdVariant,
    latent_dim: usize,
    hidden_width: usize,
    seed: u64,
    out: *mut *mut KsvdModel,
) -> KsvdStatus {
    guard(|| {
        if out.is_null() {
            return fail(KsvdStatus::NullPointer, "out is null");
        }
        if latent_dim == 0 || hidden_width == 0 {
            return fail(KsvdStatus::InvalidArgument, "dimensions must be positive");
        }
        let dims = Dims {
            n: 3,
            m: latent_dim,
            h: hidden_width,
        };
        match KaeModel::new(variant.into(), dims, LossWeights::default(), 20, 20, seed) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(KsvdModel { inner }));
                KsvdStatus::Ok
            }
            Err(e) => from_cli(e.into()),
        }
    })
}

/// Loads a JSON checkpoint.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` as in [`ksvd_model_new`].
#[no_mangle]
pub unsafe extern "C" fn ksvd_model_load(path: *const c_char, out: *mut *mut KsvdModel) -> KsvdStatus {
    guard(|| {
        if out.is_null() {
            return fail(KsvdStatus::NullPointer, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match KaeModel::load(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(KsvdModel { inner }));
                KsvdStatus::Ok
            }
            Err(e) => fail(KsvdStatus::Artifact, format!("{}: {e}", path.display())),
        }
    })
}

/// Writes a JSON checkpoint.
///
/// # Safety
/// `model` must come from this library and not be freed; `path` must be a
/// nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ksvd_model_save(model: *const KsvdModel, path: *const c_char) -> KsvdStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(KsvdStatus::NullPointer, "model is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match model.inner.save(path) {
            Ok(()) => KsvdStatus::Ok,
            Err(e) => from_cli(e.into()),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ksvd_model_free(model: *mut KsvdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Variant of a model; [`KsvdVariant::Vanilla`] for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ksvd_model_variant(model: *const KsvdModel) -> KsvdVariant {
    model.as_ref().map_or(KsvdVariant::Vanilla, |m| m.inner.variant.into())
}

/// State dimension N; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ksvd_model_state_dim(model: *const KsvdModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dims.n)
}

/// Latent dimension M; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ksvd_model_latent_dim(model: *const KsvdModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dims.m)
}

/// Predicts `horizon` states from `x0` (N values, raw coordinates) into
/// `out`, row-major, `horizon * N` values.
///
/// # Safety
/// `x0` must hold N readable values and `out` `out_len` writable ones.
#[no_mangle]
pub unsafe extern "C" fn ksvd_model_predict(
    model: *const KsvdModel,
    x0: *const f64,
    horizon: usize,
    out: *mut f64,
    out_len: usize,
) -> KsvdStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(KsvdStatus::NullPointer, "model is null");
        };
        if x0.is_null() || out.is_null() {
            return fail(KsvdStatus::NullPointer, "x0 or out is null");
        }
        let n = model.inner.dims.n;
        if horizon == 0 || out_len < horizon * n {
            return fail(
                KsvdStatus::InvalidArgument,
                format!("need horizon >= 1 and out_len >= {}", horizon.max(1) * n),
            );
        }
        let x0 = std::slice::from_raw_parts(x0, n);
        match forecast(&model.inner, x0, horizon) {
            Ok(pred) => {
                std::slice::from_raw_parts_mut(out, horizon * n).copy_from_slice(pred.data());
                KsvdStatus::Ok
            }
            Err(e) => from_cli(e.into()),
        }
    })
}

/// Eigenvalues of the materialized `K` into `re`/`im` (M values each) and
/// the largest distance of their moduli from 1 into `max_deviation`.
///
/// # Safety
/// `re` and `im` must hold `len` writable values; `max_deviation` may be
/// null.
#[no_mangle]
pub unsafe extern "C" fn ksvd_model_spectrum(
    model: *const KsvdModel,
    re: *mut f64,
    im: *mut f64,
    len: usize,
    max_deviation: *mut f64,
) -> KsvdStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(KsvdStatus::NullPointer, "model is null");
        };
        if re.is_null() || im.is_null() {
            return fail(KsvdStatus::NullPointer, "re or im is null");
        }
        let m = model.inner.dims.m;
        if len < m {
            return fail(KsvdStatus::InvalidArgument, format!("need len >= {m}"));
        }
        match spectrum(&model.inner) {
            Ok(s) => {
                let re = std::slice::from_raw_parts_mut(re, m);
                let im = std::slice::from_raw_parts_mut(im, m);
                for (i, c) in s.k.iter().enumerate() {
                    re[i] = c.re;
                    im[i] = c.im;
                }
                if !max_deviation.is_null() {
                    *max_deviation = s.max_deviation;
                }
                KsvdStatus::Ok
            }
            Err(e) => from_cli(e.into()),
        }
    })
}

/// Simulates the cylinder-wake system into `out`, row-major,
/// `spec.n_steps * 3` values.
///
/// # Safety
/// `spec` must be readable and `out` must hold `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn ksvd_simulate(spec: *const KsvdOdeSpec, out: *mut f64, out_len: usize) -> KsvdStatus {
    guard(|| {
        let Some(spec) = spec.as_ref() else {
            return fail(KsvdStatus::NullPointer, "spec is null");
        };
        if out.is_null() {
            return fail(KsvdStatus::NullPointer, "out is null");
        }
        let need = spec.n_steps.saturating_mul(3);
        if out_len < need {
            return fail(KsvdStatus::InvalidArgument, format!("need out_len >= {need}"));
        }
        match simulate(&(*spec).into()) {
            Ok(traj) => {
                std::slice::from_raw_parts_mut(out, need).copy_from_slice(traj.states.data());
                KsvdStatus::Ok
            }
            Err(e) => from_cli(e.into()),
        }
    })
}
