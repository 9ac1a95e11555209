//! C ABI for the kzcoarse toolkit.
//!
//! Every fallible call returns a [`KzcStatus`]; on failure the message is
//! kept per thread and read back with [`kzc_last_error`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kzcoarse::estimators::defect_length;
use kzcoarse::ising::SpinLattice;
use kzcoarse::scaling::{growth_exponent, kz_scales, ExponentRegistry, MicroScales, RampProtocol, ScalingModel};
use kzcoarse::tfim::{ramp_simulate, ChainSpec, RampResult};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KzcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The computation itself failed.
    Engine = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn guard(f: impl FnOnce() -> Result<(), (KzcStatus, String)>) -> KzcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KzcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            KzcStatus::Panic
        }
    }
}

fn null(what: &str) -> (KzcStatus, String) {
    (KzcStatus::NullPointer, format!("{what} is null"))
}

fn engine<E: std::fmt::Display>(e: E) -> (KzcStatus, String) {
    (KzcStatus::Engine, e.to_string())
}

fn invalid<E: std::fmt::Display>(e: E) -> (KzcStatus, String) {
    (KzcStatus::InvalidArgument, e.to_string())
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (KzcStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copy the last error message of this thread into `buf` (NUL-terminated).
///
/// Returns the message length excluding the terminator, or 0 when there is
/// none. If `len` is too small the message is truncated.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn kzc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kzc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------- scaling

/// Scaling functions of one universality class.
pub struct KzcScalingModel {
    model: ScalingModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KzcKzScales {
    pub t_kz: f64,
    pub xi_kz: f64,
    pub g_kz: f64,
}

/// Model for a built-in class name such as `"ising-2+1d"`.
///
/// # Safety
/// `class_name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kzc_scaling_model_new(class_name: *const c_char, out: *mut *mut KzcScalingModel) -> KzcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if class_name.is_null() {
            return Err(null("class_name"));
        }
        let name = CStr::from_ptr(class_name).to_str().map_err(invalid)?;
        let e = ExponentRegistry::default().get(name).map_err(invalid)?;
        *out = Box::into_raw(Box::new(KzcScalingModel { model: ScalingModel::new(e) }));
        Ok(())
    })
}

/// Set the scaled onset `x_c` of classical critical coarsening.
///
/// # Safety
/// `model` must come from [`kzc_scaling_model_new`].
#[no_mangle]
pub unsafe extern "C" fn kzc_scaling_model_set_x_c(model: *mut KzcScalingModel, x_c: f64) -> KzcStatus {
    guard(|| {
        let m = out_ref(model, "model")?;
        let next = m.model.clone().with_x_c(x_c);
        next.validate().map_err(invalid)?;
        m.model = next;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from [`kzc_scaling_model_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn kzc_scaling_model_free(model: *mut KzcScalingModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Late-time growth exponent of the length during a sweep of power `p`.
///
/// # Safety
/// `model` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kzc_growth_exponent(model: *const KzcScalingModel, p: f64, out: *mut f64) -> KzcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out_ref(out, "out")?;
        if !(p.is_finite() && p > 0.0) {
            return Err(invalid(format!("p must be positive, got {p}")));
        }
        *out = growth_exponent(&m.model.exponents, p).exponent;
        Ok(())
    })
}

/// Freeze-out scales of a ramp `g = sign(t)|t/tau|^p` in microscopic units.
///
/// # Safety
/// `model` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kzc_kz_scales(model: *const KzcScalingModel, tau: f64, p: f64, out: *mut KzcKzScales) -> KzcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out_ref(out, "out")?;
        let kz = kz_scales(&m.model.exponents, &MicroScales::default(), &RampProtocol::linear(tau).with_power(p)).map_err(invalid)?;
        *out = KzcKzScales { t_kz: kz.t_kz, xi_kz: kz.xi_kz, g_kz: kz.g_kz };
        Ok(())
    })
}

/// `f_p(x)`, the length during a continuing sweep.
///
/// # Safety
/// `model` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kzc_eval_sweep(model: *const KzcScalingModel, x: f64, p: f64, out: *mut f64) -> KzcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_ref(out, "out")? = m.model.eval_f(x, p);
        Ok(())
    })
}

/// `F(x, x_s)`, the length after a stop at scaled time `x_s`.
///
/// # Safety
/// `model` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kzc_eval_stopped(model: *const KzcScalingModel, x: f64, x_s: f64, out: *mut f64) -> KzcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out_ref(out, "out")?;
        *out = m.model.eval_F(x, x_s).map_err(engine)?;
        Ok(())
    })
}

// ------------------------------------------------------------------ ising

/// A periodic 2D Ising lattice under heat-bath dynamics.
pub struct KzcIsingLattice {
    lattice: SpinLattice,
}

/// Lattice of `lx * ly` independent random spins.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kzc_ising_new(lx: usize, ly: usize, seed: u64, out: *mut *mut KzcIsingLattice) -> KzcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let mut lattice = SpinLattice::new(lx, ly, seed).map_err(invalid)?;
        lattice.randomize();
        *out = Box::into_raw(Box::new(KzcIsingLattice { lattice }));
        Ok(())
    })
}

/// # Safety
/// `lat` must be null or come from [`kzc_ising_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn kzc_ising_free(lat: *mut KzcIsingLattice) {
    if !lat.is_null() {
        drop(Box::from_raw(lat));
    }
}

/// `sweeps` full sweeps at fixed temperature (in units of J).
///
/// # Safety
/// `lat` must be valid.
#[no_mangle]
pub unsafe extern "C" fn kzc_ising_sweep(lat: *mut KzcIsingLattice, temperature: f64, sweeps: u64) -> KzcStatus {
    guard(|| {
        let l = out_ref(lat, "lattice")?;
        for _ in 0..sweeps {
            l.lattice.glauber_sweep(temperature).map_err(invalid)?;
        }
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KzcIsingObservables {
    pub magnetization: f64,
    pub energy_per_site: f64,
    /// Inverse density of unsatisfied bonds.
    pub defect_length: f64,
}

/// # Safety
/// `lat` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kzc_ising_observables(lat: *const KzcIsingLattice, out: *mut KzcIsingObservables) -> KzcStatus {
    guard(|| {
        let l = &lat.as_ref().ok_or_else(|| null("lattice"))?.lattice;
        *out_ref(out, "out")? = KzcIsingObservables {
            magnetization: l.magnetization(),
            energy_per_site: l.energy_per_site(),
            defect_length: defect_length(l.lx(), l.ly(), l.spins()),
        };
        Ok(())
    })
}

/// Copy the spins (row-major, +1/-1) into `buf`, which must hold `lx * ly`.
///
/// # Safety
/// `lat` must be valid; `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn kzc_ising_spins(lat: *const KzcIsingLattice, buf: *mut i8, len: usize) -> KzcStatus {
    guard(|| {
        let s = lat.as_ref().ok_or_else(|| null("lattice"))?.lattice.spins();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < s.len() {
            return Err((KzcStatus::BufferTooSmall, format!("need {} spins, buffer holds {len}", s.len())));
        }
        ptr::copy_nonoverlapping(s.as_ptr(), buf, s.len());
        Ok(())
    })
}

// ------------------------------------------------------------------- tfim

/// Result of a linear or power-law ramp of the transverse-field chain.
pub struct KzcTfimRamp {
    result: RampResult,
}

/// Ramp an `l`-site chain through the critical point with default endpoints.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kzc_tfim_ramp(l: usize, tau: f64, p: f64, out: *mut *mut KzcTfimRamp) -> KzcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let spec = ChainSpec::new(l, tau, p);
        spec.validate().map_err(invalid)?;
        let result = ramp_simulate(&spec).map_err(engine)?;
        *out = Box::into_raw(Box::new(KzcTfimRamp { result }));
        Ok(())
    })
}

/// # Safety
/// `ramp` must be null or come from [`kzc_tfim_ramp`], freed once.
#[no_mangle]
pub unsafe extern "C" fn kzc_tfim_ramp_free(ramp: *mut KzcTfimRamp) {
    if !ramp.is_null() {
        drop(Box::from_raw(ramp));
    }
}

/// Kink density per site.
///
/// # Safety
/// `ramp` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kzc_tfim_ramp_density(ramp: *const KzcTfimRamp, out: *mut f64) -> KzcStatus {
    guard(|| {
        let r = ramp.as_ref().ok_or_else(|| null("ramp"))?;
        *out_ref(out, "out")? = r.result.density;
        Ok(())
    })
}

/// Number of positive momenta in the ramp.
///
/// # Safety
/// `ramp` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn kzc_tfim_ramp_modes(ramp: *const KzcTfimRamp) -> usize {
    ramp.as_ref().map_or(0, |r| r.result.momenta.len())
}

/// Copy the momenta and excitation probabilities into two buffers of `len`.
///
/// # Safety
/// `ramp` must be valid; `k` and `p_k` must each point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn kzc_tfim_ramp_modes_copy(ramp: *const KzcTfimRamp, k: *mut f64, p_k: *mut f64, len: usize) -> KzcStatus {
    guard(|| {
        let r = &ramp.as_ref().ok_or_else(|| null("ramp"))?.result;
        if k.is_null() || p_k.is_null() {
            return Err(null("output buffer"));
        }
        let n = r.momenta.len();
        if len < n {
            return Err((KzcStatus::BufferTooSmall, format!("need {n} modes, buffers hold {len}")));
        }
        ptr::copy_nonoverlapping(r.momenta.as_ptr(), k, n);
        ptr::copy_nonoverlapping(r.p_k.as_ptr(), p_k, n);
        Ok(())
    })
}
