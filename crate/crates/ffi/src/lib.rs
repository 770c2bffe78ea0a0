//! C ABI over `brwlab`.
//!
//! Objects are opaque handles created by `*_new`/`*_builtin`/`*_simulate`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`BrwStatus`]; on failure the message is available from
//! [`brw_last_error_message`] on the same thread. Results are written through
//! out-pointers. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use brwlab::brw::{BarrierSpec, Population};
use brwlab::functional::GridFunctional;
use brwlab::gibbs::{self, TrajectoryMode};
use brwlab::laws::{log_laplace, ReproductionLaw};
use brwlab::rng::Streams;
use brwlab::walk::{meander_laplace, survival_probability, walk_from_reproduction, WalkLaw};
use brwlab::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnsupportedLaw = 3,
    Extinct = 4,
    PopulationExplosion = 5,
    Io = 6,
    Format = 7,
    Numerical = 8,
    Internal = 9,
}

/// Path functionals accepted by [`brw_gibbs_trajectory_mean`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrwFunctional {
    One = 0,
    Endpoint = 1,
    Sup = 2,
    TimeAverage = 3,
    PositiveFraction = 4,
}

impl From<BrwFunctional> for GridFunctional {
    fn from(f: BrwFunctional) -> Self {
        match f {
            BrwFunctional::One => GridFunctional::One,
            BrwFunctional::Endpoint => GridFunctional::Endpoint,
            BrwFunctional::Sup => GridFunctional::Sup,
            BrwFunctional::TimeAverage => GridFunctional::TimeAverage,
            BrwFunctional::PositiveFraction => GridFunctional::PositiveFraction,
        }
    }
}

/// Opaque reproduction law.
pub struct BrwLaw(ReproductionLaw);

/// Opaque associated random walk.
pub struct BrwWalk(WalkLaw);

/// Opaque simulated tree.
pub struct BrwPopulation(Population);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> BrwStatus {
    match e {
        Error::InvalidArgument(_) | Error::Config { .. } | Error::Schedule(_) | Error::IndexOutOfRange { .. } | Error::SizeGuard(_) => {
            BrwStatus::InvalidArgument
        }
        Error::UnsupportedLaw { .. } => BrwStatus::UnsupportedLaw,
        Error::Extinct => BrwStatus::Extinct,
        Error::PopulationExplosion { .. } => BrwStatus::PopulationExplosion,
        Error::Io { .. } => BrwStatus::Io,
        Error::Snapshot(_) | Error::Csv(_) | Error::Json(_) => BrwStatus::Format,
        Error::Divergence { .. } | Error::TooFewSurvivors { .. } | Error::ZeroHits | Error::RejectionBudget { .. } => BrwStatus::Numerical,
        Error::ConditioningMismatch { .. } => BrwStatus::Internal,
    }
}

struct Fail(BrwStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BrwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            BrwStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            BrwStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(BrwStatus::NullPointer, format!("{what} is null")))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(BrwStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(BrwStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(BrwStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn brw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn brw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// `E[e^{c 𝓜(1)}]` for the Brownian meander, in closed form.
#[no_mangle]
pub extern "C" fn brw_meander_laplace(c: f64) -> f64 {
    meander_laplace(c)
}

/// Built-in law by name (`gaussian_dyadic`, `two_config`, `point_mass`) or
/// a law TOML file path.
///
/// # Safety
/// `name` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn brw_law_new(name: *const c_char, out: *mut *mut BrwLaw) -> BrwStatus {
    guard(|| {
        let law = ReproductionLaw::resolve(str_arg(name, "name")?)?;
        write(out, Box::into_raw(Box::new(BrwLaw(law))), "out")
    })
}

/// # Safety
/// `law` must come from [`brw_law_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn brw_law_free(law: *mut BrwLaw) {
    if !law.is_null() {
        drop(Box::from_raw(law));
    }
}

/// `Ψ(β)`.
///
/// # Safety
/// `law` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn brw_law_log_laplace(law: *const BrwLaw, beta: f64, out: *mut f64) -> BrwStatus {
    guard(|| {
        let v = log_laplace(&deref(law, "law")?.0, beta)?.value;
        write(out, v, "out")
    })
}

/// `σ² = Ψ''(1)`.
///
/// # Safety
/// `law` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn brw_law_sigma_sq(law: *const BrwLaw, out: *mut f64) -> BrwStatus {
    guard(|| write(out, deref(law, "law")?.0.psi_derivatives(1.0).2, "out"))
}

/// The associated random walk of `law`.
///
/// # Safety
/// `law` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn brw_walk_new(law: *const BrwLaw, out: *mut *mut BrwWalk) -> BrwStatus {
    guard(|| {
        let walk = walk_from_reproduction(&deref(law, "law")?.0)?;
        write(out, Box::into_raw(Box::new(BrwWalk(walk))), "out")
    })
}

/// # Safety
/// `walk` must come from [`brw_walk_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn brw_walk_free(walk: *mut BrwWalk) {
    if !walk.is_null() {
        drop(Box::from_raw(walk));
    }
}

/// Monte Carlo `P(min_{k≤n} S_k ≥ −u)` with its standard error.
///
/// # Safety
/// `walk` must be a live handle; `value` and `se` writable.
#[no_mangle]
pub unsafe extern "C" fn brw_walk_survival(
    walk: *const BrwWalk,
    u: f64,
    n: usize,
    n_paths: usize,
    seed: u64,
    value: *mut f64,
    se: *mut f64,
) -> BrwStatus {
    guard(|| {
        let e = survival_probability(&deref(walk, "walk")?.0, u, n, n_paths, &Streams::new(seed, "ffi-survival"))?.estimate();
        write(value, e.value, "value")?;
        write(se, e.se, "se")
    })
}

/// Grow one tree to generation `n`. `lower_l` is the barrier `−L`; pass NaN
/// for none.
///
/// # Safety
/// `law` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn brw_population_simulate(
    law: *const BrwLaw,
    n: usize,
    lower_l: f64,
    max_particles: usize,
    seed: u64,
    out: *mut *mut BrwPopulation,
) -> BrwStatus {
    guard(|| {
        let law = &deref(law, "law")?.0;
        let barrier = if lower_l.is_nan() { BarrierSpec::NONE } else { BarrierSpec::lower(lower_l) };
        let pop = Population::simulate(law, n, &barrier, max_particles, &mut Streams::new(seed, "ffi-simulate").rng(0))?;
        write(out, Box::into_raw(Box::new(BrwPopulation(pop))), "out")
    })
}

/// Load a tree snapshot written by the CLI or [`brw_population_save`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn brw_population_load(path: *const c_char, out: *mut *mut BrwPopulation) -> BrwStatus {
    guard(|| {
        let pop = Population::read_snapshot(Path::new(str_arg(path, "path")?))?;
        write(out, Box::into_raw(Box::new(BrwPopulation(pop))), "out")
    })
}

/// # Safety
/// `pop` must be a live handle and `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn brw_population_save(pop: *const BrwPopulation, path: *const c_char) -> BrwStatus {
    guard(|| Ok(deref(pop, "pop")?.0.write_snapshot(Path::new(str_arg(path, "path")?))?))
}

/// # Safety
/// `pop` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn brw_population_free(pop: *mut BrwPopulation) {
    if !pop.is_null() {
        drop(Box::from_raw(pop));
    }
}

/// Last generation index and its particle count.
///
/// # Safety
/// `pop` must be a live handle; `generation` and `size` writable.
#[no_mangle]
pub unsafe extern "C" fn brw_population_shape(pop: *const BrwPopulation, generation: *mut usize, size: *mut usize) -> BrwStatus {
    guard(|| {
        let p = &deref(pop, "pop")?.0;
        write(generation, p.generation(), "generation")?;
        write(size, p.last().len(), "size")
    })
}

/// Copy up to `len` last-generation positions into `buf`; `written` receives
/// the number copied.
///
/// # Safety
/// `pop` must be a live handle, `buf` valid for `len` writes, `written` writable.
#[no_mangle]
pub unsafe extern "C" fn brw_population_positions(pop: *const BrwPopulation, buf: *mut f64, len: usize, written: *mut usize) -> BrwStatus {
    guard(|| {
        let x = &deref(pop, "pop")?.0.last().positions;
        let k = x.len().min(len);
        if k > 0 {
            if buf.is_null() {
                return Err(Fail(BrwStatus::NullPointer, "buf is null".into()));
            }
            std::ptr::copy_nonoverlapping(x.as_ptr(), buf, k);
        }
        write(written, k, "written")
    })
}

/// `log W_{n,β}` and the derivative martingale `D_n` of the last generation.
///
/// # Safety
/// `pop` must be a live handle; `log_w` and `d` writable.
#[no_mangle]
pub unsafe extern "C" fn brw_population_readout(pop: *const BrwPopulation, beta: f64, log_w: *mut f64, d: *mut f64) -> BrwStatus {
    guard(|| {
        let r = deref(pop, "pop")?.0.readout(beta, None, None);
        write(log_w, r.log_w, "log_w")?;
        write(d, r.d, "d")
    })
}

/// `μ_{n,β}(F)` on an `m`-point grid with scaling `σ√n`. A finite
/// `psi_prime` applies the drift adjustment; pass NaN for none.
///
/// # Safety
/// `pop` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn brw_gibbs_trajectory_mean(
    pop: *const BrwPopulation,
    beta: f64,
    functional: BrwFunctional,
    m: usize,
    sigma: f64,
    psi_prime: f64,
    out: *mut f64,
) -> BrwStatus {
    guard(|| {
        let p = &deref(pop, "pop")?.0;
        if m < 2 || !(sigma > 0.0) {
            return Err(Fail(BrwStatus::InvalidArgument, "need m >= 2 and sigma > 0".into()));
        }
        let mode = if psi_prime.is_nan() { TrajectoryMode::Plain { sigma } } else { TrajectoryMode::Drift { sigma, psi_prime } };
        let g = gibbs::gibbs(p, beta)?;
        write(out, gibbs::trajectory_mean(p, &g, functional.into(), m, mode)?, "out")
    })
}

/// Exact `ω_{n,β}([ε, 1])`.
///
/// # Safety
/// `pop` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn brw_gibbs_overlap_mass(pop: *const BrwPopulation, beta: f64, eps: f64, out: *mut f64) -> BrwStatus {
    guard(|| {
        let p = &deref(pop, "pop")?.0;
        let g = gibbs::gibbs(p, beta)?;
        write(out, gibbs::overlap_mass(p, &g, eps)?, "out")
    })
}

/// Gibbs mass of `[lo, hi]` (infinite bounds allowed).
///
/// # Safety
/// `pop` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn brw_gibbs_mass_in_window(pop: *const BrwPopulation, beta: f64, lo: f64, hi: f64, out: *mut f64) -> BrwStatus {
    guard(|| {
        let p = &deref(pop, "pop")?.0;
        let g = gibbs::gibbs(p, beta)?;
        write(out, gibbs::mass_in_window(p, &g, lo, hi), "out")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(brw_last_error_message()) }.to_string_lossy().into_owned()
    }

    fn law(name: &str) -> *mut BrwLaw {
        let c = CString::new(name).unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { brw_law_new(c.as_ptr(), &mut out) }, BrwStatus::Ok);
        out
    }

    #[test]
    fn law_round_trip() {
        let l = law("gaussian_dyadic");
        let (mut psi, mut s2) = (f64::NAN, f64::NAN);
        unsafe {
            assert_eq!(brw_law_log_laplace(l, 0.5, &mut psi), BrwStatus::Ok);
            assert_eq!(brw_law_sigma_sq(l, &mut s2), BrwStatus::Ok);
            brw_law_free(l);
        }
        assert!((psi - 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((s2 - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(last_error(), "");
    }

    #[test]
    fn errors_carry_codes_and_messages() {
        let c = CString::new("no_such_law").unwrap();
        let mut out = ptr::null_mut();
        let s = unsafe { brw_law_new(c.as_ptr(), &mut out) };
        assert_eq!(s, BrwStatus::Io);
        assert!(out.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(unsafe { brw_law_new(ptr::null(), &mut out) }, BrwStatus::NullPointer);
        let mut v = 0.0;
        assert_eq!(unsafe { brw_law_log_laplace(ptr::null(), 1.0, &mut v) }, BrwStatus::NullPointer);
        let l = law("gaussian_dyadic");
        assert_eq!(unsafe { brw_law_log_laplace(l, -1.0, &mut v) }, BrwStatus::InvalidArgument);
        let mut pop = ptr::null_mut();
        assert_eq!(unsafe { brw_population_simulate(l, 30, f64::NAN, 1000, 1, &mut pop) }, BrwStatus::PopulationExplosion);
        unsafe { brw_law_free(l) };
        unsafe { brw_law_free(ptr::null_mut()) };
    }

    #[test]
    fn population_and_gibbs() {
        let l = law("gaussian_dyadic");
        let mut pop = ptr::null_mut();
        assert_eq!(unsafe { brw_population_simulate(l, 8, f64::NAN, 1 << 20, 3, &mut pop) }, BrwStatus::Ok);
        let (mut g, mut k) = (0, 0);
        unsafe { brw_population_shape(pop, &mut g, &mut k) };
        assert_eq!((g, k), (8, 256));
        let mut buf = vec![0.0; 300];
        let mut written = 0;
        unsafe { brw_population_positions(pop, buf.as_mut_ptr(), buf.len(), &mut written) };
        assert_eq!(written, 256);
        let (mut lw, mut d) = (0.0, 0.0);
        unsafe { brw_population_readout(pop, 1.0, &mut lw, &mut d) };
        let direct: f64 = buf[..256].iter().map(|x| (-x).exp()).sum();
        assert!((lw - direct.ln()).abs() < 1e-12);
        let (mut one, mut mass, mut ov) = (0.0, 0.0, 0.0);
        unsafe {
            brw_gibbs_trajectory_mean(pop, 1.0, BrwFunctional::One, 8, 1.0, f64::NAN, &mut one);
            brw_gibbs_mass_in_window(pop, 1.0, f64::NEG_INFINITY, f64::INFINITY, &mut mass);
            brw_gibbs_overlap_mass(pop, 0.0, 0.25, &mut ov);
        }
        assert!((one - 1.0).abs() < 1e-12 && (mass - 1.0).abs() < 1e-12);
        assert!((ov - 0.25).abs() < 1e-12);

        let dir = tempfile_dir();
        let path = CString::new(dir.join("t.brw").to_str().unwrap()).unwrap();
        let mut back = ptr::null_mut();
        unsafe {
            assert_eq!(brw_population_save(pop, path.as_ptr()), BrwStatus::Ok);
            assert_eq!(brw_population_load(path.as_ptr(), &mut back), BrwStatus::Ok);
            assert_eq!((*back).0, (*pop).0);
            brw_population_free(back);
            brw_population_free(pop);
            brw_law_free(l);
        }
        std::fs::remove_dir_all(dir).unwrap();
    }

    fn tempfile_dir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("brwlab-ffi-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn walk_survival() {
        let l = law("two_config");
        let mut w = ptr::null_mut();
        let (mut v, mut se) = (0.0, 0.0);
        unsafe {
            assert_eq!(brw_walk_new(l, &mut w), BrwStatus::Ok);
            assert_eq!(brw_walk_survival(w, 0.0, 1, 20_000, 5, &mut v, &mut se), BrwStatus::Ok);
            brw_walk_free(w);
            brw_law_free(l);
        }
        // One step of the tilted two-point walk: P(S_1 ≥ 0) is the mass of the upper atom.
        assert!(v > 0.0 && v < 1.0 && se > 0.0);
        assert!((brw_meander_laplace(0.0) - 1.0).abs() < 1e-15);
        let ver = unsafe { CStr::from_ptr(brw_version()) }.to_str().unwrap();
        assert_eq!(ver, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn header_declares_the_api() {
        let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/brwlab.h")).unwrap();
        for name in ["brw_law_new", "brw_population_simulate", "brw_gibbs_trajectory_mean", "brw_last_error_message", "BrwStatus", "BrwPopulation"] {
            assert!(header.contains(name), "{name}");
        }
    }
}
